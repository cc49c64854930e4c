use criterion::{criterion_group, criterion_main, Criterion};
use tansurf::assembly::{assemble_a, FESpaces, FormVariant};
use tansurf::mesh::{LiftedQuadrature, SurfaceMesh};
use tansurf::par;
use tansurf::tancalc::catalog::{verify_identity, IdentityId, VerifyRequest};
use tansurf::LevelSetSurface;

fn assembly(c: &mut Criterion) {
    let surface = LevelSetSurface::sphere(1.0);
    let mesh = SurfaceMesh::generate(&surface, 3).unwrap();
    let quad = LiftedQuadrature::build(&mesh, 0.0).unwrap();
    let spaces = FESpaces::new(&mesh).unwrap();
    let variant = FormVariant::AHatTau { tau: 100.0 };
    let mut group = c.benchmark_group("assemble_full_form_level3");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| assemble_a(&spaces, &quad, 1.0, variant).unwrap()));
    group.bench_function("sequential", |b| {
        b.iter(|| par::sequential(|| assemble_a(&spaces, &quad, 1.0, variant).unwrap()))
    });
    group.finish();
}

fn identities(c: &mut Criterion) {
    let req = VerifyRequest {
        identity_id: IdentityId::StrainDivergence,
        surface: LevelSetSurface::torus(2.0, 0.5),
        field_family: Default::default(),
        samples: 200,
        fd_step: None,
        seed: 0,
    };
    let mut group = c.benchmark_group("nested_identity_200_samples");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| verify_identity(&req).unwrap()));
    group.bench_function("sequential", |b| b.iter(|| par::sequential(|| verify_identity(&req).unwrap())));
    group.finish();
}

criterion_group!(benches, assembly, identities);
criterion_main!(benches);
