use faer::Mat;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tansurf::assembly::{self, FESpaces, FormVariant, Formulation, ProblemParams, SaddleSystem};
use tansurf::experiments::{ManufacturedCase, SolutionFamily};
use tansurf::geometry::{principal_curvatures, weingarten_pinv};
use tansurf::linalg;
use tansurf::mesh::{LiftedQuadrature, SurfaceMesh};
use tansurf::solver::{self, InfSupSpace};
use tansurf::tancalc::catalog::{verify_identity, IdentityId, VerifyRequest};
use tansurf::tancalc::families::QuadraticVector;
use tansurf::tancalc::sampling::surface_samples;
use tansurf::tancalc::{Calculus, VectorField};
use tansurf::{LevelSetSurface, Mat3, Vec3};

fn surface_strategy() -> impl Strategy<Value = LevelSetSurface> {
    prop_oneof![
        (0.5..2.0f64).prop_map(LevelSetSurface::sphere),
        (1.5..3.0f64, 0.3..0.8f64).prop_map(|(r, a)| LevelSetSurface::torus(r, a)),
        (0.7..1.3f64, 0.6..1.2f64, 0.5..1.0f64).prop_map(|(a, b, c)| LevelSetSurface::ellipsoid(a, b, c)),
    ]
}

fn point_on(surface: &LevelSetSurface, u: f64, v: f64) -> Vec3 {
    surface.parametric_point(std::f64::consts::TAU * u, 2.0 * v - 1.0).expect("parametric point")
}

fn spectral_norm(m: &Mat3) -> f64 {
    m.singular_values().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projector_normal_and_weingarten_invariants(surface in surface_strategy(), u in 0.0..1.0f64, v in 0.02..0.98f64) {
        let x = point_on(&surface, u, v);
        let g = surface.geometry_at(&x, 0.0).unwrap();
        let p = g.projector;
        let h = g.weingarten;
        prop_assert!((p * p - p).norm() <= 1e-12);
        prop_assert!((p * g.normal).norm() <= 1e-12);
        prop_assert!((g.normal.norm() - 1.0).abs() <= 1e-12);
        let scale = h.norm().max(1.0);
        prop_assert!((h - h.transpose()).norm() <= 1e-6 * scale);
        prop_assert!((h * g.normal).norm() <= 1e-6 * scale);
        let hn = spectral_norm(&h);
        prop_assert!(spectral_norm(&(h * h - h * g.kappa + p * g.gauss)) <= 1e-6 * hn * hn);
        let pc = principal_curvatures(&g);
        if pc.values[0].abs().min(pc.values[1].abs()) > 1e-3 * hn {
            prop_assert!(spectral_norm(&(p * g.kappa - h - weingarten_pinv(&g) * g.gauss)) <= 1e-6 * hn);
        }
    }

    #[test]
    fn closest_point_is_idempotent_and_minimal(surface in surface_strategy(), u in 0.0..1.0f64, v in 0.05..0.95f64, offset in -0.1..0.1f64) {
        let p0 = point_on(&surface, u, v);
        let n = surface.normal(&p0, 0.0).unwrap();
        let x = p0 + n * (offset * surface.reach(0.0));
        let p = surface.closest_point(&x, 0.0).unwrap();
        let again = surface.closest_point(&p, 0.0).unwrap();
        prop_assert!((again - p).norm() <= 1e-10);
        let best = (x - p).norm();
        for q in surface_samples(&surface, 1000, 1, 0.0).unwrap() {
            prop_assert!((x - q).norm() >= best - 1e-9);
        }
    }

    #[test]
    fn surface_derivatives_are_tangential_and_extension_independent(surface in surface_strategy(), seed in 0u64..1000, u in 0.0..1.0f64, v in 0.05..0.95f64) {
        let x = point_on(&surface, u, v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = QuadraticVector::random(&mut rng, surface.center(), surface.diameter());
        let given: VectorField = VectorField::given(move |x, _| w.value(x));
        let extended = given.extended_from(&surface);
        let k = Calculus::new(&surface);
        let p = surface.geometry_at(&x, 0.0).unwrap().projector;
        let tangential = |m: &Mat3| (m - p * m * p).norm() <= 1e-6 * m.norm() + 1e-12;
        let grad = k.grad_surface_vector(&given, &x, 0.0).unwrap();
        let grad_ext = k.grad_surface_vector(&extended, &x, 0.0).unwrap();
        prop_assert!(tangential(&grad));
        prop_assert!(tangential(&k.rate_of_strain(&given, &x, 0.0).unwrap()));
        prop_assert!((grad - grad_ext).norm() <= 1e-6 * grad.norm().max(1.0));
        let scalar = given.map(|v| v.x * v.y + v.z);
        let gs = k.grad_surface_scalar(&scalar, &x, 0.0).unwrap();
        let gs_ext = k.grad_surface_scalar(&scalar.extended_from(&surface), &x, 0.0).unwrap();
        let n = surface.normal(&x, 0.0).unwrap();
        prop_assert!(gs.dot(&n).abs() <= 1e-6 * gs.norm() + 1e-12);
        prop_assert!((gs - gs_ext).norm() <= 1e-6 * gs.norm().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pointwise_identities_hold_for_random_fields(seed in 0u64..10_000, torus in any::<bool>()) {
        let surface = if torus { LevelSetSurface::torus(2.0, 0.5) } else { LevelSetSurface::ellipsoid(1.0, 0.8, 0.6) };
        for id in [IdentityId::WeingartenTransport, IdentityId::StrainSplit, IdentityId::PressureDivergence, IdentityId::CayleyHamilton] {
            let req = VerifyRequest { identity_id: id, surface: surface.clone(), field_family: Default::default(), samples: 16, fd_step: None, seed };
            let report = verify_identity(&req).unwrap();
            prop_assert!(report.max_rel_residual <= 1e-4, "{id:?}: {}", report.max_rel_residual);
        }
    }

    #[test]
    fn velocity_forms_are_exactly_symmetric(tau in 1.0..1e6f64, mu in 0.1..10.0f64) {
        let mesh = SurfaceMesh::generate(&LevelSetSurface::torus(2.0, 0.5), 0).unwrap();
        let quad = LiftedQuadrature::build(&mesh, 0.0).unwrap();
        let spaces = FESpaces::new(&mesh).unwrap();
        for variant in [FormVariant::ATau { tau }, FormVariant::AHatTau { tau }] {
            prop_assert_eq!(assembly::assemble_a(&spaces, &quad, mu, variant).unwrap().asymmetry(), 0.0);
        }
    }
}

#[test]
fn halving_the_step_quarters_the_residual() {
    let surface = LevelSetSurface::torus(2.0, 0.5);
    let residual = |step: f64| {
        let req = VerifyRequest {
            identity_id: IdentityId::WeingartenTransport,
            surface: surface.clone(),
            field_family: Default::default(),
            samples: 32,
            fd_step: Some(step),
            seed: 0,
        };
        verify_identity(&req).unwrap().max_rel_residual
    };
    let ratio = residual(0.04) / residual(0.02);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

fn dense_eigenvalues(a: &Mat<f64>) -> Vec<f64> {
    linalg::generalized_eigenvalues(a, &Mat::identity(a.nrows(), a.ncols())).unwrap()
}

#[test]
fn tangential_forms_are_semidefinite_with_small_kernel() {
    for (surface, level) in [(LevelSetSurface::sphere(1.0), 1), (LevelSetSurface::torus(2.0, 0.5), 0)] {
        let mesh = SurfaceMesh::generate(&surface, level).unwrap();
        let quad = LiftedQuadrature::build(&mesh, 0.0).unwrap();
        let spaces = FESpaces::new(&mesh).unwrap();
        let a = assembly::assemble_a(&spaces, &quad, 1.0, FormVariant::ATangential).unwrap();
        let scale = a.max_abs();
        assert!(dense_eigenvalues(&a.to_dense())[0] >= -1e-10 * scale);
        let q = spaces.tangential_basis().unwrap();
        let a_tau = assembly::assemble_a(&spaces, &quad, 1.0, FormVariant::ATau { tau: 10.0 }).unwrap();
        let reduced = q.transpose().matmul(&a_tau).matmul(&q);
        let ev = dense_eigenvalues(&reduced.to_dense());
        let scale = reduced.max_abs();
        assert!(ev[0] >= -1e-10 * scale);
        let kernel = ev.iter().filter(|&&e| e <= 1e-10 * scale).count();
        assert!(kernel <= surface.killing_axes().len(), "kernel dimension {kernel}");
    }
}

#[test]
fn full_form_is_coercive_above_the_threshold() {
    let surface = LevelSetSurface::sphere(1.0);
    let mu = 1.0;
    let tau = 2.5 * mu * surface.max_curvature().powi(2);
    for level in 0..3 {
        let mesh = SurfaceMesh::generate(&surface, level).unwrap();
        let quad = LiftedQuadrature::build(&mesh, 0.0).unwrap();
        let spaces = FESpaces::new(&mesh).unwrap();
        let a = assembly::assemble_a(&spaces, &quad, mu, FormVariant::AHatTau { tau }).unwrap().to_dense();
        let mass = assembly::assemble_velocity_gram(&spaces, &quad, false).to_dense();
        let rows = assembly::killing_constraints(&spaces, &quad);
        let smallest = linalg::constrained_generalized_eigenvalues(&a, &mass, &rows).unwrap()[0];
        assert!(smallest > 0.0, "level {level}: {smallest}");
    }
}

fn constants_of(mesh: &SurfaceMesh) -> (f64, f64) {
    let quad = LiftedQuadrature::build(mesh, 0.0).unwrap();
    let spaces = FESpaces::new(mesh).unwrap();
    let korn = solver::estimate_korn(&spaces, &quad).unwrap().constrained;
    let infsup = solver::estimate_infsup(&spaces, &quad, InfSupSpace::Tangential).unwrap();
    (korn, infsup)
}

/// Random vertex relabeling plus triangle reordering and cyclic rotation.
fn relabel(mesh: &SurfaceMesh, seed: u64) -> SurfaceMesh {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..mesh.vertices.len()).collect();
    perm.shuffle(&mut rng);
    let mut vertices = vec![Vec3::zeros(); perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        vertices[new] = mesh.vertices[old];
    }
    let mut triangles: Vec<[usize; 3]> = mesh
        .triangles
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let t = [perm[t[0]], perm[t[1]], perm[t[2]]];
            let r = k % 3;
            [t[r], t[(r + 1) % 3], t[(r + 2) % 3]]
        })
        .collect();
    triangles.shuffle(&mut rng);
    SurfaceMesh { surface: mesh.surface.clone(), vertices, triangles, level: mesh.level }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn constants_are_invariant_under_translation_and_relabeling(seed in 0u64..1000, shift in prop::array::uniform3(-1.0..1.0f64)) {
        let surface = LevelSetSurface::sphere(1.0);
        let mesh = SurfaceMesh::generate(&surface, 1).unwrap();
        let (korn, infsup) = constants_of(&mesh);
        let (korn_r, infsup_r) = constants_of(&relabel(&mesh, seed));
        prop_assert!((korn - korn_r).abs() <= 1e-8 && (infsup - infsup_r).abs() <= 1e-8);
        let moved = surface.clone().with_center(shift);
        let (korn_t, infsup_t) = constants_of(&SurfaceMesh::generate(&moved, 1).unwrap());
        prop_assert!((korn - korn_t).abs() <= 1e-8 && (infsup - infsup_t).abs() <= 1e-8);
    }

    #[test]
    fn velocity_is_invariant_under_joint_viscosity_and_load_scaling(s in 0.1..10.0f64) {
        let surface = LevelSetSurface::sphere(1.0);
        let mesh = SurfaceMesh::generate(&surface, 1).unwrap();
        let quad = LiftedQuadrature::build(&mesh, 0.0).unwrap();
        let spaces = FESpaces::new(&mesh).unwrap();
        let case = ManufacturedCase::new(&surface, 1.0, SolutionFamily::CurlCubic).unwrap();
        for (formulation, tau) in [(Formulation::Tangential, None), (Formulation::AugmentedFull, Some(100.0))] {
            let solve = |mu: f64, tau: Option<f64>, f: &VectorField| {
                let system = SaddleSystem::assemble(&spaces, &quad, ProblemParams { formulation, mu, tau }, f).unwrap();
                solver::solve_saddle(&system, &spaces, &quad, None).unwrap().1.velocity
            };
            let base = solve(1.0, tau, &case.f);
            let scaled = solve(s, tau.map(|t| t * s), &case.f.scaled(s));
            let size = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = base.iter().zip(&scaled).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            prop_assert!(diff <= 1e-10 * size, "{formulation:?}: {diff:e} vs {size:e}");
        }
    }
}

#[test]
fn manufactured_loads_are_orthogonal_to_rotations() {
    for surface in [LevelSetSurface::sphere(1.0), LevelSetSurface::torus(2.0, 0.5)] {
        for family in [SolutionFamily::CurlCubic, SolutionFamily::PressureOnly] {
            let case = ManufacturedCase::new(&surface, 1.0, family).unwrap();
            for pairing in case.killing_self_check(1).unwrap() {
                assert!(pairing <= 1e-8, "{:?} {family:?}: {pairing:e}", surface.kind);
            }
        }
    }
}
