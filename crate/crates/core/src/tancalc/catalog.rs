//! Identity catalog: each entry evaluates both sides of a tangential calculus
//! identity independently and reports relative residuals.

use serde::{Deserialize, Serialize};

use super::families::{FieldFamily, IdentityFields};
use super::sampling::{radical_inverse, surface_samples};
use super::{geom_fields, rel_residual, CalcError, Calculus, FdSteps, Field, VectorField, NESTED_NOISE_WARN};
use crate::geometry::{principal_curvatures, weingarten_pinv, LevelSetSurface, Mat3, TimeLaw, Vec3};
use crate::mesh::{LiftedQuadrature, SurfaceMesh};
use crate::par;

/// Catalog entries; the serialized names are the stable identifiers used in
/// configuration files and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IdentityId {
    #[serde(rename = "PRODUCT_RULES")]
    ProductRules,
    #[serde(rename = "RES1")]
    ProjectedDivTransposedGrad,
    #[serde(rename = "RES1A")]
    NormalDivGrad,
    #[serde(rename = "NEWRES")]
    WeingartenDivergence,
    #[serde(rename = "RES2")]
    GaussCurvatureForm,
    #[serde(rename = "ID1")]
    NormalRate,
    #[serde(rename = "ID1A")]
    ProjectorRate,
    #[serde(rename = "AUX1")]
    WeingartenTransport,
    #[serde(rename = "INEXT")]
    Inextensibility,
    #[serde(rename = "DIVPI")]
    PressureDivergence,
    #[serde(rename = "IDFUND")]
    StrainSplit,
    #[serde(rename = "PDIV_ES")]
    StrainDivergence,
    #[serde(rename = "AUX450")]
    InextensibleStrainDivergence,
    #[serde(rename = "CAYLEY")]
    CayleyHamilton,
    #[serde(rename = "IDDD")]
    WeingartenPseudoInverse,
    #[serde(rename = "LEIBNIZ")]
    Leibniz,
    #[serde(rename = "STOKES_F")]
    ClosedSurfaceStokes,
}

impl IdentityId {
    pub const ALL: [IdentityId; 17] = [
        IdentityId::ProductRules,
        IdentityId::ProjectedDivTransposedGrad,
        IdentityId::NormalDivGrad,
        IdentityId::WeingartenDivergence,
        IdentityId::GaussCurvatureForm,
        IdentityId::NormalRate,
        IdentityId::ProjectorRate,
        IdentityId::WeingartenTransport,
        IdentityId::Inextensibility,
        IdentityId::PressureDivergence,
        IdentityId::StrainSplit,
        IdentityId::StrainDivergence,
        IdentityId::InextensibleStrainDivergence,
        IdentityId::CayleyHamilton,
        IdentityId::WeingartenPseudoInverse,
        IdentityId::Leibniz,
        IdentityId::ClosedSurfaceStokes,
    ];

    /// Stable identifier, as serialized.
    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }

    /// Identities that need an evolving surface.
    pub fn is_evolving(self) -> bool {
        matches!(self, IdentityId::NormalRate | IdentityId::ProjectorRate | IdentityId::Leibniz)
    }
}

/// Growth rate attached to static surfaces for the evolving identities.
pub const DEFAULT_GROWTH_RATE: f64 = 0.1;
/// Time at which pointwise evolving identities are evaluated.
pub const EVOLVING_SAMPLE_TIME: f64 = 0.5;
/// Hypothesis tolerance for tangential inputs.
pub const TANGENTIAL_TOL: f64 = 1e-8;
/// Hypothesis tolerance for the inextensibility constraint.
pub const INEXT_TOL: f64 = 1e-4;
/// Points whose smallest principal curvature is below this fraction of the
/// largest are skipped by the pseudo-inverse identity.
pub const PINV_CURVATURE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub identity_id: IdentityId,
    pub surface: LevelSetSurface,
    #[serde(default)]
    pub field_family: FieldFamily,
    pub samples: usize,
    /// First-derivative step; all spatial steps are rescaled proportionally.
    #[serde(default)]
    pub fd_step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResidual {
    pub index: usize,
    /// Sample point, absent for integral identities sampled over fields.
    pub point: Option<[f64; 3]>,
    pub time: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheckReport {
    pub identity_id: IdentityId,
    pub surface: LevelSetSurface,
    pub field_family: FieldFamily,
    pub sample_count: usize,
    pub skipped: usize,
    pub max_rel_residual: f64,
    pub fd_step: f64,
    pub steps: FdSteps,
    pub warnings: Vec<String>,
    pub per_point: Vec<PointResidual>,
}

/// Outcome at one sample: residual (or `None` when the sample is skipped)
/// and the nested-difference noise estimate, when one applies.
type SampleOutcome = (Option<f64>, Option<f64>);

pub fn verify_identity(req: &VerifyRequest) -> Result<IdentityCheckReport, CalcError> {
    req.surface.validate()?;
    let surface = if req.identity_id.is_evolving() && req.surface.time_law.is_none() {
        req.surface.clone().with_time_law(TimeLaw::LinearScale { rate: DEFAULT_GROWTH_RATE })
    } else {
        req.surface.clone()
    };
    let mut kernel = Calculus::new(&surface);
    if let Some(h) = req.fd_step {
        if !(h > 0.0) {
            return Err(CalcError::HypothesisViolated("fd_step must be positive".into()));
        }
        kernel.steps = kernel.steps.scaled(h / kernel.steps.first);
    }
    let fields = IdentityFields::build(&surface, req.field_family, req.seed)?;
    verify_with_fields(req.identity_id, &kernel, &fields, req.field_family, req.samples, req.seed)
}

/// Runs one identity with caller-supplied fields.
pub fn verify_with_fields(
    id: IdentityId,
    kernel: &Calculus,
    fields: &IdentityFields,
    family: FieldFamily,
    samples: usize,
    seed: u64,
) -> Result<IdentityCheckReport, CalcError> {
    let surface = kernel.surface.as_ref().clone();
    let per_point: Vec<(PointResidual, Option<f64>)> = match id {
        IdentityId::Leibniz => leibniz(kernel, fields, samples, seed)?,
        IdentityId::ClosedSurfaceStokes => stokes_formula(kernel, family, samples, seed)?,
        _ => {
            let t = if id.is_evolving() { EVOLVING_SAMPLE_TIME } else { 0.0 };
            let points = surface_samples(&surface, samples, seed, t)?;
            let outcomes = par::map_indexed(points.len(), |i| pointwise(id, kernel, fields, &points[i], t));
            let mut out = Vec::with_capacity(points.len());
            for (i, o) in outcomes.into_iter().enumerate() {
                let (res, noise) = o?;
                if let Some(r) = res {
                    let point = Some(points[i].into());
                    out.push((PointResidual { index: i, point, time: t, residual: r }, noise));
                }
            }
            out
        }
    };
    let noisy = per_point.iter().filter(|(_, n)| n.is_some_and(|v| v > NESTED_NOISE_WARN)).count();
    let mut warnings = Vec::new();
    if noisy > 0 {
        warnings.push(format!(
            "nested difference noise estimate above {NESTED_NOISE_WARN:e} at {noisy} of {} samples",
            per_point.len()
        ));
    }
    let per_point: Vec<PointResidual> = per_point.into_iter().map(|(p, _)| p).collect();
    let max_rel_residual = per_point.iter().map(|p| p.residual).fold(0.0, f64::max);
    Ok(IdentityCheckReport {
        identity_id: id,
        surface,
        field_family: family,
        sample_count: per_point.len(),
        skipped: samples - per_point.len(),
        max_rel_residual,
        fd_step: kernel.steps.first,
        steps: kernel.steps,
        warnings,
        per_point,
    })
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

fn require_tangential(v: &VectorField, n: &Vec3, x: &Vec3, t: f64) -> Result<Vec3, CalcError> {
    let val = v.at(x, t)?;
    let off = n.dot(&val).abs();
    if off > TANGENTIAL_TOL * (1.0 + val.norm()) {
        return Err(CalcError::HypothesisViolated(format!("field is not tangential: |v.n| = {off:e}")));
    }
    Ok(val)
}

/// Flow of the evolving surface: radial growth plus a tangential field plus
/// a term vanishing on the surface that gives the flow normal derivatives.
fn evolving_flow(surface: &LevelSetSurface, fields: &IdentityFields) -> VectorField {
    let s = surface.clone();
    let (tangent, ambient) = (fields.tangent_a.clone(), fields.ambient.clone());
    Field::given_fallible(move |x, t| {
        let radial = (x - s.center()) * (s.scale_rate(t) / s.scale(t));
        Ok(radial + tangent.at(x, t)? + ambient.value(x) * s.level(x, t))
    })
}

fn pointwise(id: IdentityId, k: &Calculus, f: &IdentityFields, x: &Vec3, t: f64) -> Result<SampleOutcome, CalcError> {
    let s = k.surface.as_ref();
    let g = s.geometry_at(x, t)?;
    let (n, p, h) = (g.normal, g.projector, g.weingarten);
    let res = match id {
        IdentityId::ProductRules => {
            let (fa, fb) = (&f.scalar_a, &f.scalar_b);
            let u = require_tangential(&f.tangent_a, &n, x, t)?;
            let v = require_tangential(&f.tangent_b, &n, x, t)?;
            let (va, vb) = (fa.at(x, t)?, fb.at(x, t)?);
            let ga = k.grad_surface_scalar(fa, x, t)?;
            let gb = k.grad_surface_scalar(fb, x, t)?;
            let gu = k.grad_surface_vector(&f.tangent_a, x, t)?;
            let gv = k.grad_surface_vector(&f.tangent_b, x, t)?;
            let l1 = k.grad_surface_scalar(&fa.times(fb), x, t)?;
            let l2 = k.grad_surface_scalar(&f.tangent_a.dot(&f.tangent_b), x, t)?;
            let l3 = k.grad_surface_vector(&fa.times_vector(&f.tangent_a), x, t)?;
            max_of(&[
                rel_residual(l1, ga * vb + gb * va),
                rel_residual(l2, gu.transpose() * v + gv.transpose() * u),
                rel_residual(l3, gu * va + p * u * ga.transpose()),
            ])
        }
        IdentityId::ProjectedDivTransposedGrad | IdentityId::GaussCurvatureForm => {
            let u = require_tangential(&f.tangent_a, &n, x, t)?;
            let l = k.nested_pdiv(&k.grad_field_transposed(&f.tangent_a), x, t)?;
            let grad_div = k.nested_grad(&k.div_field(&f.tangent_a), x, t)?;
            let r = if id == IdentityId::GaussCurvatureForm {
                grad_div + u * g.gauss
            } else {
                grad_div + (h * g.kappa - h * h) * u
            };
            rel_residual(l, r)
        }
        IdentityId::NormalDivGrad => {
            let v = &f.general;
            let q0 = n.dot(&k.nested_div(&k.grad_field_transposed(v), x, t)?);
            let q1 = n.dot(&k.nested_div(&k.grad_field(v), x, t)?);
            let q2 = -(h * k.grad_surface_vector(v, x, t)?).trace();
            let q3 = -(h * k.grad_surface_vector(&f.tangent_a, x, t)?).trace()
                - f.normal_part.at(x, t)? * (h * h).trace();
            max_of(&[rel_residual(q0, q1), rel_residual(q0, q2), rel_residual(q0, q3)])
        }
        IdentityId::WeingartenDivergence => {
            let l = k.nested_div(&geom_fields::weingarten(s), x, t)?;
            let r = k.nested_grad(&geom_fields::kappa(s), x, t)? - n * (h * h).trace();
            rel_residual(l, r)
        }
        IdentityId::NormalRate | IdentityId::ProjectorRate => {
            let flow = evolving_flow(s, f);
            let u = flow.at(x, t)?;
            let grad_u = k.ambient_grad_vector(&flow, x, t, k.steps.first)?;
            if id == IdentityId::NormalRate {
                let l = k.material_derivative(&geom_fields::normal(s), &flow, x, t)?;
                let u_n = flow.dot(&geom_fields::normal(s));
                let r1 = h * (p * u) - k.grad_surface_scalar(&u_n, x, t)?;
                let r2 = -(p * grad_u.transpose() * n);
                max_of(&[rel_residual(l, r1), rel_residual(l, r2)])
            } else {
                let l = k.material_derivative(&geom_fields::projector(s), &flow, x, t)?;
                let q = Mat3::identity() - p;
                rel_residual(l, p * grad_u.transpose() * q + q * grad_u * p)
            }
        }
        IdentityId::WeingartenTransport => {
            let u = require_tangential(&f.tangent_a, &n, x, t)?;
            let grad = k.ambient_grad_vector(&f.tangent_a, x, t, k.steps.first)?;
            rel_residual(h * u, -(grad.transpose() * n))
        }
        IdentityId::Inextensibility => {
            require_tangential(&f.tangent_a, &n, x, t)?;
            let l = k.div_surface_vector(&f.tangent_a, x, t)?;
            rel_residual(l, -f.inext_normal.at(x, t)? * g.kappa)
        }
        IdentityId::PressureDivergence => {
            let pi = &f.scalar_a;
            let a = pi.times_matrix(&geom_fields::projector(s));
            let l = k.div_surface_matrix(&a, x, t)?;
            let r = k.grad_surface_scalar(pi, x, t)? - n * (pi.at(x, t)? * g.kappa);
            rel_residual(l, r)
        }
        IdentityId::StrainSplit => {
            require_tangential(&f.tangent_a, &n, x, t)?;
            let l = k.rate_of_strain(&f.general, x, t)?;
            let r = k.rate_of_strain(&f.tangent_a, x, t)? + h * f.normal_part.at(x, t)?;
            rel_residual(l, r)
        }
        IdentityId::StrainDivergence => {
            let u = require_tangential(&f.tangent_a, &n, x, t)?;
            let u_n = f.normal_part.at(x, t)?;
            let l = k.nested_pdiv(&k.strain_field(&f.general), x, t)?;
            let (lap, noise) = k.bochner_laplacian_checked(&f.tangent_a, x, t)?;
            let grad_div = k.nested_grad(&k.div_field(&f.tangent_a), x, t)?;
            let grad_kappa = k.nested_grad(&geom_fields::kappa(s), x, t)?;
            let grad_un = k.grad_surface_scalar(&f.normal_part, x, t)?;
            let r = (lap + u * g.gauss + grad_div) * 0.5 + grad_kappa * u_n + h * grad_un;
            return Ok((Some(rel_residual(l, r)), Some(noise)));
        }
        IdentityId::InextensibleStrainDivergence => {
            let u = require_tangential(&f.tangent_a, &n, x, t)?;
            let div = k.div_surface_vector(&f.tangent_a, x, t)?;
            let constraint = rel_residual(div, -f.inext_normal.at(x, t)? * g.kappa);
            if constraint > INEXT_TOL {
                return Err(CalcError::HypothesisViolated(format!(
                    "inextensibility residual {constraint:e} exceeds {INEXT_TOL:e}"
                )));
            }
            let l = k.nested_pdiv(&k.strain_field(&f.inextensible), x, t)? * 2.0;
            let (lap, noise) = k.bochner_laplacian_checked(&f.tangent_a, x, t)?;
            let grad_div = k.nested_grad(&k.div_field(&f.tangent_a), x, t)?;
            let grad_un = k.grad_surface_scalar(&f.inext_normal, x, t)?;
            let r = lap + u * g.gauss - grad_div - (p * g.kappa - h) * grad_un * 2.0;
            return Ok((Some(rel_residual(l, r)), Some(noise)));
        }
        IdentityId::CayleyHamilton => rel_residual(h * h + p * g.gauss, h * g.kappa),
        IdentityId::WeingartenPseudoInverse => {
            let pc = principal_curvatures(&g);
            let smallest = pc.values[0].abs().min(pc.values[1].abs());
            if smallest < PINV_CURVATURE_FLOOR * h.norm() {
                return Ok((None, None));
            }
            rel_residual(p * g.kappa - h, weingarten_pinv(&g) * g.gauss)
        }
        IdentityId::Leibniz | IdentityId::ClosedSurfaceStokes => unreachable!("integral identities"),
    };
    Ok((Some(res), None))
}

/// Mesh level used by the integral identities.
fn integral_mesh(surface: &LevelSetSurface) -> Result<SurfaceMesh, CalcError> {
    let level = match surface.kind {
        crate::geometry::SurfaceKind::Torus { .. } => 2,
        _ => 4,
    };
    Ok(SurfaceMesh::generate(surface, level)?)
}

/// Time derivative of the integral of a time-dependent scalar against the
/// integral of its material derivative plus divergence term, at sampled times.
fn leibniz(
    k: &Calculus,
    fields: &IdentityFields,
    samples: usize,
    seed: u64,
) -> Result<Vec<(PointResidual, Option<f64>)>, CalcError> {
    let s = k.surface.as_ref();
    let mesh = integral_mesh(s)?;
    let flow = evolving_flow(s, fields);
    let (fa, fb) = (fields.scalar_a.clone(), fields.scalar_b.clone());
    let f = Field::given_fallible(move |x, t| Ok(fa.at(x, 0.0)? + t * fb.at(x, 0.0)?));
    let dt = k.steps.time;
    let offset = radical_inverse(seed + 1, 5);
    let sample = |i: usize| -> Result<(PointResidual, Option<f64>), CalcError> {
        let t = (radical_inverse(i as u64 + 1, 2) + offset).fract();
        let plus = LiftedQuadrature::build(&mesh, t + dt)?.integrate(&f)?;
        let minus = LiftedQuadrature::build(&mesh, t - dt)?.integrate(&f)?;
        let lhs = (plus - minus) / (2.0 * dt);
        let quad = LiftedQuadrature::build(&mesh, t)?;
        let rhs = quad.integrate_with(|q| {
            let fdot = k.material_derivative(&f, &flow, &q.point, t)?;
            Ok(fdot + f.at(&q.point, t)? * k.div_surface_vector(&flow, &q.point, t)?)
        })?;
        Ok((PointResidual { index: i, point: None, time: t, residual: rel_residual(lhs, rhs) }, None))
    };
    par::map_indexed(samples, sample).into_iter().collect()
}

/// Positive and negative parts of the integrated surface divergence of
/// randomized tangential fields, which must cancel on a closed surface.
fn stokes_formula(
    k: &Calculus,
    family: FieldFamily,
    samples: usize,
    seed: u64,
) -> Result<Vec<(PointResidual, Option<f64>)>, CalcError> {
    let s = k.surface.as_ref();
    let quad = LiftedQuadrature::build(&integral_mesh(s)?, 0.0)?;
    par::map_indexed(samples, |i| {
        let fields = IdentityFields::build(s, family, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))?;
        let (mut pos, mut neg) = (0.0, 0.0);
        for q in quad.iter() {
            let d = k.div_surface_vector(&fields.tangent_a, &q.point, 0.0)?;
            pos += q.weight * d.max(0.0);
            neg += q.weight * (-d).max(0.0);
        }
        Ok((PointResidual { index: i, point: None, time: 0.0, residual: rel_residual(pos, neg) }, None))
    })
    .into_iter()
    .collect()
}

/// Checks of the whole catalog on one surface.
pub fn verify_catalog(
    surface: &LevelSetSurface,
    family: FieldFamily,
    samples: usize,
    seed: u64,
) -> Result<Vec<IdentityCheckReport>, CalcError> {
    IdentityId::ALL
        .iter()
        .map(|&id| {
            verify_identity(&VerifyRequest {
                identity_id: id,
                surface: surface.clone(),
                field_family: family,
                samples,
                fd_step: None,
                seed,
            })
        })
        .collect()
}
