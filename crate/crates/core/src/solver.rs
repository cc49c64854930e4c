//! Direct solution of the assembled saddle-point systems, error norms
//! against exact solutions, and dense estimators of the discrete Korn and
//! inf-sup constants.

use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    self, AssemblyError, FESpaces, Formulation, SaddleSystem, StrainRoute,
};
use crate::geometry::{Mat3, Vec3};
use crate::linalg::{self, BlockBuilder, CsrMatrix, FactorKind, LinalgError, SparseSolver};
use crate::mesh::{LiftedQuadrature, QuadPoint};
use crate::tancalc::{Calculus, CalcError, ScalarField, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error(
        "load violates the compatibility condition with rigid rotations: pairing {pairing:.3e} exceeds {tolerance:.0e}"
    )]
    InconsistentRhs { pairing: f64, tolerance: f64 },
    #[error("{dofs} degrees of freedom exceed the dense limit {limit}")]
    TooLarge { dofs: usize, limit: usize },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Calc(#[from] CalcError),
}

/// Largest admissible relative pairing of the load with a rotation field.
pub const CONSISTENCY_TOL: f64 = 1e-8;
/// Target relative residual of the refined direct solve.
pub const SOLVE_TOL: f64 = 1e-12;
/// Residual above which a direct solve is reported as singular.
pub const RESIDUAL_LIMIT: f64 = 1e-9;
/// Upper bound on the unknowns of a dense eigenproblem.
pub const DENSE_DOF_LIMIT: usize = 6000;

/// Exact velocity and pressure, both normally extended.
#[derive(Clone)]
pub struct ExactSolution {
    pub velocity: VectorField,
    pub pressure: ScalarField,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    /// H1 error of the tangential part of the discrete velocity.
    pub velocity_h1: f64,
    /// L2 error of the tangential part of the discrete velocity.
    pub velocity_l2: f64,
    /// H1 error of the full discrete velocity.
    pub full_velocity_h1: f64,
    /// L2 error of the pressure after removing the mean difference.
    pub pressure_l2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub korn: Option<KornEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infsup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub formulation: Formulation,
    pub velocity_dofs: usize,
    pub pressure_dofs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplier_dofs: Option<usize>,
    /// Unknowns of the factored block system.
    pub system_dofs: usize,
    pub residual_norm: f64,
    /// Largest violation of a constraint row, relative to the row scale.
    pub constraint_residual: f64,
    pub u_n_l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorNorms>,
    pub constants: Constants,
    /// Largest relative pairing of the load with a rotation field.
    pub killing_pairing: f64,
    /// Relative size of the rotation component removed from the load vector.
    pub rhs_correction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Nodal velocity values, three per node.
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    pub multiplier: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes from `rhs` the combination of constraint rows `rows` that makes
/// it orthogonal to every field in `fields`; returns the relative size of
/// the removed part.
pub fn orthogonalize_rhs(rhs: &mut [f64], rows: &[Vec<f64>], fields: &[Vec<f64>]) -> Result<f64, SolveError> {
    let k = rows.len();
    if k == 0 {
        return Ok(0.0);
    }
    let gram = Mat::from_fn(k, k, |i, j| dot(&fields[i], &rows[j]));
    let pairing = Mat::from_fn(k, 1, |i, _| dot(&fields[i], rhs));
    let lu = gram.partial_piv_lu();
    let alpha = faer::linalg::solvers::Solve::solve(&lu, &pairing);
    let before = norm(rhs);
    let mut removed = vec![0.0; rhs.len()];
    for (j, row) in rows.iter().enumerate() {
        for (r, c) in removed.iter_mut().zip(row) {
            *r += alpha[(j, 0)] * c;
        }
    }
    for (r, d) in rhs.iter_mut().zip(&removed) {
        *r -= d;
    }
    Ok(if before == 0.0 { 0.0 } else { norm(&removed) / before })
}

/// Velocity unknowns of a formulation: either all nodal components or the
/// nodal tangent coordinates.
struct VelocitySpace<'a> {
    basis: Option<&'a CsrMatrix>,
    basis_t: Option<CsrMatrix>,
}

impl<'a> VelocitySpace<'a> {
    fn new(basis: Option<&'a CsrMatrix>) -> Self {
        Self { basis, basis_t: basis.map(CsrMatrix::transpose) }
    }

    fn restrict_matrix(&self, a: &CsrMatrix) -> CsrMatrix {
        match (self.basis, &self.basis_t) {
            (Some(q), Some(qt)) => qt.matmul(&a.matmul(q)),
            _ => a.clone(),
        }
    }

    fn restrict_rows(&self, b: &CsrMatrix) -> CsrMatrix {
        match self.basis {
            Some(q) => b.matmul(q),
            None => b.clone(),
        }
    }

    fn restrict_vec(&self, v: &[f64]) -> Vec<f64> {
        match &self.basis_t {
            Some(qt) => qt.mul_vec(v),
            None => v.to_vec(),
        }
    }

    fn expand(&self, v: &[f64]) -> Vec<f64> {
        match self.basis {
            Some(q) => q.mul_vec(v),
            None => v.to_vec(),
        }
    }
}

/// Factors the full symmetric block system and solves it.
///
/// Unknowns are ordered as velocity, pressure, normal multiplier (if any),
/// rotation multipliers and the pressure gauge multiplier.
pub fn solve_saddle(
    system: &SaddleSystem,
    spaces: &FESpaces,
    quad: &LiftedQuadrature,
    exact: Option<&ExactSolution>,
) -> Result<(SolveReport, Solution), SolveError> {
    solve_saddle_with(system, spaces, quad, exact, FactorKind::SymmetricIndefinite)
}

/// As [`solve_saddle`] with a chosen factorization; the LU path serves as a
/// cross-check of the symmetric-indefinite one.
pub fn solve_saddle_with(
    system: &SaddleSystem,
    spaces: &FESpaces,
    quad: &LiftedQuadrature,
    exact: Option<&ExactSolution>,
    kind: FactorKind,
) -> Result<(SolveReport, Solution), SolveError> {
    let killing_pairing = system.killing_pairing.iter().copied().fold(0.0, f64::max);
    if killing_pairing > CONSISTENCY_TOL {
        return Err(SolveError::InconsistentRhs { pairing: killing_pairing, tolerance: CONSISTENCY_TOL });
    }
    let space = VelocitySpace::new(system.tangential_basis.as_ref());
    let a = space.restrict_matrix(&system.a);
    let b = space.restrict_rows(&system.b);
    let b_lambda = system.b_lambda.as_ref().map(|m| space.restrict_rows(m));
    let c_kill: Vec<Vec<f64>> = system.c_kill.iter().map(|c| space.restrict_vec(c)).collect();
    let fields: Vec<Vec<f64>> = system.killing_fields.iter().map(|z| space.restrict_vec(z)).collect();
    let mut rhs_u = space.restrict_vec(&system.rhs);
    let rhs_correction = orthogonalize_rhs(&mut rhs_u, &c_kill, &fields)?;

    let nu = a.nrows;
    let np = b.nrows;
    let nl = b_lambda.as_ref().map_or(0, |m| m.nrows);
    let nk = c_kill.len();
    let (off_p, off_l, off_k) = (nu, nu + np, nu + np + nl);
    let off_s = off_k + nk;
    let n = off_s + 1;

    let mut builder = BlockBuilder::default();
    builder.add_block(0, 0, &a);
    builder.add_symmetric_pair(off_p, 0, &b);
    if let Some(bl) = &b_lambda {
        builder.add_symmetric_pair(off_l, 0, bl);
    }
    let kill_rows = CsrMatrix::from_triplets(
        nk,
        nu,
        c_kill.iter().enumerate().flat_map(|(r, c)| c.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, v)| (r, j, *v))).collect(),
    );
    builder.add_symmetric_pair(off_k, 0, &kill_rows);
    let gauge = CsrMatrix::from_triplets(1, np, system.c_p.iter().enumerate().map(|(j, v)| (0, j, *v)).collect());
    builder.add_symmetric_pair(off_s, off_p, &gauge);
    let matrix = builder.build(n);

    let mut rhs = vec![0.0; n];
    rhs[..nu].copy_from_slice(&rhs_u);
    let factor = SparseSolver::new(&matrix, kind).map_err(|e| SolveError::SingularSystem(e.to_string()))?;
    let (x, residual_norm) = factor.solve(&rhs, SOLVE_TOL);
    if !x.iter().all(|v| v.is_finite()) || !(residual_norm <= RESIDUAL_LIMIT) {
        return Err(SolveError::SingularSystem(format!("relative residual {residual_norm:.3e}")));
    }

    let u_coords = &x[..nu];
    let velocity = space.expand(u_coords);
    let pressure = x[off_p..off_l].to_vec();
    let multiplier = (nl > 0).then(|| x[off_l..off_k].to_vec());

    let constraint_residual = constraint_violation(&b, b_lambda.as_ref(), &kill_rows, &system.c_p, u_coords, &pressure);
    let u_n_l2 = normal_l2(spaces, quad, &velocity);
    let errors = exact.map(|e| error_norms(spaces, quad, &velocity, &pressure, e)).transpose()?;

    let report = SolveReport {
        formulation: system.formulation(),
        velocity_dofs: nu,
        pressure_dofs: np,
        multiplier_dofs: (nl > 0).then_some(nl),
        system_dofs: n,
        residual_norm,
        constraint_residual,
        u_n_l2,
        errors,
        constants: Constants::default(),
        killing_pairing,
        rhs_correction,
    };
    Ok((report, Solution { velocity, pressure, multiplier }))
}

fn constraint_violation(
    b: &CsrMatrix,
    b_lambda: Option<&CsrMatrix>,
    kill: &CsrMatrix,
    c_p: &[f64],
    u: &[f64],
    p: &[f64],
) -> f64 {
    let scale = norm(u).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for m in std::iter::once(b).chain(b_lambda).chain(std::iter::once(kill)) {
        let r = m.mul_vec(u);
        let row_scale = m.max_abs().max(f64::MIN_POSITIVE);
        worst = worst.max(r.iter().map(|v| v.abs()).fold(0.0, f64::max) / (row_scale * scale));
    }
    let gauge = dot(c_p, p).abs() / (norm(c_p) * norm(p).max(f64::MIN_POSITIVE));
    worst.max(gauge)
}

/// `|| u_h . n ||_L2` on the lifted surface.
pub fn normal_l2(spaces: &FESpaces, quad: &LiftedQuadrature, u: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (k, pts) in quad.points.iter().enumerate() {
        for q in pts {
            let (val, _) = spaces.eval_velocity(u, k, q);
            sum += q.weight * val.dot(&q.normal).powi(2);
        }
    }
    sum.sqrt()
}

/// Tangential part `P w` and its gradient from a value and its ambient
/// Jacobian.
fn tangential_part(q: &QuadPoint, w: &Vec3, jac: &Mat3) -> (Vec3, Mat3) {
    let n = &q.normal;
    let h = &q.weingarten;
    let grad = jac - n * (w.transpose() * h + n.transpose() * jac) - h * n.dot(w);
    (q.projector * w, grad)
}

/// H1 and L2 norms of the difference of the tangential parts of two discrete
/// velocities.
pub fn tangential_difference(spaces: &FESpaces, quad: &LiftedQuadrature, u: &[f64], v: &[f64]) -> (f64, f64) {
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let (mut l2, mut grad) = (0.0, 0.0);
    for (k, pts) in quad.points.iter().enumerate() {
        for q in pts {
            let (val, jac) = spaces.eval_velocity(&diff, k, q);
            let (t, gt) = tangential_part(q, &val, &jac);
            l2 += q.weight * t.norm_squared();
            grad += q.weight * gt.norm_squared();
        }
    }
    ((l2 + grad).sqrt(), l2.sqrt())
}

/// Errors against an exact solution evaluated at the quadrature points.
pub fn error_norms(
    spaces: &FESpaces,
    quad: &LiftedQuadrature,
    u: &[f64],
    p: &[f64],
    exact: &ExactSolution,
) -> Result<ErrorNorms, SolveError> {
    let calc = Calculus::new(spaces.surface());
    let t = quad.time;
    let mut vel_l2 = 0.0;
    let mut vel_grad = 0.0;
    let mut full_l2 = 0.0;
    let mut full_grad = 0.0;
    let mut p_diffs = Vec::with_capacity(quad.len());
    for (k, pts) in quad.points.iter().enumerate() {
        for q in pts {
            let (val, jac) = spaces.eval_velocity(u, k, q);
            let ue = exact.velocity.at(&q.point, t)?;
            let je = calc.ambient_grad_vector(&exact.velocity, &q.point, t, calc.steps.first)?;
            let (tv, tg) = tangential_part(q, &val, &jac);
            let (te, tge) = tangential_part(q, &ue, &je);
            vel_l2 += q.weight * (tv - te).norm_squared();
            vel_grad += q.weight * (tg - tge).norm_squared();
            full_l2 += q.weight * (val - ue).norm_squared();
            full_grad += q.weight * (jac - je).norm_squared();
            let (ph, _) = spaces.eval_scalar(p, k, q);
            p_diffs.push((q.weight, ph - exact.pressure.at(&q.point, t)?));
        }
    }
    let area: f64 = p_diffs.iter().map(|(w, _)| w).sum();
    let mean = p_diffs.iter().map(|(w, d)| w * d).sum::<f64>() / area;
    let pressure_l2 = p_diffs.iter().map(|(w, d)| w * (d - mean).powi(2)).sum::<f64>().sqrt();
    Ok(ErrorNorms {
        velocity_h1: (vel_l2 + vel_grad).sqrt(),
        velocity_l2: vel_l2.sqrt(),
        full_velocity_h1: (full_l2 + full_grad).sqrt(),
        pressure_l2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KornEstimate {
    /// Estimate on the rotation-orthogonal tangential subspace.
    pub constrained: f64,
    /// Estimate on the full tangential subspace.
    pub unconstrained: f64,
    pub dofs: usize,
}

fn check_dense(dofs: usize) -> Result<(), SolveError> {
    if dofs > DENSE_DOF_LIMIT {
        return Err(SolveError::TooLarge { dofs, limit: DENSE_DOF_LIMIT });
    }
    Ok(())
}

/// Square root of the smallest eigenvalue of the tangential strain energy
/// against the H1 Gram matrix, on nodally tangential velocities.
pub fn estimate_korn(spaces: &FESpaces, quad: &LiftedQuadrature) -> Result<KornEstimate, SolveError> {
    let dofs = 2 * spaces.node_count();
    check_dense(dofs)?;
    let q = spaces.tangential_basis()?;
    let space = VelocitySpace::new(Some(&q));
    // 2 mu = 1 so the form is the squared strain norm.
    let energy = assembly::assemble_velocity_form(spaces, quad, 0.5, false, 0.0, StrainRoute::Factored);
    let a = space.restrict_matrix(&energy).to_dense();
    let g = space.restrict_matrix(&assembly::assemble_velocity_gram(spaces, quad, true)).to_dense();
    let rows: Vec<Vec<f64>> = assembly::killing_constraints(spaces, quad).iter().map(|c| space.restrict_vec(c)).collect();
    let smallest = |constraints: &[Vec<f64>]| -> Result<f64, SolveError> {
        let ev = linalg::constrained_generalized_eigenvalues(&a, &g, constraints)?;
        Ok(ev.first().copied().unwrap_or(f64::NAN).max(0.0).sqrt())
    };
    let constrained = smallest(&rows)?;
    let unconstrained = if rows.is_empty() { constrained } else { smallest(&[])? };
    Ok(KornEstimate { constrained, unconstrained, dofs })
}

/// Velocity space of the inf-sup estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfSupSpace {
    /// Nodally tangential velocities.
    Tangential,
    /// All nodal velocity components.
    Full,
}

/// Discrete inf-sup constant of the pressure form, with rotation-orthogonal
/// velocities in the H1 norm and zero-mean pressures.
pub fn estimate_infsup(spaces: &FESpaces, quad: &LiftedQuadrature, which: InfSupSpace) -> Result<f64, SolveError> {
    let nu = match which {
        InfSupSpace::Tangential => 2 * spaces.node_count(),
        InfSupSpace::Full => spaces.velocity_dim(),
    };
    check_dense(nu + spaces.pressure_dim())?;
    let q = match which {
        InfSupSpace::Tangential => Some(spaces.tangential_basis()?),
        InfSupSpace::Full => None,
    };
    let space = VelocitySpace::new(q.as_ref());
    let gram = space.restrict_matrix(&assembly::assemble_velocity_gram(spaces, quad, true));
    let b = space.restrict_rows(&assembly::assemble_b(spaces, quad));
    let rows: Vec<Vec<f64>> = assembly::killing_constraints(spaces, quad).iter().map(|c| space.restrict_vec(c)).collect();
    let mass = assembly::assemble_scalar_mass(spaces, quad);
    let c_p = assembly::pressure_mean_row(spaces, quad);
    estimate_infsup_from_blocks(&gram, &b, &mass, &rows, &[c_p])
}

/// `sqrt` of the smallest eigenvalue of `B X^-1 B^T q = theta M q` with the
/// velocity inverse taken on the null space of `velocity_constraints` and
/// pressures restricted to the null space of `pressure_constraints`.
pub fn estimate_infsup_from_blocks(
    x: &CsrMatrix,
    b: &CsrMatrix,
    mass: &CsrMatrix,
    velocity_constraints: &[Vec<f64>],
    pressure_constraints: &[Vec<f64>],
) -> Result<f64, SolveError> {
    let nu = x.nrows;
    let np = b.nrows;
    if np <= pressure_constraints.len() {
        return Err(SolveError::NotApplicable("no admissible pressure after the gauge".into()));
    }
    check_dense(nu + np)?;
    let nk = velocity_constraints.len();
    let mut builder = BlockBuilder::default();
    builder.add_block(0, 0, x);
    let rows = CsrMatrix::from_triplets(
        nk,
        nu,
        velocity_constraints
            .iter()
            .enumerate()
            .flat_map(|(r, c)| c.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, v)| (r, j, *v)))
            .collect(),
    );
    builder.add_symmetric_pair(nu, 0, &rows);
    let lu = SparseSolver::symmetric(&builder.build(nu + nk))?;
    let bt = b.transpose();
    let mut rhs = Mat::<f64>::zeros(nu + nk, np);
    for (i, j, v) in bt.triplets() {
        rhs[(i, j)] = v;
    }
    let y = lu.solve_many(&rhs);
    let mut schur = Mat::<f64>::zeros(np, np);
    for i in 0..np {
        for (k, v) in b.row(i) {
            for j in 0..np {
                schur[(i, j)] += v * y[(k, j)];
            }
        }
    }
    let schur = Mat::from_fn(np, np, |i, j| 0.5 * (schur[(i, j)] + schur[(j, i)]));
    let ev = linalg::constrained_generalized_eigenvalues(&schur, &mass.to_dense(), pressure_constraints)?;
    Ok(ev.first().copied().unwrap_or(f64::NAN).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::ProblemParams;
    use crate::mesh::gen_icosphere;

    fn setup(level: usize) -> (FESpaces, LiftedQuadrature) {
        let m = gen_icosphere(level, 1.0).unwrap();
        let q = LiftedQuadrature::build(&m, 0.0).unwrap();
        (FESpaces::new(&m).unwrap(), q)
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let (s, q) = setup(1);
        for formulation in [
            Formulation::Tangential,
            Formulation::Multiplier,
            Formulation::AugmentedTangential,
            Formulation::AugmentedFull,
        ] {
            let params = ProblemParams { formulation, mu: 1.0, tau: Some(10.0) };
            let sys = SaddleSystem::assemble_with_reference(&s, &q, params, &VectorField::zero_field(), &q).unwrap();
            let (report, sol) = solve_saddle(&sys, &s, &q, None).unwrap();
            assert_eq!(report.residual_norm, 0.0);
            assert!(sol.velocity.iter().chain(&sol.pressure).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn rotation_load_is_rejected() {
        let (s, q) = setup(1);
        let params = ProblemParams { formulation: Formulation::Multiplier, mu: 1.0, tau: None };
        let f = VectorField::given(|x, _| Vec3::z().cross(x));
        let sys = SaddleSystem::assemble_with_reference(&s, &q, params, &f, &q).unwrap();
        assert!(matches!(solve_saddle(&sys, &s, &q, None), Err(SolveError::InconsistentRhs { .. })));
    }

    #[test]
    fn orthogonalization_removes_rotation_component() {
        let rows = vec![vec![2.0, 0.0, 1.0]];
        let fields = vec![vec![1.0, 0.0, 0.0]];
        let mut rhs = vec![4.0, 1.0, 0.0];
        let c = orthogonalize_rhs(&mut rhs, &rows, &fields).unwrap();
        assert!(dot(&rhs, &fields[0]).abs() < 1e-15);
        assert!(c > 0.0);
    }

    #[test]
    fn infsup_needs_a_pressure() {
        let x = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let b = CsrMatrix::from_triplets(1, 2, vec![(0, 0, 1.0)]);
        let m = CsrMatrix::from_triplets(1, 1, vec![(0, 0, 1.0)]);
        let r = estimate_infsup_from_blocks(&x, &b, &m, &[], &[vec![1.0]]);
        assert!(matches!(r, Err(SolveError::NotApplicable(_))));
    }

    #[test]
    fn infsup_of_identity_blocks() {
        // B = [I 0], X = I, M = I: every pressure attains theta = 1.
        let x = CsrMatrix::from_triplets(3, 3, (0..3).map(|i| (i, i, 1.0)).collect());
        let b = CsrMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let beta = estimate_infsup_from_blocks(&x, &b, &m, &[], &[]).unwrap();
        assert!((beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn korn_on_coarse_sphere() {
        let (s, q) = setup(1);
        let k = estimate_korn(&s, &q).unwrap();
        assert!(k.constrained > 0.05, "{k:?}");
        assert!(k.unconstrained < k.constrained);
    }
}
