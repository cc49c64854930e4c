//! Experiment drivers: identity suites, manufactured solutions, convergence
//! studies, augmentation sweeps and constant estimation, with JSON/CSV/VTK
//! outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assembly::{
    self, AssemblyError, FESpaces, Formulation, ProblemParams, SaddleSystem,
};
use crate::geometry::{GeometryError, LevelSetSurface, SurfaceKind, Vec3};
use crate::mesh::{LiftedQuadrature, SurfaceMesh, VertexData};
use crate::solver::{self, ExactSolution, InfSupSpace, KornEstimate, SolveError, SolveReport};
use crate::tancalc::catalog::{self, IdentityCheckReport, IdentityId, VerifyRequest};
use crate::tancalc::families::FieldFamily;
use crate::tancalc::{CalcError, Calculus, FdSteps, ScalarField, VectorField};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("augmentation parameter {tau_min} is not above the coercivity threshold {threshold}")]
    BelowThreshold { tau_min: f64, threshold: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Calc(#[from] CalcError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Verify,
    Solve,
    Convergence,
    TauSweep,
    Constants,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Solve => "solve",
            Command::Convergence => "convergence",
            Command::TauSweep => "tau-sweep",
            Command::Constants => "constants",
        }
    }
}

/// Manufactured problems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionFamily {
    /// Velocity `n x grad(x1 x2 x3)`, pressure `x1`.
    #[default]
    CurlCubic,
    /// Zero velocity, pressure `x3`.
    PressureOnly,
    /// Velocity a rigid rotation, zero pressure.
    Rotation,
    /// Load equal to a rigid rotation; violates the compatibility condition.
    RotationLoad,
}

fn default_levels() -> Vec<usize> {
    vec![1]
}
fn default_mu() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    1.0
}
fn default_samples() -> usize {
    200
}
fn default_formulation() -> Formulation {
    Formulation::Multiplier
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub surface: LevelSetSurface,
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_formulation")]
    pub formulation: Formulation,
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Density; enters only the normal reaction and is recorded for
    /// provenance.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub solution: SolutionFamily,
    #[serde(default)]
    pub field_family: FieldFamily,
    /// Identities to verify; all when empty.
    #[serde(default)]
    pub identities: Vec<IdentityId>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Write VTK point data of the discrete solutions.
    #[serde(default)]
    pub write_fields: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        self.surface.validate()?;
        if self.levels.is_empty() {
            return bad("levels must be nonempty");
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad("levels must be strictly increasing");
        }
        if !(self.mu > 0.0) {
            return bad("mu must be positive");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be positive");
        }
        if self.taus.iter().chain(&self.tau).any(|t| !(*t > 0.0)) {
            return bad("augmentation parameters must be positive");
        }
        if self.command == Command::TauSweep && self.taus.len() < 2 {
            return bad("a sweep needs at least two augmentation parameters");
        }
        if self.samples == 0 {
            return bad("samples must be positive");
        }
        Ok(())
    }

    /// Parses a config file whose command is given separately; a `command`
    /// field in the file is overridden.
    pub fn load(text: &str, command: Command) -> Result<Self, ExperimentError> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        match value.as_object_mut() {
            Some(obj) => {
                obj.insert("command".into(), serde_json::to_value(command)?);
            }
            None => return Err(ExperimentError::Config("config must be a JSON object".into())),
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}

/// Exact tangential velocity and zero-mean pressure with the load computed
/// from the strong form by nested differences.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub surface: LevelSetSurface,
    pub mu: f64,
    pub family: SolutionFamily,
    pub u_exact: VectorField,
    pub pi_exact: ScalarField,
    pub f: VectorField,
}

/// Surface integral of `g` with a fine reference quadrature.
fn reference_integral(quad: &LiftedQuadrature, g: impl Fn(&Vec3) -> Result<f64, CalcError> + Sync + Send) -> Result<f64, CalcError> {
    quad.integrate_with(|q| g(&q.point))
}

impl ManufacturedCase {
    pub fn new(surface: &LevelSetSurface, mu: f64, family: SolutionFamily) -> Result<Self, ExperimentError> {
        let reference = assembly::reference_quadrature(surface)?;
        let axes = surface.killing_axes();
        let s = surface.clone();
        let raw_velocity: VectorField = match family {
            SolutionFamily::CurlCubic => VectorField::normal_extend(surface, move |p, t| {
                let grad = Vec3::new(p.y * p.z, p.x * p.z, p.x * p.y);
                Ok(s.normal(p, t)?.cross(&grad))
            }),
            SolutionFamily::Rotation => {
                let axis = axes.first().copied().unwrap_or_else(Vec3::z);
                VectorField::normal_extend(surface, move |p, _| Ok(s.rotation_field(&axis, p)))
            }
            SolutionFamily::PressureOnly | SolutionFamily::RotationLoad => VectorField::zero_field(),
        };
        let u_exact = if family == SolutionFamily::CurlCubic {
            killing_orthogonalize(surface, &reference, raw_velocity)?
        } else {
            raw_velocity
        };
        let raw_pressure: ScalarField = match family {
            SolutionFamily::CurlCubic => ScalarField::normal_extend(surface, |p, _| Ok(p.x)),
            SolutionFamily::PressureOnly => ScalarField::normal_extend(surface, |p, _| Ok(p.z)),
            _ => ScalarField::zero_field(),
        };
        let area = reference.area();
        let mean = reference_integral(&reference, |x| raw_pressure.at(x, 0.0))? / area;
        let pi_exact = raw_pressure.map(move |v| v - mean);

        let f = if family == SolutionFamily::RotationLoad {
            let axis = axes.first().copied().unwrap_or_else(Vec3::z);
            let s = surface.clone();
            VectorField::normal_extend(surface, move |p, _| Ok(s.rotation_field(&axis, p)))
        } else {
            manufactured_rhs(surface, &u_exact, &pi_exact, mu)
        };
        Ok(Self { surface: surface.clone(), mu, family, u_exact, pi_exact, f })
    }

    pub fn exact(&self) -> Option<ExactSolution> {
        (self.family != SolutionFamily::RotationLoad)
            .then(|| ExactSolution { velocity: self.u_exact.clone(), pressure: self.pi_exact.clone() })
    }

    /// Relative pairing of the load with each interpolated rotation field on
    /// the given mesh level.
    pub fn killing_self_check(&self, level: usize) -> Result<Vec<f64>, ExperimentError> {
        let mesh = SurfaceMesh::generate(&self.surface, level)?;
        let quad = LiftedQuadrature::build(&mesh, 0.0)?;
        let spaces = FESpaces::new(&mesh)?;
        let load = assembly::assemble_rhs(&spaces, &quad, &self.f, assembly::RhsPairing::Full)?;
        let mass = assembly::assemble_velocity_gram(&spaces, &quad, false);
        let fields = assembly::killing_interpolants(&spaces);
        let f_interp = spaces.interpolate(|x| self.f.at(x, 0.0).unwrap_or_else(|_| Vec3::zeros()));
        let f_norm = mass.bilinear(&f_interp, &f_interp).sqrt();
        Ok(fields
            .iter()
            .map(|z| {
                let kn = mass.bilinear(z, z).sqrt();
                let pairing: f64 = z.iter().zip(&load).map(|(a, b)| a * b).sum();
                if f_norm == 0.0 { 0.0 } else { pairing.abs() / (f_norm * kn) }
            })
            .collect())
    }
}

/// Removes the L2 projection onto the rotation fields of the surface.
fn killing_orthogonalize(
    surface: &LevelSetSurface,
    reference: &LiftedQuadrature,
    u: VectorField,
) -> Result<VectorField, ExperimentError> {
    let axes = surface.killing_axes();
    let k = axes.len();
    if k == 0 {
        return Ok(u);
    }
    let mut gram = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut rhs = nalgebra::DVector::<f64>::zeros(k);
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = reference_integral(reference, |x| {
                Ok(surface.rotation_field(&axes[i], x).dot(&surface.rotation_field(&axes[j], x)))
            })?;
        }
        rhs[i] = reference_integral(reference, |x| Ok(u.at(x, 0.0)?.dot(&surface.rotation_field(&axes[i], x))))?;
    }
    let coeffs = gram.lu().solve(&rhs).ok_or_else(|| ExperimentError::Config("degenerate rotation fields".into()))?;
    if coeffs.iter().all(|c| *c == 0.0) {
        return Ok(u);
    }
    let s = surface.clone();
    let coeffs: Vec<f64> = coeffs.iter().copied().collect();
    Ok(VectorField::normal_extend(surface, move |p, t| {
        let mut v = u.at(p, t)?;
        for (c, axis) in coeffs.iter().zip(&axes) {
            v -= s.rotation_field(axis, p) * *c;
        }
        Ok(v)
    }))
}

/// Strong-form load `-2 mu P div(E_s(u)) + grad_s pi` by nested differences.
pub fn manufactured_rhs(surface: &LevelSetSurface, u: &VectorField, pi: &ScalarField, mu: f64) -> VectorField {
    let calc = Calculus::new(surface);
    let strain = calc.strain_field(u);
    let pi = pi.clone();
    VectorField::normal_extend(surface, move |p, t| {
        Ok(calc.nested_pdiv(&strain, p, t)? * (-2.0 * mu) + calc.grad_surface_scalar(&pi, p, t)?)
    })
}

/// Identity tolerance for a surface: the analytic sphere is held to the
/// tighter target.
pub fn identity_tolerance(surface: &LevelSetSurface) -> f64 {
    match surface.kind {
        SurfaceKind::Sphere { .. } => 1e-5,
        _ => 1e-4,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityOutcome {
    pub identity_id: IdentityId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<IdentityCheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub outcomes: Vec<IdentityOutcome>,
    pub passed: bool,
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<VerifyReport, ExperimentError> {
    let tolerance = identity_tolerance(&cfg.surface);
    let ids: Vec<IdentityId> = if cfg.identities.is_empty() { IdentityId::ALL.to_vec() } else { cfg.identities.clone() };
    let outcomes: Vec<IdentityOutcome> = ids
        .iter()
        .map(|&id| {
            let req = VerifyRequest {
                identity_id: id,
                surface: cfg.surface.clone(),
                field_family: cfg.field_family,
                samples: cfg.samples,
                fd_step: None,
                seed: cfg.seed,
            };
            match catalog::verify_identity(&req) {
                Ok(r) => IdentityOutcome {
                    identity_id: id,
                    passed: r.max_rel_residual <= tolerance && r.skipped < r.sample_count,
                    report: Some(r),
                    error: None,
                },
                Err(e) => IdentityOutcome { identity_id: id, report: None, error: Some(e.to_string()), passed: false },
            }
        })
        .collect();
    let passed = outcomes.iter().all(|o| o.passed);
    Ok(VerifyReport { tolerance, outcomes, passed })
}

/// Mesh, spaces and quadrature of one refinement level.
pub struct Discretization {
    pub mesh: SurfaceMesh,
    pub spaces: FESpaces,
    pub quad: LiftedQuadrature,
}

impl Discretization {
    pub fn new(surface: &LevelSetSurface, level: usize) -> Result<Self, ExperimentError> {
        let mesh = SurfaceMesh::generate(surface, level)?;
        let quad = LiftedQuadrature::build(&mesh, 0.0)?;
        let spaces = FESpaces::new(&mesh)?;
        Ok(Self { mesh, spaces, quad })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSolve {
    pub level: usize,
    pub mesh_size: f64,
    pub report: SolveReport,
}

/// Assembles and solves one manufactured problem on one level.
pub fn solve_case(
    case: &ManufacturedCase,
    disc: &Discretization,
    reference: &LiftedQuadrature,
    params: ProblemParams,
) -> Result<(SolveReport, solver::Solution), ExperimentError> {
    let system = SaddleSystem::assemble_with_reference(&disc.spaces, &disc.quad, params, &case.f, reference)?;
    let exact = case.exact();
    Ok(solver::solve_saddle(&system, &disc.spaces, &disc.quad, exact.as_ref())?)
}

fn params_of(cfg: &ExperimentConfig) -> ProblemParams {
    ProblemParams { formulation: cfg.formulation, mu: cfg.mu, tau: cfg.tau }
}

/// Solves every configured level; VTK fields are returned for writing.
/// File name and contents of one output artifact.
pub type NamedFile = (String, Vec<u8>);

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<(Vec<LevelSolve>, Vec<NamedFile>), ExperimentError> {
    let case = ManufacturedCase::new(&cfg.surface, cfg.mu, cfg.solution)?;
    let reference = assembly::reference_quadrature(&cfg.surface)?;
    let mut rows = Vec::new();
    let mut fields = Vec::new();
    for &level in &cfg.levels {
        let disc = Discretization::new(&cfg.surface, level)?;
        let (report, sol) = solve_case(&case, &disc, &reference, params_of(cfg))?;
        if cfg.write_fields {
            fields.push((format!("solution_level{level}.vtk"), solution_vtk(&disc, &sol)?));
        }
        rows.push(LevelSolve { level, mesh_size: disc.mesh.mesh_size(), report });
    }
    Ok((rows, fields))
}

fn solution_vtk(disc: &Discretization, sol: &solver::Solution) -> Result<Vec<u8>, ExperimentError> {
    let nv = disc.mesh.vertices.len();
    let velocity: Vec<Vec3> =
        (0..nv).map(|i| Vec3::new(sol.velocity[3 * i], sol.velocity[3 * i + 1], sol.velocity[3 * i + 2])).collect();
    let mut out = Vec::new();
    disc.mesh.write_vtk(
        &mut out,
        &[("velocity", VertexData::Vectors(&velocity)), ("pressure", VertexData::Scalars(&sol.pressure))],
    )?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub mesh_size: f64,
    pub velocity_dofs: usize,
    pub velocity_h1: f64,
    pub velocity_l2: f64,
    pub full_velocity_h1: f64,
    pub pressure_l2: f64,
    pub u_n_l2: f64,
    pub residual_norm: f64,
    pub rhs_correction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub from_level: usize,
    pub to_level: usize,
    pub velocity_h1: f64,
    pub pressure_l2: f64,
    pub u_n_l2: f64,
    /// Coarse over fine normal-component norm.
    pub u_n_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub formulation: Formulation,
    pub rows: Vec<ConvergenceRow>,
    pub orders: Vec<OrderRow>,
    pub min_order: f64,
    pub passed: bool,
}

/// Observed-order threshold of the convergence study.
pub const MIN_OBSERVED_ORDER: f64 = 1.8;
/// Smallest per-level reduction factor of the normal component.
pub const MIN_NORMAL_REDUCTION: f64 = 2.0;

fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

pub fn cmd_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport, ExperimentError> {
    if cfg.levels.len() < 2 {
        return Err(ExperimentError::Config("a convergence study needs at least two levels".into()));
    }
    let (levels, _) = cmd_solve(&ExperimentConfig { write_fields: false, ..cfg.clone() })?;
    let rows: Vec<ConvergenceRow> = levels
        .iter()
        .map(|l| {
            let e = l.report.errors.clone().unwrap_or_default();
            ConvergenceRow {
                level: l.level,
                mesh_size: l.mesh_size,
                velocity_dofs: l.report.velocity_dofs,
                velocity_h1: e.velocity_h1,
                velocity_l2: e.velocity_l2,
                full_velocity_h1: e.full_velocity_h1,
                pressure_l2: e.pressure_l2,
                u_n_l2: l.report.u_n_l2,
                residual_norm: l.report.residual_norm,
                rhs_correction: l.report.rhs_correction,
            }
        })
        .collect();
    let orders: Vec<OrderRow> = rows
        .windows(2)
        .map(|w| OrderRow {
            from_level: w[0].level,
            to_level: w[1].level,
            velocity_h1: order(w[0].velocity_h1, w[1].velocity_h1),
            pressure_l2: order(w[0].pressure_l2, w[1].pressure_l2),
            u_n_l2: order(w[0].u_n_l2, w[1].u_n_l2),
            u_n_ratio: w[0].u_n_l2 / w[1].u_n_l2,
        })
        .collect();
    let min_order = orders.iter().flat_map(|o| [o.velocity_h1, o.pressure_l2]).fold(f64::INFINITY, f64::min);
    let normal_ok = cfg.formulation != Formulation::Multiplier || orders.iter().all(|o| o.u_n_ratio >= MIN_NORMAL_REDUCTION);
    let passed = min_order >= MIN_OBSERVED_ORDER && normal_ok;
    Ok(ConvergenceReport { formulation: cfg.formulation, rows, orders, min_order, passed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau: f64,
    /// H1 distance of the tangential parts of the two augmented solutions.
    pub tangential_h1_difference: f64,
    /// Same distance divided by the H1 norm of the reference tangential part.
    pub relative_difference: f64,
    pub u_n_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSweepReport {
    pub level: usize,
    pub threshold: f64,
    pub reference: Formulation,
    pub rows: Vec<TauRow>,
    pub slope: f64,
    pub slope_range: [f64; 2],
    pub passed: bool,
}

pub const SLOPE_RANGE: [f64; 2] = [-0.65, -0.35];

/// `2 mu max|H|^2` with the largest principal curvature magnitude.
pub fn coercivity_threshold(surface: &LevelSetSurface, mu: f64) -> f64 {
    2.0 * mu * surface.max_curvature().powi(2)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn cmd_tau_sweep(cfg: &ExperimentConfig) -> Result<TauSweepReport, ExperimentError> {
    let threshold = coercivity_threshold(&cfg.surface, cfg.mu);
    let tau_min = cfg.taus.iter().copied().fold(f64::INFINITY, f64::min);
    if tau_min <= threshold {
        return Err(ExperimentError::BelowThreshold { tau_min, threshold });
    }
    let level = cfg.levels[0];
    let case = ManufacturedCase::new(&cfg.surface, cfg.mu, cfg.solution)?;
    let reference_quad = assembly::reference_quadrature(&cfg.surface)?;
    let disc = Discretization::new(&cfg.surface, level)?;
    let mut rows = Vec::with_capacity(cfg.taus.len());
    for &tau in &cfg.taus {
        let solve = |formulation| {
            solve_case(&case, &disc, &reference_quad, ProblemParams { formulation, mu: cfg.mu, tau: Some(tau) })
        };
        let (_, reference) = solve(Formulation::AugmentedTangential)?;
        let (report, full) = solve(Formulation::AugmentedFull)?;
        let (diff, _) = solver::tangential_difference(&disc.spaces, &disc.quad, &full.velocity, &reference.velocity);
        let zero = vec![0.0; reference.velocity.len()];
        let (ref_norm, _) = solver::tangential_difference(&disc.spaces, &disc.quad, &reference.velocity, &zero);
        rows.push(TauRow {
            tau,
            tangential_h1_difference: diff,
            relative_difference: if ref_norm > 0.0 { diff / ref_norm } else { diff },
            u_n_l2: report.u_n_l2,
        });
    }
    let taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    let diffs: Vec<f64> = rows.iter().map(|r| r.tangential_h1_difference).collect();
    let slope = loglog_slope(&taus, &diffs);
    let passed = (SLOPE_RANGE[0]..=SLOPE_RANGE[1]).contains(&slope);
    Ok(TauSweepReport {
        level,
        threshold,
        reference: Formulation::AugmentedTangential,
        rows,
        slope,
        slope_range: SLOPE_RANGE,
        passed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRow {
    pub level: usize,
    pub mesh_size: f64,
    pub korn: KornEstimate,
    pub infsup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub rows: Vec<ConstantsRow>,
    /// Largest relative change between consecutive levels.
    pub korn_variation: f64,
    pub infsup_variation: f64,
    /// Unconstrained over constrained estimate on the finest level.
    pub collapse_ratio: f64,
    pub passed: bool,
}

pub const MIN_CONSTANT: f64 = 0.05;
pub const MAX_LEVEL_VARIATION: f64 = 0.2;
pub const MAX_COLLAPSE_RATIO: f64 = 0.1;

fn max_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs() / w[0].abs()).fold(0.0, f64::max)
}

pub fn cmd_constants(cfg: &ExperimentConfig) -> Result<ConstantsReport, ExperimentError> {
    let mut rows = Vec::new();
    for &level in &cfg.levels {
        let disc = Discretization::new(&cfg.surface, level)?;
        let korn = solver::estimate_korn(&disc.spaces, &disc.quad)?;
        let infsup = solver::estimate_infsup(&disc.spaces, &disc.quad, InfSupSpace::Tangential)?;
        rows.push(ConstantsRow { level, mesh_size: disc.mesh.mesh_size(), korn, infsup });
    }
    let korn: Vec<f64> = rows.iter().map(|r| r.korn.constrained).collect();
    let infsup: Vec<f64> = rows.iter().map(|r| r.infsup).collect();
    let korn_variation = max_variation(&korn);
    let infsup_variation = max_variation(&infsup);
    let last = rows.last().map(|r| r.korn).expect("levels are nonempty");
    let collapse_ratio = last.unconstrained / last.constrained;
    let has_rotations = !cfg.surface.killing_axes().is_empty();
    let passed = korn.iter().chain(&infsup).all(|v| *v > MIN_CONSTANT)
        && korn_variation < MAX_LEVEL_VARIATION
        && infsup_variation < MAX_LEVEL_VARIATION
        && (!has_rotations || collapse_ratio < MAX_COLLAPSE_RATIO);
    Ok(ConstantsReport { rows, korn_variation, infsup_variation, collapse_ratio, passed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub crate_version: String,
    pub fd_steps: FdSteps,
    pub tolerances: BTreeMap<String, f64>,
}

/// Run-dependent data kept apart from the reproducible payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_unix_seconds: u64,
    pub elapsed_seconds: f64,
    pub parallel: bool,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub command: Command,
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub passed: bool,
    pub result: serde_json::Value,
    pub metadata: RunMetadata,
}

impl ExperimentReport {
    /// The report without run metadata; identical configurations give
    /// identical payloads.
    pub fn payload(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).unwrap_or(serde_json::Value::Null);
        if let Some(obj) = v.as_object_mut() {
            obj.remove("metadata");
        }
        v
    }
}

/// Files produced by a run, relative to the output directory.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub tables: Vec<NamedFile>,
    pub fields: Vec<NamedFile>,
}

fn tolerances() -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("consistency".to_string(), solver::CONSISTENCY_TOL),
        ("solve_residual".to_string(), solver::RESIDUAL_LIMIT),
        ("identity_sphere".to_string(), 1e-5),
        ("identity_other".to_string(), 1e-4),
        ("min_observed_order".to_string(), MIN_OBSERVED_ORDER),
        ("min_constant".to_string(), MIN_CONSTANT),
        ("max_level_variation".to_string(), MAX_LEVEL_VARIATION),
    ])
}

fn csv_table<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))
}

#[derive(Serialize)]
struct IdentityCsvRow {
    identity_id: IdentityId,
    sample_count: usize,
    skipped: usize,
    max_rel_residual: f64,
    passed: bool,
}

#[derive(Serialize)]
struct ConstantsCsvRow {
    level: usize,
    mesh_size: f64,
    korn_constrained: f64,
    korn_unconstrained: f64,
    infsup: f64,
}

#[derive(Serialize)]
struct SolveCsvRow {
    level: usize,
    mesh_size: f64,
    system_dofs: usize,
    residual_norm: f64,
    u_n_l2: f64,
    velocity_h1: Option<f64>,
    pressure_l2: Option<f64>,
}

/// Runs one configured experiment in memory.
pub fn execute(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<(ExperimentReport, Artifacts), ExperimentError> {
    cfg.validate()?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let (passed, result, artifacts) = crate::par::with_threads(threads, || run_command(cfg))?;
    let report = ExperimentReport {
        command: cfg.command,
        config: cfg.clone(),
        provenance: Provenance {
            config_sha256: cfg.digest(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            fd_steps: FdSteps::for_surface(&cfg.surface),
            tolerances: tolerances(),
        },
        passed,
        result,
        metadata: RunMetadata {
            started_unix_seconds: started,
            elapsed_seconds: clock.elapsed().as_secs_f64(),
            parallel: crate::par::is_parallel(),
            threads,
        },
    };
    Ok((report, artifacts))
}

fn run_command(cfg: &ExperimentConfig) -> Result<(bool, serde_json::Value, Artifacts), ExperimentError> {
    let mut art = Artifacts::default();
    let (passed, value) = match cfg.command {
        Command::Verify => {
            let r = cmd_verify(cfg)?;
            let rows: Vec<IdentityCsvRow> = r
                .outcomes
                .iter()
                .map(|o| IdentityCsvRow {
                    identity_id: o.identity_id,
                    sample_count: o.report.as_ref().map_or(0, |r| r.sample_count),
                    skipped: o.report.as_ref().map_or(0, |r| r.skipped),
                    max_rel_residual: o.report.as_ref().map_or(f64::NAN, |r| r.max_rel_residual),
                    passed: o.passed,
                })
                .collect();
            art.tables.push(("identities.csv".into(), csv_table(&rows)?));
            (r.passed, serde_json::to_value(&r)?)
        }
        Command::Solve => {
            let (levels, fields) = cmd_solve(cfg)?;
            let rows: Vec<SolveCsvRow> = levels
                .iter()
                .map(|l| SolveCsvRow {
                    level: l.level,
                    mesh_size: l.mesh_size,
                    system_dofs: l.report.system_dofs,
                    residual_norm: l.report.residual_norm,
                    u_n_l2: l.report.u_n_l2,
                    velocity_h1: l.report.errors.as_ref().map(|e| e.velocity_h1),
                    pressure_l2: l.report.errors.as_ref().map(|e| e.pressure_l2),
                })
                .collect();
            art.tables.push(("solve.csv".into(), csv_table(&rows)?));
            art.fields = fields;
            let passed = levels.iter().all(|l| l.report.residual_norm <= solver::RESIDUAL_LIMIT);
            (passed, serde_json::to_value(&levels)?)
        }
        Command::Convergence => {
            let r = cmd_convergence(cfg)?;
            art.tables.push(("convergence.csv".into(), csv_table(&r.rows)?));
            art.tables.push(("orders.csv".into(), csv_table(&r.orders)?));
            (r.passed, serde_json::to_value(&r)?)
        }
        Command::TauSweep => {
            let r = cmd_tau_sweep(cfg)?;
            art.tables.push(("tau_sweep.csv".into(), csv_table(&r.rows)?));
            (r.passed, serde_json::to_value(&r)?)
        }
        Command::Constants => {
            let r = cmd_constants(cfg)?;
            let rows: Vec<ConstantsCsvRow> = r
                .rows
                .iter()
                .map(|c| ConstantsCsvRow {
                    level: c.level,
                    mesh_size: c.mesh_size,
                    korn_constrained: c.korn.constrained,
                    korn_unconstrained: c.korn.unconstrained,
                    infsup: c.infsup,
                })
                .collect();
            art.tables.push(("constants.csv".into(), csv_table(&rows)?));
            (r.passed, serde_json::to_value(&r)?)
        }
    };
    Ok((passed, value, art))
}

/// Writes `report.json`, `tables/*.csv` and `fields/*.vtk` under `out`.
pub fn write_outputs(out: &Path, report: &ExperimentReport, artifacts: &Artifacts) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let path = out.join("report.json");
    serde_json::to_writer_pretty(BufWriter::new(fs::File::create(&path)?), report)?;
    written.push(path);
    for (dir, files) in [("tables", &artifacts.tables), ("fields", &artifacts.fields)] {
        if files.is_empty() {
            continue;
        }
        fs::create_dir_all(out.join(dir))?;
        for (name, bytes) in files {
            let path = out.join(dir).join(name);
            fs::write(&path, bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Worker cap from `TANSURF_THREADS`.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("TANSURF_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|n| *n > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_config(command: Command) -> ExperimentConfig {
        ExperimentConfig {
            command,
            surface: LevelSetSurface::sphere(1.0),
            levels: vec![1],
            formulation: Formulation::Multiplier,
            mu: 1.0,
            rho: 1.0,
            tau: None,
            taus: vec![],
            solution: SolutionFamily::CurlCubic,
            field_family: FieldFamily::Polynomial,
            identities: vec![],
            samples: 10,
            seed: 0,
            write_fields: false,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = sphere_config(Command::Solve);
        assert!(c.validate().is_ok());
        c.levels = vec![2, 1];
        assert!(c.validate().is_err());
        c.levels = vec![];
        assert!(c.validate().is_err());
        let mut c = sphere_config(Command::Solve);
        c.mu = 0.0;
        assert!(c.validate().is_err());
        let mut c = sphere_config(Command::TauSweep);
        c.taus = vec![10.0, -1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = sphere_config(Command::Convergence);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let minimal = r#"{"command":"tau-sweep","surface":{"kind":"sphere","radius":1.0},"taus":[100,1000]}"#;
        let parsed = ExperimentConfig::from_json(minimal);
        assert!(parsed.is_ok(), "{parsed:?}");
    }

    #[test]
    fn pressure_only_load_is_projected_axis() {
        let s = LevelSetSurface::sphere(1.0);
        let case = ManufacturedCase::new(&s, 1.0, SolutionFamily::PressureOnly).unwrap();
        let x = Vec3::new(0.3, -0.4, 0.5).normalize();
        let f = case.f.at(&x, 0.0).unwrap();
        let expected = Vec3::z() - x * x.z;
        assert!((f - expected).norm() < 1e-6, "{f:?}");
    }

    #[test]
    fn rotation_velocity_has_negligible_load() {
        let s = LevelSetSurface::sphere(1.0);
        let case = ManufacturedCase::new(&s, 1.0, SolutionFamily::Rotation).unwrap();
        let x = Vec3::new(0.1, 0.7, -0.2).normalize();
        assert!(case.f.at(&x, 0.0).unwrap().norm() < 1e-5);
    }

    #[test]
    fn curl_cubic_load_matches_closed_form_on_unit_sphere() {
        let s = LevelSetSurface::sphere(1.0);
        let mu = 1.5;
        let case = ManufacturedCase::new(&s, mu, SolutionFamily::CurlCubic).unwrap();
        for x in [Vec3::new(0.3, -0.4, 0.5), Vec3::new(-0.8, 0.1, 0.2), Vec3::new(0.2, 0.9, -0.6)] {
            let p = x.normalize();
            let u = case.u_exact.at(&p, 0.0).unwrap();
            let expected = u * (10.0 * mu) + (Vec3::x() - p * p.x);
            let f = case.f.at(&p, 0.0).unwrap();
            assert!((f - expected).norm() / expected.norm() < 1e-5, "{f:?} vs {expected:?}");
        }
    }

    #[test]
    fn threshold_guard() {
        let mut c = sphere_config(Command::TauSweep);
        c.taus = vec![1.0, 100.0];
        assert!(matches!(cmd_tau_sweep(&c), Err(ExperimentError::BelowThreshold { .. })));
        c.taus = vec![2.0, 100.0];
        assert!(matches!(cmd_tau_sweep(&c), Err(ExperimentError::BelowThreshold { .. })));
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let x = [1e2, 1e3, 1e4];
        let y: Vec<f64> = x.iter().map(|t: &f64| 3.0 * t.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
