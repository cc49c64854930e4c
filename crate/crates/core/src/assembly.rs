//! Quadratic vector velocity / linear pressure spaces on lifted meshes and
//! assembly of every bilinear form, constraint row and load vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{LevelSetSurface, Mat3, Vec3};
use crate::linalg::CsrMatrix;
use crate::mesh::{EdgeTable, LiftedQuadrature, QuadPoint, SurfaceMesh};
use crate::par;
use crate::tancalc::{CalcError, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("augmentation parameter must be positive, got {0}")]
    InvalidTau(f64),
    #[error(transparent)]
    Calc(#[from] CalcError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Velocity forms. The tangential variant differentiates `P u`, the full
/// variant differentiates `u`, and the augmented variants add
/// `tau * int u_N v_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FormVariant {
    ATangential,
    AFull,
    ATau { tau: f64 },
    AHatTau { tau: f64 },
}

impl FormVariant {
    pub fn tau(self) -> Option<f64> {
        match self {
            FormVariant::ATau { tau } | FormVariant::AHatTau { tau } => Some(tau),
            _ => None,
        }
    }

    fn uses_full_strain(self) -> bool {
        matches!(self, FormVariant::AFull | FormVariant::AHatTau { .. })
    }
}

/// Arithmetic route for the full strain of a basis function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrainRoute {
    /// `1/2 P (grad u + grad u^T) P`.
    Direct,
    /// `E_s(P u) + u_N H`, with `grad(P u)` expanded by the product rule.
    Factored,
}

/// Load pairing: `int f . P v` or `int f . v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsPairing {
    Tangential,
    Full,
}

/// Velocity nodes per triangle: vertices 0..3, then edges (0,1), (1,2), (2,0).
pub const NODES_PER_TRIANGLE: usize = 6;

#[derive(Clone, Debug)]
pub struct FESpaces {
    pub mesh: SurfaceMesh,
    pub edges: EdgeTable,
    /// Velocity node positions: vertices, then lifted edge midpoints.
    pub nodes: Vec<Vec3>,
    pub triangle_nodes: Vec<[usize; NODES_PER_TRIANGLE]>,
}

impl FESpaces {
    pub fn new(mesh: &SurfaceMesh) -> Result<Self, AssemblyError> {
        let edges = mesh.edge_table();
        let nv = mesh.vertices.len();
        let mut nodes = mesh.vertices.clone();
        for [a, b] in &edges.edges {
            let mid = (mesh.vertices[*a] + mesh.vertices[*b]) * 0.5;
            nodes.push(mesh.surface.closest_point(&mid, 0.0)?);
        }
        let triangle_nodes = mesh
            .triangles
            .iter()
            .zip(&edges.triangle_edges)
            .map(|(t, e)| [t[0], t[1], t[2], nv + e[0], nv + e[1], nv + e[2]])
            .collect();
        Ok(Self { mesh: mesh.clone(), edges, nodes, triangle_nodes })
    }

    pub fn surface(&self) -> &LevelSetSurface {
        &self.mesh.surface
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn velocity_dim(&self) -> usize {
        3 * self.nodes.len()
    }

    pub fn pressure_dim(&self) -> usize {
        self.mesh.vertices.len()
    }

    pub fn multiplier_dim(&self) -> usize {
        self.mesh.vertices.len()
    }

    /// Nodal interpolant of a vector field.
    pub fn interpolate(&self, f: impl Fn(&Vec3) -> Vec3) -> Vec<f64> {
        self.nodes.iter().flat_map(|x| {
            let v = f(x);
            [v.x, v.y, v.z]
        })
        .collect()
    }

    /// Vertex interpolant of a scalar field.
    pub fn interpolate_scalar(&self, f: impl Fn(&Vec3) -> f64) -> Vec<f64> {
        self.mesh.vertices.iter().map(f).collect()
    }

    /// Orthonormal tangent frame at every velocity node.
    pub fn tangent_frames(&self) -> Result<Vec<[Vec3; 2]>, AssemblyError> {
        self.nodes
            .iter()
            .map(|x| {
                let n = self.surface().normal(x, 0.0)?;
                Ok(tangent_frame(&n))
            })
            .collect()
    }

    /// Basis of nodally tangential velocities, `3N x 2N`.
    pub fn tangential_basis(&self) -> Result<CsrMatrix, AssemblyError> {
        let frames = self.tangent_frames()?;
        let mut trips = Vec::with_capacity(6 * frames.len());
        for (k, f) in frames.iter().enumerate() {
            for (s, t) in f.iter().enumerate() {
                for c in 0..3 {
                    trips.push((3 * k + c, 2 * k + s, t[c]));
                }
            }
        }
        Ok(CsrMatrix::from_triplets(3 * frames.len(), 2 * frames.len(), trips))
    }

    /// Values and surface gradients of the six quadratic basis functions.
    pub fn shape(q: &QuadPoint) -> ([f64; 6], [Vec3; 6]) {
        let l = q.bary;
        let g = q.bary_grad;
        let mut phi = [0.0; 6];
        let mut grad = [Vec3::zeros(); 6];
        for i in 0..3 {
            phi[i] = l[i] * (2.0 * l[i] - 1.0);
            grad[i] = g[i] * (4.0 * l[i] - 1.0);
        }
        for (e, [i, j]) in crate::mesh::LOCAL_EDGES.iter().enumerate() {
            phi[3 + e] = 4.0 * l[*i] * l[*j];
            grad[3 + e] = (g[*i] * l[*j] + g[*j] * l[*i]) * 4.0;
        }
        (phi, grad)
    }

    /// Evaluates a discrete velocity at a quadrature point of triangle `k`.
    pub fn eval_velocity(&self, u: &[f64], k: usize, q: &QuadPoint) -> (Vec3, Mat3) {
        let (phi, grad) = Self::shape(q);
        let mut val = Vec3::zeros();
        let mut jac = Mat3::zeros();
        for (a, &node) in self.triangle_nodes[k].iter().enumerate() {
            let un = Vec3::new(u[3 * node], u[3 * node + 1], u[3 * node + 2]);
            val += un * phi[a];
            jac += un * grad[a].transpose();
        }
        (val, jac)
    }

    /// Evaluates a linear scalar at a quadrature point of triangle `k`.
    pub fn eval_scalar(&self, p: &[f64], k: usize, q: &QuadPoint) -> (f64, Vec3) {
        let tri = self.mesh.triangles[k];
        let mut val = 0.0;
        let mut grad = Vec3::zeros();
        for i in 0..3 {
            val += p[tri[i]] * q.bary[i];
            grad += q.bary_grad[i] * p[tri[i]];
        }
        (val, grad)
    }
}

/// Deterministic orthonormal pair spanning the plane orthogonal to `n`.
pub fn tangent_frame(n: &Vec3) -> [Vec3; 2] {
    let a = n.abs();
    let e = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let t1 = e.cross(n).normalize();
    [t1, n.cross(&t1)]
}

/// Triangles per parallel work unit; fixed so the merged triplet order does
/// not depend on the thread count.
const ASSEMBLY_CHUNK: usize = 64;

fn assemble<F>(spaces: &FESpaces, quad: &LiftedQuadrature, nrows: usize, ncols: usize, local: F) -> CsrMatrix
where
    F: Fn(usize, &[QuadPoint; 6], &mut Vec<(usize, usize, f64)>) + Sync + Send,
{
    let ntri = spaces.mesh.triangles.len();
    let parts = par::map_chunks(ntri, ASSEMBLY_CHUNK, |range| {
        let mut out = Vec::new();
        for k in range {
            local(k, &quad.points[k], &mut out);
        }
        out
    });
    CsrMatrix::from_triplets(nrows, ncols, parts.into_iter().flatten().collect())
}

fn unit(c: usize) -> Vec3 {
    let mut e = Vec3::zeros();
    e[c] = 1.0;
    e
}

/// Strain of the basis function `phi_a e_c` at a quadrature point.
fn basis_strain(q: &QuadPoint, phi: f64, grad: &Vec3, c: usize, full: bool, route: StrainRoute) -> Mat3 {
    let p = &q.projector;
    let n = &q.normal;
    let h = &q.weingarten;
    let e = unit(c);
    let jac = e * grad.transpose();
    let u_n = phi * n[c];
    let direct = (p * (jac + jac.transpose()) * p) * 0.5;
    match (full, route) {
        (false, _) => direct - h * u_n,
        (true, StrainRoute::Direct) => direct,
        (true, StrainRoute::Factored) => {
            let u = e * phi;
            let grad_un = h * u + jac.transpose() * n;
            let grad_tangential = jac - n * grad_un.transpose() - h * u_n;
            (p * (grad_tangential + grad_tangential.transpose()) * p) * 0.5 + h * u_n
        }
    }
}

pub fn assemble_a(
    spaces: &FESpaces,
    quad: &LiftedQuadrature,
    mu: f64,
    variant: FormVariant,
) -> Result<CsrMatrix, AssemblyError> {
    assemble_a_with_route(spaces, quad, mu, variant, StrainRoute::Factored)
}

pub fn assemble_a_with_route(
    spaces: &FESpaces,
    quad: &LiftedQuadrature,
    mu: f64,
    variant: FormVariant,
    route: StrainRoute,
) -> Result<CsrMatrix, AssemblyError> {
    let tau = match variant.tau() {
        Some(t) if !(t > 0.0) => return Err(AssemblyError::InvalidTau(t)),
        Some(t) => t,
        None => 0.0,
    };
    Ok(assemble_velocity_form(spaces, quad, mu, variant.uses_full_strain(), tau, route))
}

/// `2 mu int E:E + tau int u_N v_N`; `tau = 0` is allowed here.
pub fn assemble_velocity_form(
    spaces: &FESpaces,
    quad: &LiftedQuadrature,
    mu: f64,
    full: bool,
    tau: f64,
    route: StrainRoute,
) -> CsrMatrix {
    let n = spaces.velocity_dim();
    assemble(spaces, quad, n, n, |k, pts, out| {
        let mut local = [[0.0; 18]; 18];
        for q in pts {
            let (phi, grad) = FESpaces::shape(q);
            let mut strain = [Mat3::zeros(); 18];
            let mut normal = [0.0; 18];
            for a in 0..6 {
                for c in 0..3 {
                    strain[3 * a + c] = basis_strain(q, phi[a], &grad[a], c, full, route);
                    normal[3 * a + c] = phi[a] * q.normal[c];
                }
            }
            for i in 0..18 {
                for j in i..18 {
                    local[i][j] += q.weight * (2.0 * mu * strain[i].dot(&strain[j]) + tau * normal[i] * normal[j]);
                }
            }
        }
        push_symmetric(&spaces.triangle_nodes[k], &local, out);
    })
}

fn push_symmetric(nodes: &[usize; 6], local: &[[f64; 18]; 18], out: &mut Vec<(usize, usize, f64)>) {
    let dof = |i: usize| 3 * nodes[i / 3] + i % 3;
    for i in 0..18 {
        for j in 0..18 {
            let v = if j >= i { local[i][j] } else { local[j][i] };
            out.push((dof(i), dof(j), v));
        }
    }
}

/// `b(u, p) = int (P u) . grad p`, pressure rows by velocity columns.
pub fn assemble_b(spaces: &FESpaces, quad: &LiftedQuadrature) -> CsrMatrix {
    let (np, nu) = (spaces.pressure_dim(), spaces.velocity_dim());
    assemble(spaces, quad, np, nu, |k, pts, out| {
        let tri = spaces.mesh.triangles[k];
        let nodes = spaces.triangle_nodes[k];
        let mut local = [[0.0; 18]; 3];
        for q in pts {
            let (phi, _) = FESpaces::shape(q);
            for (i, row) in local.iter_mut().enumerate() {
                let gp = q.bary_grad[i];
                for a in 0..6 {
                    for c in 0..3 {
                        row[3 * a + c] += q.weight * phi[a] * gp[c];
                    }
                }
            }
        }
        for (i, row) in local.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.push((tri[i], 3 * nodes[j / 3] + j % 3, *v));
            }
        }
    })
}

/// Multiplier block `int lambda (v . n)`.
pub fn assemble_b_lambda(spaces: &FESpaces, quad: &LiftedQuadrature) -> CsrMatrix {
    let (nl, nu) = (spaces.multiplier_dim(), spaces.velocity_dim());
    assemble(spaces, quad, nl, nu, |k, pts, out| {
        let tri = spaces.mesh.triangles[k];
        let nodes = spaces.triangle_nodes[k];
        let mut local = [[0.0; 18]; 3];
        for q in pts {
            let (phi, _) = FESpaces::shape(q);
            for (i, row) in local.iter_mut().enumerate() {
                for a in 0..6 {
                    for c in 0..3 {
                        row[3 * a + c] += q.weight * q.bary[i] * phi[a] * q.normal[c];
                    }
                }
            }
        }
        for (i, row) in local.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.push((tri[i], 3 * nodes[j / 3] + j % 3, *v));
            }
        }
    })
}

/// Both blocks of the modified pressure form.
pub fn assemble_btilde(spaces: &FESpaces, quad: &LiftedQuadrature) -> (CsrMatrix, CsrMatrix) {
    (assemble_b(spaces, quad), assemble_b_lambda(spaces, quad))
}

/// Velocity mass matrix, and with `with_gradient` the H1 Gram matrix
/// `int u.v + grad u : grad v` of normally extended fields.
pub fn assemble_velocity_gram(spaces: &FESpaces, quad: &LiftedQuadrature, with_gradient: bool) -> CsrMatrix {
    let n = spaces.velocity_dim();
    assemble(spaces, quad, n, n, |k, pts, out| {
        let nodes = spaces.triangle_nodes[k];
        let mut local = [[0.0; 6]; 6];
        for q in pts {
            let (phi, grad) = FESpaces::shape(q);
            for a in 0..6 {
                for b in 0..6 {
                    let g = if with_gradient { grad[a].dot(&grad[b]) } else { 0.0 };
                    local[a][b] += q.weight * (phi[a] * phi[b] + g);
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                for c in 0..3 {
                    out.push((3 * nodes[a] + c, 3 * nodes[b] + c, local[a][b]));
                }
            }
        }
    })
}

/// Linear-space mass matrix (pressure or multiplier).
pub fn assemble_scalar_mass(spaces: &FESpaces, quad: &LiftedQuadrature) -> CsrMatrix {
    let n = spaces.pressure_dim();
    assemble(spaces, quad, n, n, |k, pts, out| {
        let tri = spaces.mesh.triangles[k];
        let mut local = [[0.0; 3]; 3];
        for q in pts {
            for i in 0..3 {
                for j in 0..3 {
                    local[i][j] += q.weight * q.bary[i] * q.bary[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                out.push((tri[i], tri[j], local[i][j]));
            }
        }
    })
}

/// Mean-value row `c_p . p = int p`.
pub fn pressure_mean_row(spaces: &FESpaces, quad: &LiftedQuadrature) -> Vec<f64> {
    let mut row = vec![0.0; spaces.pressure_dim()];
    for (k, pts) in quad.points.iter().enumerate() {
        for q in pts {
            for (i, &v) in spaces.mesh.triangles[k].iter().enumerate() {
                row[v] += q.weight * q.bary[i];
            }
        }
    }
    row
}

/// Interpolated rotation fields of the surface's symmetries.
pub fn killing_interpolants(spaces: &FESpaces) -> Vec<Vec<f64>> {
    let s = spaces.surface();
    s.killing_axes().iter().map(|axis| spaces.interpolate(|x| s.rotation_field(axis, x))).collect()
}

/// Rows `M_u I_h(k)` for each rotation `k` preserving the surface.
pub fn killing_constraints(spaces: &FESpaces, quad: &LiftedQuadrature) -> Vec<Vec<f64>> {
    let mass = assemble_velocity_gram(spaces, quad, false);
    killing_interpolants(spaces).iter().map(|z| mass.mul_vec(z)).collect()
}

/// Load vector of `f` in the given pairing.
pub fn assemble_rhs(
    spaces: &FESpaces,
    quad: &LiftedQuadrature,
    f: &VectorField,
    pairing: RhsPairing,
) -> Result<Vec<f64>, AssemblyError> {
    let values = par::map_indexed(quad.points.len(), |k| -> Result<Vec<(usize, f64)>, CalcError> {
        let nodes = spaces.triangle_nodes[k];
        let mut local = [0.0; 18];
        for q in &quad.points[k] {
            let (phi, _) = FESpaces::shape(q);
            let mut fv = f.at(&q.point, quad.time)?;
            if pairing == RhsPairing::Tangential {
                fv = q.projector * fv;
            }
            for a in 0..6 {
                for c in 0..3 {
                    local[3 * a + c] += q.weight * phi[a] * fv[c];
                }
            }
        }
        Ok((0..18).map(|j| (3 * nodes[j / 3] + j % 3, local[j])).collect())
    });
    let mut rhs = vec![0.0; spaces.velocity_dim()];
    for part in values {
        for (i, v) in part? {
            rhs[i] += v;
        }
    }
    Ok(rhs)
}

/// Relative pairing `|int f . k| / (|f|_L2 |k|_L2)` of a field with each
/// exact rotation preserving the surface.
pub fn killing_consistency(quad: &LiftedQuadrature, surface: &LevelSetSurface, f: &VectorField) -> Result<Vec<f64>, AssemblyError> {
    let values: Vec<(Vec3, f64)> = quad
        .iter()
        .map(|q| Ok((f.at(&q.point, quad.time)?, q.weight)))
        .collect::<Result<_, CalcError>>()?;
    let points: Vec<&QuadPoint> = quad.iter().collect();
    let f_norm = values.iter().map(|(v, w)| w * v.norm_squared()).sum::<f64>().sqrt();
    Ok(surface
        .killing_axes()
        .iter()
        .map(|axis| {
            let (mut dot, mut kk) = (0.0, 0.0);
            for ((v, w), q) in values.iter().zip(&points) {
                let k = surface.rotation_field(axis, &q.point);
                dot += w * v.dot(&k);
                kk += w * k.norm_squared();
            }
            if f_norm == 0.0 {
                0.0
            } else {
                dot.abs() / (f_norm * kk.sqrt())
            }
        })
        .collect())
}

/// Discrete formulations; serialized names are the stable identifiers used
/// in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formulation {
    /// Viscous form of the tangential part on nodally tangential velocities.
    #[serde(rename = "TANGENTIAL_45")]
    Tangential,
    /// Full strain form with a multiplier enforcing `u . n = 0` weakly.
    #[serde(rename = "MULTIPLIER_51")]
    Multiplier,
    /// Tangential strain form plus normal penalty.
    #[serde(rename = "AUG_A_62")]
    AugmentedTangential,
    /// Full strain form plus normal penalty.
    #[serde(rename = "AUG_B_62")]
    AugmentedFull,
}

impl Formulation {
    pub fn variant(self, tau: Option<f64>) -> Result<FormVariant, AssemblyError> {
        let need = || tau.ok_or(AssemblyError::InvalidTau(0.0));
        Ok(match self {
            Formulation::Tangential => FormVariant::ATangential,
            Formulation::Multiplier => FormVariant::AFull,
            Formulation::AugmentedTangential => FormVariant::ATau { tau: need()? },
            Formulation::AugmentedFull => FormVariant::AHatTau { tau: need()? },
        })
    }

    pub fn pairing(self) -> RhsPairing {
        match self {
            Formulation::Multiplier => RhsPairing::Full,
            _ => RhsPairing::Tangential,
        }
    }

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }
}

/// Physical and formulation parameters of one discrete problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub formulation: Formulation,
    pub mu: f64,
    pub tau: Option<f64>,
}

/// Refinement level of the reference quadrature used for the consistency
/// pairing, independent of the solve mesh.
pub const REFERENCE_QUADRATURE_LEVEL: usize = 3;

pub fn reference_quadrature(surface: &LevelSetSurface) -> Result<LiftedQuadrature, AssemblyError> {
    let level = match surface.kind {
        crate::geometry::SurfaceKind::Torus { .. } => REFERENCE_QUADRATURE_LEVEL - 2,
        _ => REFERENCE_QUADRATURE_LEVEL,
    };
    let mesh = SurfaceMesh::generate(surface, level)?;
    Ok(LiftedQuadrature::build(&mesh, 0.0)?)
}

/// Assembled blocks of one saddle-point problem.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub params: ProblemParams,
    pub variant: FormVariant,
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub b_lambda: Option<CsrMatrix>,
    pub c_p: Vec<f64>,
    pub c_kill: Vec<Vec<f64>>,
    /// Interpolated rotation fields paired with `c_kill`.
    pub killing_fields: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    /// Nodal tangent basis, present for the tangential formulation.
    pub tangential_basis: Option<CsrMatrix>,
    /// Relative pairing of the load with each exact rotation field.
    pub killing_pairing: Vec<f64>,
}

impl SaddleSystem {
    pub fn assemble(
        spaces: &FESpaces,
        quad: &LiftedQuadrature,
        params: ProblemParams,
        f: &VectorField,
    ) -> Result<Self, AssemblyError> {
        let reference = reference_quadrature(spaces.surface())?;
        Self::assemble_with_reference(spaces, quad, params, f, &reference)
    }

    /// As [`SaddleSystem::assemble`] with a caller-supplied quadrature for
    /// the consistency pairing.
    pub fn assemble_with_reference(
        spaces: &FESpaces,
        quad: &LiftedQuadrature,
        params: ProblemParams,
        f: &VectorField,
        reference: &LiftedQuadrature,
    ) -> Result<Self, AssemblyError> {
        let formulation = params.formulation;
        let variant = formulation.variant(params.tau)?;
        let a = assemble_a(spaces, quad, params.mu, variant)?;
        let b = assemble_b(spaces, quad);
        let b_lambda = (formulation == Formulation::Multiplier).then(|| assemble_b_lambda(spaces, quad));
        let tangential_basis = match formulation {
            Formulation::Tangential => Some(spaces.tangential_basis()?),
            _ => None,
        };
        Ok(Self {
            params,
            variant,
            a,
            b,
            b_lambda,
            c_p: pressure_mean_row(spaces, quad),
            c_kill: killing_constraints(spaces, quad),
            killing_fields: killing_interpolants(spaces),
            rhs: assemble_rhs(spaces, quad, f, formulation.pairing())?,
            tangential_basis,
            killing_pairing: killing_consistency(reference, spaces.surface(), f)?,
        })
    }

    pub fn formulation(&self) -> Formulation {
        self.params.formulation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen_icosphere;

    fn setup(level: usize) -> (FESpaces, LiftedQuadrature) {
        let m = gen_icosphere(level, 1.0).unwrap();
        let q = LiftedQuadrature::build(&m, 0.0).unwrap();
        (FESpaces::new(&m).unwrap(), q)
    }

    #[test]
    fn dimensions() {
        let (s, _) = setup(1);
        assert_eq!(s.node_count(), 42 + 120);
        assert_eq!(s.velocity_dim(), 3 * 162);
        assert_eq!(s.pressure_dim(), 42);
    }

    #[test]
    fn forms_are_exactly_symmetric() {
        let (s, q) = setup(1);
        for v in [FormVariant::ATangential, FormVariant::AFull, FormVariant::ATau { tau: 3.0 }, FormVariant::AHatTau { tau: 3.0 }] {
            assert_eq!(assemble_a(&s, &q, 1.0, v).unwrap().asymmetry(), 0.0);
        }
        assert!(matches!(assemble_a(&s, &q, 1.0, FormVariant::ATau { tau: 0.0 }), Err(AssemblyError::InvalidTau(_))));
    }

    #[test]
    fn normal_field_energy() {
        let (s, q) = setup(2);
        let u = s.interpolate(|x| *x);
        let a = assemble_velocity_form(&s, &q, 1.0, true, 0.0, StrainRoute::Factored);
        let e = a.bilinear(&u, &u);
        let exact = 2.0 * 2.0 * 4.0 * std::f64::consts::PI;
        assert!((e - exact).abs() / exact < 1e-3, "{e}");
    }

    #[test]
    fn pressure_gradient_pairing() {
        let (s, q) = setup(3);
        let b = assemble_b(&s, &q);
        let exact = 8.0 * std::f64::consts::PI / 3.0;
        let err = |level| {
            let (s, q) = setup(level);
            let p = s.interpolate_scalar(|x| x.z);
            let u = s.interpolate(|x| Vec3::z() - x * x.z);
            (assemble_b(&s, &q).bilinear(&p, &u) - exact).abs() / exact
        };
        let (coarse, fine) = (err(2), err(3));
        assert!(fine < 5e-3 && coarse / fine > 3.0, "{coarse} {fine}");
        let ones = vec![1.0; s.pressure_dim()];
        let col: f64 = b.transpose().mul_vec(&ones).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(col < 1e-12);
    }

    #[test]
    fn multiplier_pairings() {
        let (s, q) = setup(3);
        let bl = assemble_b_lambda(&s, &q);
        let u = s.interpolate(|x| *x);
        let one = vec![1.0; s.multiplier_dim()];
        let four_pi = 4.0 * std::f64::consts::PI;
        assert!((bl.bilinear(&one, &u) - four_pi).abs() / four_pi < 1e-4);
        let z = s.interpolate_scalar(|x| x.z);
        assert!(bl.bilinear(&z, &u).abs() < 1e-10);
        let max_normal = |level| {
            let (s, q) = setup(level);
            let rot = s.interpolate(|x| Vec3::z().cross(x));
            assemble_b_lambda(&s, &q).mul_vec(&rot).iter().map(|v| v.abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (max_normal(2), max_normal(3));
        assert!(fine < coarse / 4.0, "{coarse} {fine}");
    }
}
