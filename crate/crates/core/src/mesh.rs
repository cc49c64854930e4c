//! Triangulations of analytic surfaces with vertices on the exact surface,
//! and quadrature lifted onto the exact surface by the closest-point map.

use std::collections::HashMap;
use std::io::Write;

use crate::geometry::{principal_curvatures, GeometryError, LevelSetSurface, Mat3, SurfaceKind, Vec3};
use crate::par;
use crate::tancalc::{CalcError, ScalarField};

#[derive(Clone, Debug)]
pub struct SurfaceMesh {
    pub surface: LevelSetSurface,
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub level: usize,
}

/// Unique edges in first-encounter order plus, per triangle, the indices of
/// its local edges `(0,1)`, `(1,2)`, `(2,0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeTable {
    pub edges: Vec<[usize; 2]>,
    pub triangle_edges: Vec<[usize; 3]>,
}

pub const LOCAL_EDGES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

const TORUS_BASE_MAJOR: usize = 16;
const TORUS_BASE_MINOR: usize = 8;

impl SurfaceMesh {
    /// Icosahedron-based mesh of a sphere or ellipsoid, or a lattice mesh of
    /// a torus, refined `level` times.
    pub fn generate(surface: &LevelSetSurface, level: usize) -> Result<Self, GeometryError> {
        surface.validate()?;
        let mut mesh = match surface.kind {
            SurfaceKind::Torus { .. } => torus_lattice(surface, TORUS_BASE_MAJOR, TORUS_BASE_MINOR)?,
            _ => icosahedron(surface)?,
        };
        for _ in 0..level {
            mesh = mesh.refine()?;
        }
        Ok(mesh)
    }

    /// Split every triangle into four and lift the new edge midpoints onto
    /// the surface.
    pub fn refine(&self) -> Result<Self, GeometryError> {
        let table = self.edge_table();
        let mut vertices = self.vertices.clone();
        for [a, b] in &table.edges {
            let mid = (self.vertices[*a] + self.vertices[*b]) * 0.5;
            vertices.push(self.surface.closest_point(&mid, 0.0)?);
        }
        let nv = self.vertices.len();
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (tri, te) in self.triangles.iter().zip(&table.triangle_edges) {
            let [a, b, c] = *tri;
            let [ab, bc, ca] = te.map(|e| nv + e);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Ok(Self { surface: self.surface.clone(), vertices, triangles, level: self.level + 1 })
    }

    pub fn edge_table(&self) -> EdgeTable {
        let mut index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let triangle_edges = self
            .triangles
            .iter()
            .map(|tri| {
                LOCAL_EDGES.map(|[i, j]| {
                    let key = sorted_pair(tri[i], tri[j]);
                    *index.entry(key).or_insert_with(|| {
                        edges.push(key);
                        edges.len() - 1
                    })
                })
            })
            .collect();
        EdgeTable { edges, triangle_edges }
    }

    /// Largest flat edge length.
    pub fn mesh_size(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| LOCAL_EDGES.map(|[i, j]| (self.vertices[t[i]] - self.vertices[t[j]]).norm()))
            .fold(0.0, f64::max)
    }

    pub fn euler_characteristic(&self) -> i64 {
        let e = self.edge_table().edges.len() as i64;
        self.vertices.len() as i64 - e + self.triangles.len() as i64
    }

    /// True when every edge is shared by exactly two triangles with opposite
    /// orientations.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<[usize; 2], usize> = HashMap::new();
        for t in &self.triangles {
            for [i, j] in LOCAL_EDGES {
                *directed.entry([t[i], t[j]]).or_default() += 1;
            }
        }
        directed.iter().all(|(&[a, b], &c)| c == 1 && directed.get(&[b, a]) == Some(&1))
    }

    /// Smallest dot product between flat triangle normals and the exact
    /// normal at the lifted centroid.
    pub fn min_orientation_alignment(&self) -> Result<f64, GeometryError> {
        let mut worst = f64::INFINITY;
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i]);
            let flat = (b - a).cross(&(c - a)).normalize();
            let n = self.surface.normal(&((a + b + c) / 3.0), 0.0)?;
            worst = worst.min(flat.dot(&n));
        }
        Ok(worst)
    }

    /// Legacy VTK polydata with optional vertex data.
    pub fn write_vtk<W: Write>(&self, out: &mut W, data: &[(&str, VertexData<'_>)]) -> std::io::Result<()> {
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "tansurf mesh level {}", self.level)?;
        writeln!(out, "ASCII\nDATASET POLYDATA")?;
        writeln!(out, "POINTS {} double", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
        }
        writeln!(out, "POLYGONS {} {}", self.triangles.len(), 4 * self.triangles.len())?;
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        if !data.is_empty() {
            writeln!(out, "POINT_DATA {}", self.vertices.len())?;
        }
        for (name, d) in data {
            match d {
                VertexData::Scalars(s) => {
                    writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default")?;
                    for v in s.iter() {
                        writeln!(out, "{v:.17e}")?;
                    }
                }
                VertexData::Vectors(s) => {
                    writeln!(out, "VECTORS {name} double")?;
                    for v in s.iter() {
                        writeln!(out, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub enum VertexData<'a> {
    Scalars(&'a [f64]),
    Vectors(&'a [Vec3]),
}

fn sorted_pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

/// Flips triangles whose flat normal points inward.
fn orient(surface: &LevelSetSurface, vertices: &[Vec3], triangles: &mut [[usize; 3]]) -> Result<(), GeometryError> {
    for t in triangles.iter_mut() {
        let [a, b, c] = t.map(|i| vertices[i]);
        let n = surface.normal(&((a + b + c) / 3.0), 0.0)?;
        if (b - a).cross(&(c - a)).dot(&n) < 0.0 {
            t.swap(1, 2);
        }
    }
    Ok(())
}

fn icosahedron(surface: &LevelSetSurface) -> Result<SurfaceMesh, GeometryError> {
    let phi = 0.5 * (1.0 + 5f64.sqrt());
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let (c, axes) = match surface.kind {
        SurfaceKind::Sphere { radius } => (surface.center(), Vec3::repeat(radius)),
        SurfaceKind::Ellipsoid { a, b, c } => (surface.center(), Vec3::new(a, b, c)),
        SurfaceKind::Torus { .. } => {
            return Err(GeometryError::InvalidSurface("icosahedron needs a sphere or ellipsoid".into()))
        }
    };
    let vertices = raw
        .iter()
        .map(|r| {
            let d = Vec3::from(*r).normalize().component_mul(&axes);
            surface.closest_point(&(c + d), 0.0)
        })
        .collect::<Result<Vec<_>, _>>()?;
    orient(surface, &vertices, &mut triangles)?;
    Ok(SurfaceMesh { surface: surface.clone(), vertices, triangles, level: 0 })
}

/// Structured torus mesh on an `n_major x n_minor` angle lattice with
/// alternating quad diagonals.
fn torus_lattice(surface: &LevelSetSurface, n_major: usize, n_minor: usize) -> Result<SurfaceMesh, GeometryError> {
    let tau = std::f64::consts::TAU;
    let mut vertices = Vec::with_capacity(n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            vertices.push(surface.parametric_point(tau * i as f64 / n_major as f64, tau * j as f64 / n_minor as f64)?);
        }
    }
    let id = |i: usize, j: usize| (i % n_major) * n_minor + (j % n_minor);
    let mut triangles = Vec::with_capacity(2 * n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    orient(surface, &vertices, &mut triangles)?;
    Ok(SurfaceMesh { surface: surface.clone(), vertices, triangles, level: 0 })
}

pub fn gen_icosphere(level: usize, radius: f64) -> Result<SurfaceMesh, GeometryError> {
    SurfaceMesh::generate(&LevelSetSurface::sphere(radius), level)
}

pub fn gen_torus(major: f64, minor: f64, n_major: usize, n_minor: usize) -> Result<SurfaceMesh, GeometryError> {
    let s = LevelSetSurface::torus(major, minor);
    s.validate()?;
    torus_lattice(&s, n_major, n_minor)
}

/// Symmetric 6-point rule exact for degree-4 polynomials on the reference
/// triangle: (barycentric coordinates, weight relative to the area).
pub fn reference_rule() -> [([f64; 3], f64); 6] {
    const A1: f64 = 0.445_948_490_915_965;
    const W1: f64 = 0.223_381_589_678_011;
    const A2: f64 = 0.091_576_213_509_771;
    const W2: f64 = 0.109_951_743_655_322;
    let b1 = 1.0 - 2.0 * A1;
    let b2 = 1.0 - 2.0 * A2;
    [
        ([A1, A1, b1], W1),
        ([A1, b1, A1], W1),
        ([b1, A1, A1], W1),
        ([A2, A2, b2], W2),
        ([A2, b2, A2], W2),
        ([b2, A2, A2], W2),
    ]
}

/// One quadrature point on the exact surface.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadPoint {
    pub point: Vec3,
    pub weight: f64,
    /// Barycentric coordinates in the flat triangle.
    pub bary: [f64; 3],
    pub normal: Vec3,
    pub projector: Mat3,
    pub weingarten: Mat3,
    pub kappa: f64,
    pub gauss: f64,
    /// Surface gradients of the barycentric coordinates, pulled back through
    /// the lift.
    pub bary_grad: [Vec3; 3],
}

#[derive(Clone, Debug)]
pub struct LiftedQuadrature {
    pub time: f64,
    /// Quadrature points grouped per triangle, in triangle order.
    pub points: Vec<[QuadPoint; 6]>,
}

impl LiftedQuadrature {
    /// Lifts the reference rule from each flat triangle (scaled to time `t`)
    /// onto the exact surface.
    pub fn build(mesh: &SurfaceMesh, t: f64) -> Result<Self, GeometryError> {
        let s = &mesh.surface;
        let c = s.center();
        let scale = s.scale(t);
        let rule = reference_rule();
        let points = par::map_indexed(mesh.triangles.len(), |k| -> Result<[QuadPoint; 6], GeometryError> {
            let v = mesh.triangles[k].map(|i| c + (mesh.vertices[i] - c) * scale);
            let e1 = v[1] - v[0];
            let e2 = v[2] - v[0];
            let mut out = Vec::with_capacity(6);
            for (bary, w) in rule.iter() {
                let x = v[0] * bary[0] + v[1] * bary[1] + v[2] * bary[2];
                let g = s.geometry_at(&x, t)?;
                let pc = principal_curvatures(&g);
                let mut jac = Mat3::zeros();
                for (kap, dir) in pc.values.iter().zip(pc.directions.iter()) {
                    jac += dir * dir.transpose() / (1.0 + g.distance * kap);
                }
                let j1 = jac * e1;
                let j2 = jac * e2;
                let gram = nalgebra::Matrix2::new(j1.dot(&j1), j1.dot(&j2), j1.dot(&j2), j2.dot(&j2));
                let inv = gram.try_inverse().ok_or(GeometryError::InvalidSurface("degenerate triangle".into()))?;
                let d1 = j1 * inv[(0, 0)] + j2 * inv[(1, 0)];
                let d2 = j1 * inv[(0, 1)] + j2 * inv[(1, 1)];
                out.push(QuadPoint {
                    point: g.closest,
                    weight: w * 0.5 * j1.cross(&j2).norm(),
                    bary: *bary,
                    normal: g.normal,
                    projector: g.projector,
                    weingarten: g.weingarten,
                    kappa: g.kappa,
                    gauss: g.gauss,
                    bary_grad: [-d1 - d2, d1, d2],
                });
            }
            Ok(out.try_into().expect("six points"))
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { time: t, points })
    }

    pub fn len(&self) -> usize {
        self.points.len() * 6
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QuadPoint> {
        self.points.iter().flatten()
    }

    pub fn area(&self) -> f64 {
        self.iter().map(|q| q.weight).sum()
    }

    /// `sum_q w_q f(x_q)`, accumulated per triangle and then in triangle
    /// order so the result does not depend on the thread count.
    pub fn integrate(&self, f: &ScalarField) -> Result<f64, CalcError> {
        self.integrate_with(|q| f.at(&q.point, self.time))
    }

    pub fn integrate_with<F>(&self, f: F) -> Result<f64, CalcError>
    where
        F: Fn(&QuadPoint) -> Result<f64, CalcError> + Sync + Send,
    {
        let parts = par::map_indexed(self.points.len(), |k| -> Result<f64, CalcError> {
            let mut acc = 0.0;
            for q in &self.points[k] {
                acc += q.weight * f(q)?;
            }
            Ok(acc)
        });
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total)
    }
}
