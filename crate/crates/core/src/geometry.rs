//! Analytic closed surfaces given as level sets, with exact pointwise
//! geometry: signed distance, closest point, normal, tangential projector,
//! Weingarten map and curvatures.
//!
//! Conventions: the normal points outward, the signed distance is negative
//! inside, and the Weingarten map is the Hessian of the signed distance, so a
//! sphere of radius `R` has `H = P / R` and total curvature `2 / R`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on the level function for a point to count as on the surface.
pub const ON_SURFACE_TOL: f64 = 1e-10;

/// Relative step of the finite-difference Hessian used for ellipsoids.
pub const ELLIPSOID_HESSIAN_STEP: f64 = 1e-4;

const PROJECTION_MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {0:?} lies outside the surface neighborhood")]
    OutOfNeighborhood([f64; 3]),
    #[error("closest-point iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("point is off the surface: level value {0:e}")]
    OffSurface(f64),
    #[error("invalid surface description: {0}")]
    InvalidSurface(String),
}

/// Shape of the surface, in its own reference frame (centered at the origin).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceKind {
    Sphere { radius: f64 },
    Ellipsoid { a: f64, b: f64, c: f64 },
    /// Torus of revolution about the third axis.
    Torus { major: f64, minor: f64 },
}

/// Uniform scaling of the surface about its center, used for evolving checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum TimeLaw {
    /// Scale factor `1 + rate * t`.
    LinearScale { rate: f64 },
}

impl TimeLaw {
    pub fn scale(&self, t: f64) -> f64 {
        match self {
            TimeLaw::LinearScale { rate } => 1.0 + rate * t,
        }
    }

    pub fn scale_rate(&self, _t: f64) -> f64 {
        match self {
            TimeLaw::LinearScale { rate } => *rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetSurface {
    #[serde(flatten)]
    pub kind: SurfaceKind,
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_law: Option<TimeLaw>,
}

/// Geometric quantities at one point of the surface.
#[derive(Clone, Debug)]
pub struct GeometryEval {
    pub distance: f64,
    pub closest: Vec3,
    pub normal: Vec3,
    pub projector: Mat3,
    pub weingarten: Mat3,
    /// Trace of the Weingarten map (twice the mean curvature).
    pub kappa: f64,
    pub gauss: f64,
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|i| x[i] >= self.min[i] && x[i] <= self.max[i])
    }
}

impl LevelSetSurface {
    pub fn sphere(radius: f64) -> Self {
        Self::from_kind(SurfaceKind::Sphere { radius })
    }

    pub fn ellipsoid(a: f64, b: f64, c: f64) -> Self {
        Self::from_kind(SurfaceKind::Ellipsoid { a, b, c })
    }

    pub fn torus(major: f64, minor: f64) -> Self {
        Self::from_kind(SurfaceKind::Torus { major, minor })
    }

    fn from_kind(kind: SurfaceKind) -> Self {
        Self { kind, center: [0.0; 3], time_law: None }
    }

    pub fn with_center(mut self, center: [f64; 3]) -> Self {
        self.center = center;
        self
    }

    pub fn with_time_law(mut self, law: TimeLaw) -> Self {
        self.time_law = Some(law);
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidSurface(m.to_string()));
        match self.kind {
            SurfaceKind::Sphere { radius } if !(radius > 0.0) => bad("sphere radius must be positive"),
            SurfaceKind::Ellipsoid { a, b, c } if !(a > 0.0 && b > 0.0 && c > 0.0) => {
                bad("ellipsoid semi-axes must be positive")
            }
            SurfaceKind::Torus { major, minor } if !(minor > 0.0 && major > 2.0 * minor) => {
                bad("torus needs 0 < 2*minor < major")
            }
            _ => Ok(()),
        }
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn scale(&self, t: f64) -> f64 {
        self.time_law.as_ref().map_or(1.0, |l| l.scale(t))
    }

    pub fn scale_rate(&self, t: f64) -> f64 {
        self.time_law.as_ref().map_or(0.0, |l| l.scale_rate(t))
    }

    /// Diameter of the reference (t = 0, unscaled) surface.
    pub fn diameter(&self) -> f64 {
        match self.kind {
            SurfaceKind::Sphere { radius } => 2.0 * radius,
            SurfaceKind::Ellipsoid { a, b, c } => 2.0 * a.max(b).max(c),
            SurfaceKind::Torus { major, minor } => 2.0 * (major + minor),
        }
    }

    fn half_extent(&self) -> Vec3 {
        match self.kind {
            SurfaceKind::Sphere { radius } => Vec3::repeat(radius),
            SurfaceKind::Ellipsoid { a, b, c } => Vec3::new(a, b, c),
            SurfaceKind::Torus { major, minor } => Vec3::new(major + minor, major + minor, minor),
        }
    }

    /// Largest spectral norm of the Weingarten map over the reference surface.
    pub fn max_curvature(&self) -> f64 {
        match self.kind {
            SurfaceKind::Sphere { radius } => 1.0 / radius,
            SurfaceKind::Ellipsoid { a, b, c } => {
                let hi = a.max(b).max(c);
                let lo = a.min(b).min(c);
                hi / (lo * lo)
            }
            SurfaceKind::Torus { major, minor } => (1.0 / minor).max(1.0 / (major - minor)),
        }
    }

    /// Half the smallest radius of curvature, at time `t`.
    pub fn reach(&self, t: f64) -> f64 {
        0.5 * self.scale(t) / self.max_curvature()
    }

    /// Box containing the surface plus half a diameter of margin and room for
    /// the widest finite-difference stencil.
    pub fn bbox(&self, t: f64) -> BoundingBox {
        let s = self.scale(t);
        let diam = self.diameter();
        let stencil = 2.0 * 2.0 * (1e-3 + 1e-5) * diam;
        let half = (self.half_extent() + Vec3::repeat(0.5 * diam + stencil)) * s;
        let c = self.center();
        BoundingBox { min: (c - half).into(), max: (c + half).into() }
    }

    /// Level function: the signed distance for spheres and tori, a scaled
    /// algebraic function for ellipsoids. Zero exactly on the surface.
    pub fn level(&self, x: &Vec3, t: f64) -> f64 {
        let s = self.scale(t);
        let y = (x - self.center()) / s;
        let v = match self.kind {
            SurfaceKind::Sphere { radius } => y.norm() - radius,
            SurfaceKind::Torus { major, minor } => {
                let q = (y.x * y.x + y.y * y.y).sqrt();
                ((q - major).powi(2) + y.z * y.z).sqrt() - minor
            }
            SurfaceKind::Ellipsoid { a, b, c } => {
                let g = (y.x / a).powi(2) + (y.y / b).powi(2) + (y.z / c).powi(2) - 1.0;
                0.5 * a.min(b).min(c) * g
            }
        };
        v * s
    }

    pub fn signed_distance(&self, x: &Vec3, t: f64) -> Result<f64, GeometryError> {
        self.check_box(x, t)?;
        let s = self.scale(t);
        let y = (x - self.center()) / s;
        let d = match self.kind {
            SurfaceKind::Sphere { .. } | SurfaceKind::Torus { .. } => return Ok(self.level(x, t)),
            SurfaceKind::Ellipsoid { a, b, c } => {
                let (p, lagrange) = ellipsoid_project(&y, [a, b, c])?;
                let dist = (y - p).norm();
                if lagrange < 0.0 {
                    -dist
                } else {
                    dist
                }
            }
        };
        Ok(d * s)
    }

    pub fn closest_point(&self, x: &Vec3, t: f64) -> Result<Vec3, GeometryError> {
        self.check_box(x, t)?;
        let s = self.scale(t);
        let c = self.center();
        let y = (x - c) / s;
        let p = match self.kind {
            SurfaceKind::Sphere { radius } => {
                let r = y.norm();
                if r < 1e-12 * radius {
                    return Err(GeometryError::OutOfNeighborhood((*x).into()));
                }
                y * (radius / r)
            }
            SurfaceKind::Torus { major, minor } => {
                let core = torus_core(&y, major).ok_or(GeometryError::OutOfNeighborhood((*x).into()))?;
                let off = y - core;
                let r = off.norm();
                if r < 1e-12 * minor {
                    return Err(GeometryError::OutOfNeighborhood((*x).into()));
                }
                core + off * (minor / r)
            }
            SurfaceKind::Ellipsoid { a, b, c } => ellipsoid_project(&y, [a, b, c])?.0,
        };
        Ok(c + p * s)
    }

    /// Outward unit normal at the closest point of `x` (the normal extension).
    pub fn normal(&self, x: &Vec3, t: f64) -> Result<Vec3, GeometryError> {
        let p = self.closest_point(x, t)?;
        Ok(self.normal_on_surface(&p, t))
    }

    /// Normal from the level-set gradient, for `p` already on the surface.
    fn normal_on_surface(&self, p: &Vec3, t: f64) -> Vec3 {
        let y = (p - self.center()) / self.scale(t);
        match self.kind {
            SurfaceKind::Sphere { .. } => y.normalize(),
            SurfaceKind::Torus { major, .. } => {
                let core = torus_core(&y, major).unwrap_or(Vec3::zeros());
                (y - core).normalize()
            }
            SurfaceKind::Ellipsoid { a, b, c } => {
                Vec3::new(y.x / (a * a), y.y / (b * b), y.z / (c * c)).normalize()
            }
        }
    }

    pub fn shape_operator(&self, x: &Vec3, t: f64) -> Result<GeometryEval, GeometryError> {
        let lv = self.level(x, t);
        if lv.abs() > ON_SURFACE_TOL {
            return Err(GeometryError::OffSurface(lv));
        }
        self.geometry_at(x, t)
    }

    /// Geometry at the closest point of `x`; `x` may lie anywhere in the
    /// neighborhood.
    pub fn geometry_at(&self, x: &Vec3, t: f64) -> Result<GeometryEval, GeometryError> {
        let p = self.closest_point(x, t)?;
        let distance = self.signed_distance(x, t)?;
        let n = self.normal_on_surface(&p, t);
        let proj = Mat3::identity() - n * n.transpose();
        let s = self.scale(t);
        let h = match self.kind {
            SurfaceKind::Sphere { radius } => proj / (radius * s),
            SurfaceKind::Torus { major, minor } => {
                let y = (p - self.center()) / s;
                let q = (y.x * y.x + y.y * y.y).sqrt();
                let t_phi = Vec3::new(-y.y / q, y.x / q, 0.0);
                let t_theta = n.cross(&t_phi);
                let cos_theta = (q - major) / minor;
                (t_theta * t_theta.transpose() / minor + t_phi * t_phi.transpose() * (cos_theta / q)) / s
            }
            SurfaceKind::Ellipsoid { .. } => {
                let hh = ELLIPSOID_HESSIAN_STEP * self.diameter() * s;
                let raw = self.distance_hessian_fd(&p, t, hh)?;
                let sym = 0.5 * (raw + raw.transpose());
                proj * sym * proj
            }
        };
        let kappa = h.trace();
        let gauss = 0.5 * (kappa * kappa - h.norm_squared());
        Ok(GeometryEval { distance, closest: p, normal: n, projector: proj, weingarten: h, kappa, gauss })
    }

    /// Central second differences of the signed distance.
    pub fn distance_hessian_fd(&self, x: &Vec3, t: f64, h: f64) -> Result<Mat3, GeometryError> {
        let d = |v: Vec3| self.signed_distance(&v, t);
        let e = [Vec3::x(), Vec3::y(), Vec3::z()];
        let d0 = d(*x)?;
        let mut m = Mat3::zeros();
        for i in 0..3 {
            m[(i, i)] = (d(x + e[i] * h)? - 2.0 * d0 + d(x - e[i] * h)?) / (h * h);
            for j in (i + 1)..3 {
                let v = (d(x + (e[i] + e[j]) * h)? - d(x + (e[i] - e[j]) * h)?
                    - d(x + (e[j] - e[i]) * h)?
                    + d(x - (e[i] + e[j]) * h)?)
                    / (4.0 * h * h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    /// Jacobian of the closest-point map at `x`, from the principal
    /// curvatures at the projected point.
    pub fn closest_point_jacobian(&self, x: &Vec3, t: f64) -> Result<Mat3, GeometryError> {
        let g = self.geometry_at(x, t)?;
        let pc = principal_curvatures(&g);
        let mut jac = Mat3::zeros();
        for (k, dir) in pc.values.iter().zip(pc.directions.iter()) {
            jac += dir * dir.transpose() / (1.0 + g.distance * k);
        }
        Ok(jac)
    }

    /// Analytic Killing fields of the surface: rotations that map it to itself.
    pub fn killing_axes(&self) -> Vec<Vec3> {
        let all = vec![Vec3::x(), Vec3::y(), Vec3::z()];
        match self.kind {
            SurfaceKind::Sphere { .. } => all,
            SurfaceKind::Torus { .. } => vec![Vec3::z()],
            SurfaceKind::Ellipsoid { a, b, c } => {
                let eq = |u: f64, v: f64| (u - v).abs() <= 1e-14 * u.max(v);
                match (eq(a, b), eq(b, c), eq(a, c)) {
                    (true, true, _) => all,
                    (true, false, _) => vec![Vec3::z()],
                    (false, true, _) => vec![Vec3::x()],
                    (false, false, true) => vec![Vec3::y()],
                    _ => Vec::new(),
                }
            }
        }
    }

    /// Rotation field about `axis` through the surface center.
    pub fn rotation_field(&self, axis: &Vec3, x: &Vec3) -> Vec3 {
        axis.cross(&(x - self.center()))
    }

    /// Map from parameter-space coordinates to a surface point at t = 0.
    /// For the torus `(u, v)` are the toroidal and poloidal angles; for the
    /// sphere and ellipsoid they are azimuth and `cos` of the polar angle.
    pub fn parametric_point(&self, u: f64, v: f64) -> Result<Vec3, GeometryError> {
        let c = self.center();
        match self.kind {
            SurfaceKind::Torus { major, minor } => {
                let rho = major + minor * v.cos();
                Ok(c + Vec3::new(rho * u.cos(), rho * u.sin(), minor * v.sin()))
            }
            _ => {
                let z = v.clamp(-1.0, 1.0);
                let r = (1.0 - z * z).max(0.0).sqrt();
                let dir = Vec3::new(r * u.cos(), r * u.sin(), z);
                let scaled = match self.kind {
                    SurfaceKind::Sphere { radius } => dir * radius,
                    SurfaceKind::Ellipsoid { a, b, c: cc } => {
                        let w = Vec3::new(dir.x * a, dir.y * b, dir.z * cc);
                        return self.closest_point(&(c + w), 0.0);
                    }
                    SurfaceKind::Torus { .. } => unreachable!(),
                };
                Ok(c + scaled)
            }
        }
    }

    fn check_box(&self, x: &Vec3, t: f64) -> Result<(), GeometryError> {
        if self.bbox(t).contains(x) {
            Ok(())
        } else {
            Err(GeometryError::OutOfNeighborhood((*x).into()))
        }
    }
}

/// Nearest point of the torus core circle, or `None` on the symmetry axis.
fn torus_core(y: &Vec3, major: f64) -> Option<Vec3> {
    let q = (y.x * y.x + y.y * y.y).sqrt();
    if q < 1e-12 * major {
        return None;
    }
    Some(Vec3::new(y.x * major / q, y.y * major / q, 0.0))
}

/// Closest point on the ellipsoid `sum (y_i / a_i)^2 = 1` and the Lagrange
/// multiplier `t` of `p_i = a_i^2 y_i / (a_i^2 + t)`; `t > 0` outside.
/// Safeguarded Newton on the scalar secular equation.
fn ellipsoid_project(y: &Vec3, axes: [f64; 3]) -> Result<(Vec3, f64), GeometryError> {
    let a2 = [axes[0] * axes[0], axes[1] * axes[1], axes[2] * axes[2]];
    let amin2 = a2[0].min(a2[1]).min(a2[2]);
    let secular = |t: f64| -> (f64, f64) {
        let mut f = -1.0;
        let mut df = 0.0;
        for i in 0..3 {
            let q = axes[i] * y[i] / (a2[i] + t);
            f += q * q;
            df -= 2.0 * q * q / (a2[i] + t);
        }
        (f, df)
    };
    let ay = Vec3::new(axes[0] * y[0], axes[1] * y[1], axes[2] * y[2]).norm();
    let mut lo = -amin2;
    let mut hi = (ay - amin2).max(0.0);
    if secular(hi).0 > 0.0 {
        return Err(GeometryError::NoConvergence(0));
    }
    let mut t = hi;
    let mut converged = false;
    for _ in 0..PROJECTION_MAX_ITER {
        let (f, df) = secular(t);
        if f == 0.0 {
            converged = true;
            break;
        }
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut next = if df < 0.0 { t - f / df } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - t).abs();
        t = next;
        if step <= 4.0 * f64::EPSILON * (amin2 + t.abs()) || hi - lo <= 4.0 * f64::EPSILON * (amin2 + t.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(GeometryError::NoConvergence(PROJECTION_MAX_ITER));
    }
    let p = Vec3::new(a2[0] * y[0] / (a2[0] + t), a2[1] * y[1] / (a2[1] + t), a2[2] * y[2] / (a2[2] + t));
    Ok((p, t))
}

/// Eigen-pairs of a symmetric 3x3 matrix in descending eigenvalue order,
/// each eigenvector signed so its largest-magnitude entry is positive.
pub fn sym_eigen_desc(m: &Mat3) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(*m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut vals = [0.0; 3];
    let mut vecs = [Vec3::zeros(); 3];
    for (k, &i) in idx.iter().enumerate() {
        vals[k] = eig.eigenvalues[i];
        let mut v: Vec3 = eig.eigenvectors.column(i).into_owned();
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        vecs[k] = v;
    }
    (vals, vecs)
}

/// The two tangential eigen-pairs of the Weingarten map.
#[derive(Clone, Debug)]
pub struct PrincipalCurvatures {
    pub values: [f64; 2],
    pub directions: [Vec3; 2],
}

pub fn principal_curvatures(g: &GeometryEval) -> PrincipalCurvatures {
    let (vals, vecs) = sym_eigen_desc(&g.weingarten);
    let normal_slot = (0..3)
        .max_by(|&i, &j| vecs[i].dot(&g.normal).abs().total_cmp(&vecs[j].dot(&g.normal).abs()))
        .unwrap_or(2);
    let keep: Vec<usize> = (0..3).filter(|&i| i != normal_slot).collect();
    PrincipalCurvatures {
        values: [vals[keep[0]], vals[keep[1]]],
        directions: [vecs[keep[0]], vecs[keep[1]]],
    }
}

/// Moore-Penrose inverse of the Weingarten map on the tangent plane.
pub fn weingarten_pinv(g: &GeometryEval) -> Mat3 {
    let pc = principal_curvatures(g);
    let mut m = Mat3::zeros();
    for (k, dir) in pc.values.iter().zip(pc.directions.iter()) {
        if k.abs() > 1e-14 {
            m += dir * dir.transpose() / *k;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_distance_examples() {
        let s = LevelSetSurface::sphere(1.0);
        assert_eq!(s.signed_distance(&Vec3::new(2.0, 0.0, 0.0), 0.0).unwrap(), 1.0);
        assert_eq!(s.signed_distance(&Vec3::new(1.0, 0.0, 0.0), 0.0).unwrap(), 0.0);
        let p = s.closest_point(&Vec3::new(0.5, 0.0, 0.0), 0.0).unwrap();
        assert!((p - Vec3::x()).norm() < 1e-15);
    }

    #[test]
    fn torus_tube_center_distance() {
        let s = LevelSetSurface::torus(2.0, 0.5);
        let d = s.signed_distance(&Vec3::new(2.0, 0.0, 0.0), 0.0).unwrap();
        assert!((d + 0.5).abs() < 1e-15);
    }

    #[test]
    fn ellipsoid_axis_projection() {
        let s = LevelSetSurface::ellipsoid(2.0, 1.0, 1.0);
        let p = s.closest_point(&Vec3::new(3.0, 0.0, 0.0), 0.0).unwrap();
        assert!((p - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-14);
        assert!((s.signed_distance(&Vec3::new(3.0, 0.0, 0.0), 0.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn outside_box_is_rejected() {
        let s = LevelSetSurface::sphere(1.0);
        let err = s.signed_distance(&Vec3::new(5.0, 0.0, 0.0), 0.0).unwrap_err();
        assert!(matches!(err, GeometryError::OutOfNeighborhood(_)));
    }

    #[test]
    fn off_surface_shape_operator_errors() {
        let s = LevelSetSurface::sphere(1.0);
        assert!(matches!(
            s.shape_operator(&Vec3::new(1.1, 0.0, 0.0), 0.0),
            Err(GeometryError::OffSurface(_))
        ));
    }

    #[test]
    fn unit_sphere_shape_operator() {
        let s = LevelSetSurface::sphere(1.0);
        let g = s.shape_operator(&Vec3::x(), 0.0).unwrap();
        assert!((g.normal - Vec3::x()).norm() < 1e-15);
        assert!((g.kappa - 2.0).abs() < 1e-14);
        assert!((g.gauss - 1.0).abs() < 1e-14);
        assert!((g.weingarten - g.projector).norm() < 1e-14);
    }

    #[test]
    fn torus_outer_equator_curvatures() {
        let s = LevelSetSurface::torus(2.0, 0.5);
        let g = s.shape_operator(&Vec3::new(2.5, 0.0, 0.0), 0.0).unwrap();
        let (vals, _) = sym_eigen_desc(&g.weingarten);
        assert!((vals[0] - 2.0).abs() < 1e-12);
        assert!((vals[1] - 0.4).abs() < 1e-12);
        assert!(vals[2].abs() < 1e-12);
        assert!((g.kappa - 2.4).abs() < 1e-12);
        assert!((g.gauss - 0.8).abs() < 1e-12);
    }

    #[test]
    fn scaled_sphere_follows_time_law() {
        let s = LevelSetSurface::sphere(1.0).with_time_law(TimeLaw::LinearScale { rate: 0.1 });
        let d = s.signed_distance(&Vec3::new(2.0, 0.0, 0.0), 5.0).unwrap();
        assert!((d - 0.5).abs() < 1e-14);
    }

    #[test]
    fn closest_point_jacobian_matches_fd() {
        for s in [LevelSetSurface::torus(2.0, 0.5), LevelSetSurface::ellipsoid(1.5, 1.0, 0.8)] {
            let x = Vec3::new(1.3, 0.4, 0.3);
            let x = s.closest_point(&x, 0.0).unwrap() + s.normal(&x, 0.0).unwrap() * 0.05;
            let jac = s.closest_point_jacobian(&x, 0.0).unwrap();
            let h = 1e-6;
            let mut fd = Mat3::zeros();
            for j in 0..3 {
                let mut e = Vec3::zeros();
                e[j] = h;
                let c = (s.closest_point(&(x + e), 0.0).unwrap() - s.closest_point(&(x - e), 0.0).unwrap())
                    / (2.0 * h);
                fd.set_column(j, &c);
            }
            assert!((jac - fd).norm() < 1e-6, "{}", (jac - fd).norm());
        }
    }

    #[test]
    fn json_round_trip() {
        let s: LevelSetSurface =
            serde_json::from_str(r#"{"kind":"sphere","radius":1.0,"center":[0,0,0]}"#).unwrap();
        assert_eq!(s, LevelSetSurface::sphere(1.0));
        let t: LevelSetSurface = serde_json::from_str(r#"{"kind":"torus","major":2.0,"minor":0.5}"#).unwrap();
        assert_eq!(t, LevelSetSurface::torus(2.0, 0.5));
    }
}
