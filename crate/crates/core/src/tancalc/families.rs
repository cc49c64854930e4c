//! Analytic test fields for the identity catalog. All fields are quadratic
//! polynomials in local coordinates `y = (x - c) / L` (with `c` the surface
//! center and `L` half the diameter), so their ambient gradients are exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CalcError, Field, ScalarField, VectorField};
use crate::geometry::{LevelSetSurface, Mat3, Vec3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldFamily {
    /// Seeded random quadratic polynomials.
    #[default]
    Polynomial,
    /// Tangential fields are the rotation about the first Killing axis; the
    /// remaining fields are polynomial.
    Rotation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticScalar {
    pub origin: Vec3,
    pub length: f64,
    pub constant: f64,
    pub linear: Vec3,
    pub hessian: Mat3,
}

impl QuadraticScalar {
    pub fn random(rng: &mut ChaCha8Rng, origin: Vec3, length: f64, constant: f64, amplitude: f64) -> Self {
        let mut r = || amplitude * (2.0 * rng.random::<f64>() - 1.0);
        let linear = Vec3::new(r(), r(), r());
        let m = Mat3::from_fn(|_, _| r());
        Self { origin, length, constant, linear, hessian: (m + m.transpose()) * 0.5 }
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        let y = (x - self.origin) / self.length;
        self.constant + self.linear.dot(&y) + 0.5 * y.dot(&(self.hessian * y))
    }

    /// Ambient gradient as a column vector.
    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        let y = (x - self.origin) / self.length;
        (self.linear + self.hessian * y) / self.length
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticVector {
    pub components: [QuadraticScalar; 3],
}

impl QuadraticVector {
    pub fn random(rng: &mut ChaCha8Rng, origin: Vec3, length: f64) -> Self {
        let mut c = || {
            let k = 2.0 * rng.random::<f64>() - 1.0;
            QuadraticScalar::random(rng, origin, length, k, 1.0)
        };
        Self { components: [c(), c(), c()] }
    }

    /// The rigid rotation `axis x (x - origin)`.
    pub fn rotation(axis: &Vec3, origin: Vec3, length: f64) -> Self {
        let comp = |i: usize| {
            let row = axis.cross_matrix().row(i).transpose() * length;
            QuadraticScalar { origin, length, constant: 0.0, linear: row, hessian: Mat3::zeros() }
        };
        Self { components: [comp(0), comp(1), comp(2)] }
    }

    pub fn value(&self, x: &Vec3) -> Vec3 {
        Vec3::new(self.components[0].value(x), self.components[1].value(x), self.components[2].value(x))
    }

    /// Ambient Jacobian, `(J)_ij = d w_i / d x_j`.
    pub fn jacobian(&self, x: &Vec3) -> Mat3 {
        let g = |i: usize| self.components[i].gradient(x).transpose();
        Mat3::from_rows(&[g(0), g(1), g(2)])
    }

    /// Surface divergence of the projected field `P w` at a surface point.
    pub fn tangential_divergence(&self, surface: &LevelSetSurface, p: &Vec3, t: f64) -> Result<f64, CalcError> {
        let g = surface.geometry_at(p, t)?;
        Ok((g.projector * self.jacobian(p)).trace() - g.kappa * g.normal.dot(&self.value(p)))
    }
}

/// Normally extended fields consumed by the identity catalog.
#[derive(Clone)]
pub struct IdentityFields {
    pub scalar_a: ScalarField,
    pub scalar_b: ScalarField,
    pub tangent_a: VectorField,
    pub tangent_b: VectorField,
    /// Normal coordinate of `general`, bounded away from zero.
    pub normal_part: ScalarField,
    /// `tangent_a + normal_part n`.
    pub general: VectorField,
    /// `-div(tangent_a) / kappa`, so that `inextensible` has zero surface
    /// divergence.
    pub inext_normal: ScalarField,
    /// `tangent_a + inext_normal n`.
    pub inextensible: VectorField,
    /// Ambient polynomial used to build flows with nontrivial normal
    /// derivatives.
    pub ambient: QuadraticVector,
}

fn tangential(surface: &LevelSetSurface, w: QuadraticVector) -> VectorField {
    let s = surface.clone();
    Field::normal_extend(surface, move |p, t| {
        let n = s.normal(p, t)?;
        let v = w.value(p);
        Ok(v - n * n.dot(&v))
    })
}

fn scalar(surface: &LevelSetSurface, q: QuadraticScalar) -> ScalarField {
    Field::normal_extend(surface, move |p, _| Ok(q.value(p)))
}

fn with_normal(surface: &LevelSetSurface, tangent: &VectorField, normal_part: &ScalarField) -> VectorField {
    let s = surface.clone();
    let (u, f) = (tangent.clone(), normal_part.clone());
    Field::normal_extend(surface, move |p, t| Ok(u.at(p, t)? + s.normal(p, t)? * f.at(p, t)?))
}

impl IdentityFields {
    pub fn build(surface: &LevelSetSurface, family: FieldFamily, seed: u64) -> Result<Self, CalcError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = surface.center();
        let len = 0.5 * surface.diameter();
        let poly_a = QuadraticVector::random(&mut rng, c, len);
        let poly_b = QuadraticVector::random(&mut rng, c, len);
        let w_a = match family {
            FieldFamily::Polynomial => poly_a,
            FieldFamily::Rotation => {
                let axes = surface.killing_axes();
                let axis = axes.first().ok_or_else(|| {
                    CalcError::HypothesisViolated("surface has no rotational symmetry".into())
                })?;
                QuadraticVector::rotation(axis, c, len)
            }
        };
        let f_a = QuadraticScalar::random(&mut rng, c, len, 0.5, 1.0);
        let f_b = QuadraticScalar::random(&mut rng, c, len, -0.5, 1.0);
        let v_n = QuadraticScalar::random(&mut rng, c, len, 3.0, 0.3);
        let ambient = QuadraticVector::random(&mut rng, c, len);

        let tangent_a = tangential(surface, w_a.clone());
        let tangent_b = tangential(surface, poly_b);
        let normal_part = scalar(surface, v_n);
        let general = with_normal(surface, &tangent_a, &normal_part);
        let s = surface.clone();
        let inext_normal = Field::normal_extend(surface, move |p, t| {
            let kappa = s.geometry_at(p, t)?.kappa;
            if kappa.abs() < 1e-8 {
                return Err(CalcError::HypothesisViolated("mean curvature vanishes".into()));
            }
            Ok(-w_a.tangential_divergence(&s, p, t)? / kappa)
        });
        let inextensible = with_normal(surface, &tangent_a, &inext_normal);
        Ok(Self {
            scalar_a: scalar(surface, f_a),
            scalar_b: scalar(surface, f_b),
            tangent_a,
            tangent_b,
            normal_part,
            general,
            inext_normal,
            inextensible,
            ambient,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = QuadraticScalar::random(&mut rng, Vec3::new(0.1, 0.2, 0.3), 1.5, 0.7, 1.0);
        let x = Vec3::new(0.4, -0.3, 0.9);
        let h = 1e-5;
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = h;
            let fd = (q.value(&(x + e)) - q.value(&(x - e))) / (2.0 * h);
            assert!((fd - q.gradient(&x)[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn rotation_family_is_rigid() {
        let w = QuadraticVector::rotation(&Vec3::z(), Vec3::zeros(), 2.0);
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert!((w.value(&x) - Vec3::z().cross(&x)).norm() < 1e-14);
        assert!((w.jacobian(&x) - Vec3::z().cross_matrix()).norm() < 1e-14);
    }

    #[test]
    fn inextensible_field_on_sphere_has_zero_divergence() {
        let s = LevelSetSurface::sphere(1.0);
        let f = IdentityFields::build(&s, FieldFamily::Polynomial, 3).unwrap();
        let k = super::super::Calculus::new(&s);
        let x = Vec3::new(0.0, 0.6, 0.8);
        let div = k.div_surface_vector(&f.inextensible, &x, 0.0).unwrap();
        assert!(div.abs() < 1e-7, "{div}");
    }
}
