//! Finite-difference kernel for tangential calculus on normally extended
//! fields, and the identity catalog verified with it.
//!
//! Gradients follow the row convention: for a scalar `f` the surface gradient
//! is `(grad f) P`, returned here as a column vector; for a vector field `v`
//! the covariant gradient is `P (grad v) P` with `(grad v)_ij = d v_i / d x_j`.

pub mod catalog;
pub mod families;
pub mod sampling;

use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, LevelSetSurface, Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalcError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("stencil of width {width:e} leaves the tubular neighborhood (reach {reach:e})")]
    StencilOutOfNeighborhood { width: f64, reach: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    Scalar,
    Vector3,
    Matrix3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    GivenOnNeighborhood,
    NormalExtend,
}

/// Values a field can take: scalars, 3-vectors and 3x3 matrices.
pub trait FieldValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + Send + Sync + 'static
{
    const ARITY: Arity;
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl FieldValue for f64 {
    const ARITY: Arity = Arity::Scalar;
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl FieldValue for Vec3 {
    const ARITY: Arity = Arity::Vector3;
    fn zero() -> Self {
        Vec3::zeros()
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl FieldValue for Mat3 {
    const ARITY: Arity = Arity::Matrix3;
    fn zero() -> Self {
        Mat3::zeros()
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

type EvalFn<T> = dyn Fn(&Vec3, f64) -> Result<T, CalcError> + Send + Sync;

/// A field on a neighborhood of the surface, evaluated at `(x, t)`.
#[derive(Clone)]
pub struct Field<T> {
    eval: Arc<EvalFn<T>>,
    pub extension: Extension,
}

pub type ScalarField = Field<f64>;
pub type VectorField = Field<Vec3>;
pub type MatrixField = Field<Mat3>;

impl<T: FieldValue> Field<T> {
    /// Field defined directly on the neighborhood.
    pub fn given(f: impl Fn(&Vec3, f64) -> T + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(move |x, t| Ok(f(x, t))), extension: Extension::GivenOnNeighborhood }
    }

    pub fn given_fallible(f: impl Fn(&Vec3, f64) -> Result<T, CalcError> + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(f), extension: Extension::GivenOnNeighborhood }
    }

    /// Field defined by its surface values `f(p, t)`, extended constantly
    /// along normals through the closest-point map.
    pub fn normal_extend(
        surface: &LevelSetSurface,
        f: impl Fn(&Vec3, f64) -> Result<T, CalcError> + Send + Sync + 'static,
    ) -> Self {
        let s = surface.clone();
        Self {
            eval: Arc::new(move |x, t| {
                let p = s.closest_point(x, t)?;
                f(&p, t)
            }),
            extension: Extension::NormalExtend,
        }
    }

    /// Composes this field with the closest-point map.
    pub fn extended_from(&self, surface: &LevelSetSurface) -> Self {
        let inner = self.clone();
        Self::normal_extend(surface, move |p, t| inner.at(p, t))
    }

    pub fn at(&self, x: &Vec3, t: f64) -> Result<T, CalcError> {
        (self.eval)(x, t)
    }

    pub fn arity(&self) -> Arity {
        T::ARITY
    }

    pub fn zero_field() -> Self {
        Self::given(|_, _| T::zero())
    }

    pub fn map<U: FieldValue>(&self, f: impl Fn(T) -> U + Send + Sync + 'static) -> Field<U> {
        let inner = self.clone();
        Field { eval: Arc::new(move |x, t| inner.at(x, t).map(&f)), extension: self.extension }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(move |v| v * c)
    }

    pub fn plus(&self, other: &Self) -> Self {
        let (a, b) = (self.clone(), other.clone());
        Field { eval: Arc::new(move |x, t| Ok(a.at(x, t)? + b.at(x, t)?)), extension: self.extension }
    }
}

impl ScalarField {
    pub fn times_vector(&self, v: &VectorField) -> VectorField {
        let (a, b) = (self.clone(), v.clone());
        Field { eval: Arc::new(move |x, t| Ok(b.at(x, t)? * a.at(x, t)?)), extension: self.extension }
    }

    pub fn times_matrix(&self, m: &MatrixField) -> MatrixField {
        let (a, b) = (self.clone(), m.clone());
        Field { eval: Arc::new(move |x, t| Ok(b.at(x, t)? * a.at(x, t)?)), extension: self.extension }
    }

    pub fn times(&self, other: &ScalarField) -> ScalarField {
        let (a, b) = (self.clone(), other.clone());
        Field { eval: Arc::new(move |x, t| Ok(a.at(x, t)? * b.at(x, t)?)), extension: self.extension }
    }
}

impl VectorField {
    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let (a, b) = (self.clone(), other.clone());
        Field { eval: Arc::new(move |x, t| Ok(a.at(x, t)?.dot(&b.at(x, t)?))), extension: self.extension }
    }
}

/// Normal-extended geometric fields of a surface.
pub mod geom_fields {
    use super::*;

    pub fn normal(s: &LevelSetSurface) -> VectorField {
        let s2 = s.clone();
        Field::given_fallible(move |x, t| Ok(s2.normal(x, t)?))
    }

    pub fn projector(s: &LevelSetSurface) -> MatrixField {
        normal(s).map(|n| Mat3::identity() - n * n.transpose())
    }

    pub fn weingarten(s: &LevelSetSurface) -> MatrixField {
        let s2 = s.clone();
        Field::given_fallible(move |x, t| Ok(s2.geometry_at(x, t)?.weingarten))
    }

    pub fn kappa(s: &LevelSetSurface) -> ScalarField {
        let s2 = s.clone();
        Field::given_fallible(move |x, t| Ok(s2.geometry_at(x, t)?.kappa))
    }
}

/// Absolute finite-difference steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdSteps {
    /// Step of first-derivative stencils.
    pub first: f64,
    /// Outer step of nested second-derivative operators.
    pub outer: f64,
    /// Inner step of nested second-derivative operators.
    pub inner: f64,
    /// Step of time differences.
    pub time: f64,
}

pub const REL_FIRST_STEP: f64 = 1e-4;
pub const REL_OUTER_STEP: f64 = 1e-4;
pub const REL_INNER_STEP: f64 = 1e-5;
pub const TIME_STEP: f64 = 1e-4;

/// Threshold on the nested-stencil noise estimate above which a warning is
/// attached to the result.
pub const NESTED_NOISE_WARN: f64 = 1e-4;

impl FdSteps {
    pub fn for_surface(s: &LevelSetSurface) -> Self {
        let d = s.diameter();
        Self { first: REL_FIRST_STEP * d, outer: REL_OUTER_STEP * d, inner: REL_INNER_STEP * d, time: TIME_STEP }
    }

    /// All spatial steps multiplied by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        Self { first: self.first * factor, outer: self.outer * factor, inner: self.inner * factor, time: self.time }
    }
}

/// Operator kernel bound to one surface and one set of steps.
#[derive(Clone)]
pub struct Calculus {
    pub surface: Arc<LevelSetSurface>,
    pub steps: FdSteps,
}

fn basis(j: usize) -> Vec3 {
    let mut e = Vec3::zeros();
    e[j] = 1.0;
    e
}

impl Calculus {
    pub fn new(surface: &LevelSetSurface) -> Self {
        Self { surface: Arc::new(surface.clone()), steps: FdSteps::for_surface(surface) }
    }

    pub fn with_steps(mut self, steps: FdSteps) -> Self {
        self.steps = steps;
        self
    }

    /// Kernel whose first-derivative step is the nested inner step.
    fn inner_kernel(&self) -> Self {
        let mut k = self.clone();
        k.steps.first = self.steps.inner;
        k
    }

    fn check_stencil(&self, x: &Vec3, t: f64, width: f64) -> Result<(), CalcError> {
        let reach = self.surface.reach(t);
        let off = self.surface.level(x, t).abs();
        if off + width > reach {
            return Err(CalcError::StencilOutOfNeighborhood { width, reach });
        }
        Ok(())
    }

    /// Central-difference partial derivatives `d f / d x_j`, j = 0..3.
    pub fn partials<T: FieldValue>(&self, f: &Field<T>, x: &Vec3, t: f64, h: f64) -> Result<[T; 3], CalcError> {
        self.check_stencil(x, t, h)?;
        let mut out = [T::zero(); 3];
        for (j, o) in out.iter_mut().enumerate() {
            let e = basis(j) * h;
            *o = (f.at(&(x + e), t)? - f.at(&(x - e), t)?) * (0.5 / h);
        }
        Ok(out)
    }

    /// Ambient gradient `(grad f)^T` of a scalar field.
    pub fn ambient_grad_scalar(&self, f: &ScalarField, x: &Vec3, t: f64, h: f64) -> Result<Vec3, CalcError> {
        let d = self.partials(f, x, t, h)?;
        Ok(Vec3::new(d[0], d[1], d[2]))
    }

    /// Ambient Jacobian of a vector field, columns are partial derivatives.
    pub fn ambient_grad_vector(&self, v: &VectorField, x: &Vec3, t: f64, h: f64) -> Result<Mat3, CalcError> {
        let d = self.partials(v, x, t, h)?;
        Ok(Mat3::from_columns(&d))
    }

    fn projector_at(&self, x: &Vec3, t: f64) -> Result<Mat3, CalcError> {
        let n = self.surface.normal(x, t)?;
        Ok(Mat3::identity() - n * n.transpose())
    }

    pub fn grad_surface_scalar(&self, f: &ScalarField, x: &Vec3, t: f64) -> Result<Vec3, CalcError> {
        let p = self.projector_at(x, t)?;
        Ok(p * self.ambient_grad_scalar(f, x, t, self.steps.first)?)
    }

    pub fn grad_surface_vector(&self, v: &VectorField, x: &Vec3, t: f64) -> Result<Mat3, CalcError> {
        let p = self.projector_at(x, t)?;
        Ok(p * self.ambient_grad_vector(v, x, t, self.steps.first)? * p)
    }

    pub fn div_surface_vector(&self, v: &VectorField, x: &Vec3, t: f64) -> Result<f64, CalcError> {
        let p = self.projector_at(x, t)?;
        Ok((p * self.ambient_grad_vector(v, x, t, self.steps.first)?).trace())
    }

    /// Row-wise surface divergence with an explicit step.
    fn div_matrix_with(&self, a: &MatrixField, x: &Vec3, t: f64, h: f64) -> Result<Vec3, CalcError> {
        let p = self.projector_at(x, t)?;
        let d = self.partials(a, x, t, h)?;
        let mut out = Vec3::zeros();
        for (j, dj) in d.iter().enumerate() {
            out += dj * p.column(j);
        }
        Ok(out)
    }

    pub fn div_surface_matrix(&self, a: &MatrixField, x: &Vec3, t: f64) -> Result<Vec3, CalcError> {
        self.div_matrix_with(a, x, t, self.steps.first)
    }

    pub fn rate_of_strain(&self, v: &VectorField, x: &Vec3, t: f64) -> Result<Mat3, CalcError> {
        let p = self.projector_at(x, t)?;
        let g = self.ambient_grad_vector(v, x, t, self.steps.first)?;
        Ok(p * (g + g.transpose()) * p * 0.5)
    }

    pub fn stress_tensor(&self, pi: f64, v: &VectorField, x: &Vec3, t: f64, mu: f64) -> Result<Mat3, CalcError> {
        let p = self.projector_at(x, t)?;
        Ok(p * (-pi) + self.rate_of_strain(v, x, t)? * (2.0 * mu))
    }

    /// `x -> P (grad v) P` at the closest point, computed with the inner step.
    pub fn grad_field(&self, v: &VectorField) -> MatrixField {
        let k = self.inner_kernel();
        let v = v.clone();
        Field::normal_extend(&self.surface, move |p, t| k.grad_surface_vector(&v, p, t))
    }

    pub fn grad_field_transposed(&self, v: &VectorField) -> MatrixField {
        self.grad_field(v).map(|m| m.transpose())
    }

    pub fn div_field(&self, v: &VectorField) -> ScalarField {
        let k = self.inner_kernel();
        let v = v.clone();
        Field::normal_extend(&self.surface, move |p, t| k.div_surface_vector(&v, p, t))
    }

    pub fn strain_field(&self, v: &VectorField) -> MatrixField {
        let k = self.inner_kernel();
        let v = v.clone();
        Field::normal_extend(&self.surface, move |p, t| k.rate_of_strain(&v, p, t))
    }

    /// `P div(A)` with the outer nested step, for a matrix field produced by
    /// an inner operator.
    pub fn nested_pdiv(&self, a: &MatrixField, x: &Vec3, t: f64) -> Result<Vec3, CalcError> {
        self.check_stencil(x, t, self.steps.outer + self.steps.inner)?;
        let p = self.projector_at(x, t)?;
        Ok(p * self.div_matrix_with(a, x, t, self.steps.outer)?)
    }

    /// Full (unprojected) surface divergence of a matrix field, outer step.
    pub fn nested_div(&self, a: &MatrixField, x: &Vec3, t: f64) -> Result<Vec3, CalcError> {
        self.check_stencil(x, t, self.steps.outer + self.steps.inner)?;
        self.div_matrix_with(a, x, t, self.steps.outer)
    }

    /// Surface gradient of a scalar field produced by an inner operator.
    pub fn nested_grad(&self, f: &ScalarField, x: &Vec3, t: f64) -> Result<Vec3, CalcError> {
        self.check_stencil(x, t, self.steps.outer + self.steps.inner)?;
        let p = self.projector_at(x, t)?;
        Ok(p * self.ambient_grad_scalar(f, x, t, self.steps.outer)?)
    }

    /// Bochner Laplacian `P div(P (grad v) P)`.
    pub fn bochner_laplacian(&self, v: &VectorField, x: &Vec3, t: f64) -> Result<Vec3, CalcError> {
        self.nested_pdiv(&self.grad_field(v), x, t)
    }

    /// Bochner Laplacian plus a Richardson estimate of its truncation and
    /// cancellation error relative to the result; estimates above
    /// [`NESTED_NOISE_WARN`] should be reported as warnings.
    pub fn bochner_laplacian_checked(&self, v: &VectorField, x: &Vec3, t: f64) -> Result<(Vec3, f64), CalcError> {
        let fine = self.bochner_laplacian(v, x, t)?;
        let mut coarse_k = self.clone();
        coarse_k.steps.outer *= 2.0;
        let coarse = coarse_k.bochner_laplacian(v, x, t)?;
        let noise = (fine - coarse).norm() / (3.0 * fine.norm() + 1e-14);
        Ok((fine, noise))
    }

    /// Material derivative `df/dt + (grad f) u` along the flow `u`.
    pub fn material_derivative<T: FieldValue>(
        &self,
        f: &Field<T>,
        u: &VectorField,
        x: &Vec3,
        t: f64,
    ) -> Result<T, CalcError> {
        let k = self.steps.time;
        let dt = (f.at(x, t + k)? - f.at(x, t - k)?) * (0.5 / k);
        let uv = u.at(x, t)?;
        let d = self.partials(f, x, t, self.steps.first)?;
        Ok(dt + d[0] * uv[0] + d[1] * uv[1] + d[2] * uv[2])
    }

    /// Normal force sustaining a stationary surface under the flow `u_t`.
    pub fn normal_reaction(
        &self,
        u_t: &VectorField,
        pi: &ScalarField,
        x: &Vec3,
        t: f64,
        mu: f64,
        rho: f64,
    ) -> Result<f64, CalcError> {
        let g = self.surface.geometry_at(x, t)?;
        let grad = self.grad_surface_vector(u_t, x, t)?;
        let u = u_t.at(x, t)?;
        Ok(2.0 * mu * (g.weingarten * grad).trace() - pi.at(x, t)? * g.kappa - rho * u.dot(&(g.weingarten * u)))
    }
}

/// Relative residual `|l - r| / (|l| + |r| + 1e-14)`.
pub fn rel_residual<T: FieldValue>(l: T, r: T) -> f64 {
    (l - r).magnitude() / (l.magnitude() + r.magnitude() + 1e-14)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_sphere() -> (LevelSetSurface, Calculus) {
        let s = LevelSetSurface::sphere(1.0);
        let k = Calculus::new(&s);
        (s, k)
    }

    #[test]
    fn constant_scalar_has_zero_gradient() {
        let (_, k) = unit_sphere();
        let g = k.grad_surface_scalar(&Field::given(|_, _| 3.0), &Vec3::x(), 0.0).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn height_function_gradient() {
        let (s, k) = unit_sphere();
        let f = Field::normal_extend(&s, |p, _| Ok(p.z));
        let g = k.grad_surface_scalar(&f, &Vec3::x(), 0.0).unwrap();
        // Central-difference truncation of z/|x| along z is h^2/2 at this point.
        let h = k.steps.first;
        assert!(((g - Vec3::z()).norm() - 0.5 * h * h).abs() < 1e-11);
        let sq = Field::given(|x: &Vec3, _| x.x * x.x);
        let g2 = k.grad_surface_scalar(&sq, &Vec3::y(), 0.0).unwrap();
        assert!(g2.norm() < 1e-8);
    }

    #[test]
    fn position_field_gradient_divergence_strain() {
        let (_, k) = unit_sphere();
        let v = Field::given(|x: &Vec3, _| *x);
        let x = Vec3::new(0.6, 0.0, 0.8);
        let p = Mat3::identity() - x * x.transpose();
        assert!((k.grad_surface_vector(&v, &x, 0.0).unwrap() - p).norm() < 1e-8);
        assert!((k.div_surface_vector(&v, &x, 0.0).unwrap() - 2.0).abs() < 1e-8);
        assert!((k.rate_of_strain(&v, &x, 0.0).unwrap() - p).norm() < 1e-8);
    }

    #[test]
    fn rotation_is_strain_and_divergence_free() {
        let (_, k) = unit_sphere();
        let v = Field::given(|x: &Vec3, _| Vec3::z().cross(x));
        let x = Vec3::new(0.48, 0.6, 0.64);
        assert!(k.rate_of_strain(&v, &x, 0.0).unwrap().norm() < 1e-9);
        assert!(k.div_surface_vector(&v, &x, 0.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn stress_examples() {
        let (_, k) = unit_sphere();
        let x = Vec3::new(0.0, 0.6, 0.8);
        let p = Mat3::identity() - x * x.transpose();
        let zero = VectorField::zero_field();
        assert!((k.stress_tensor(1.0, &zero, &x, 0.0, 1.0).unwrap() + p).norm() < 1e-12);
        let id = Field::given(|y: &Vec3, _| *y);
        let s = k.stress_tensor(x.z, &id, &x, 0.0, 1.0).unwrap();
        assert!((s - (p * (2.0 - x.z))).norm() < 1e-8);
    }

    #[test]
    fn normal_reaction_examples() {
        let (s, k) = unit_sphere();
        let zero = VectorField::zero_field();
        let one = Field::given(|_, _| 1.0);
        let b = k.normal_reaction(&zero, &one, &Vec3::x(), 0.0, 1.0, 3.0).unwrap();
        assert!((b + 2.0).abs() < 1e-12);
        let rot = Field::normal_extend(&s, |p, _| Ok(Vec3::z().cross(p)));
        let none = Field::given(|_, _| 0.0);
        let b = k.normal_reaction(&rot, &none, &Vec3::x(), 0.0, 0.0, 1.0).unwrap();
        assert!((b + 1.0).abs() < 1e-12);
    }

    #[test]
    fn stencil_leaving_neighborhood_is_rejected() {
        let (_, k) = unit_sphere();
        let big = k.clone().with_steps(FdSteps { first: 0.6, outer: 0.6, inner: 0.1, time: 1e-4 });
        let r = big.grad_surface_scalar(&Field::given(|x: &Vec3, _| x.x), &Vec3::x(), 0.0);
        assert!(matches!(r, Err(CalcError::StencilOutOfNeighborhood { .. })));
    }

    #[test]
    fn material_derivative_examples() {
        let (_, k) = unit_sphere();
        let f = Field::given(|x: &Vec3, _| x.x);
        let u = Field::given(|x: &Vec3, _| Vec3::z().cross(x));
        let x = Vec3::new(0.6, 0.8, 0.0);
        let v = k.material_derivative(&f, &u, &x, 0.0).unwrap();
        assert!((v - Vec3::z().cross(&x).x).abs() < 1e-9);

        let growing = LevelSetSurface::sphere(1.0).with_time_law(crate::geometry::TimeLaw::LinearScale { rate: 0.1 });
        let kg = Calculus::new(&growing);
        let g2 = growing.clone();
        let d = Field::given_fallible(move |x, t| Ok(g2.signed_distance(x, t)?));
        let u = Field::given(|x: &Vec3, _| x.normalize() * 0.1);
        let x = Vec3::new(0.0, 0.0, 1.0 + 0.1 * 0.5);
        assert!(kg.material_derivative(&d, &u, &x, 0.5).unwrap().abs() < 1e-10);
    }
}
