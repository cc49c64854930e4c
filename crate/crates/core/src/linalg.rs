//! Sparse matrices in CSR form with deterministic assembly, sparse direct
//! solves with iterative refinement, and a dense constrained generalized
//! symmetric eigensolver.

use std::io::Write;

use faer::prelude::*;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, IntranodeLbltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Par, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("eigensolver did not converge")]
    Eigen,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    /// Sums duplicate entries after a stable sort by `(row, col)`, so the
    /// result is independent of how the triplets were produced as long as
    /// their order within each `(row, col)` key is fixed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trips {
            debug_assert!(i < nrows && j < ncols);
            if last == Some((i, j)) {
                *values.last_mut().expect("entry") += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(i, j, v)| (j, i, v)).collect())
    }

    /// `u^T A v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mul_vec(v).iter().zip(u).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        let neg = other.triplets().map(|(i, j, v)| (i, j, -v));
        let diff = Self::from_triplets(self.nrows, self.ncols, self.triplets().chain(neg).collect());
        diff.max_abs()
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.max_abs_diff(&self.transpose())
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &CsrMatrix) -> Self {
        Self::from_triplets(self.nrows, self.ncols, self.triplets().chain(other.triplets()).collect())
    }

    /// `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        let mut trips = Vec::new();
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    trips.push((i, j, a * b));
                }
            }
        }
        Self::from_triplets(self.nrows, other.ncols, trips)
    }

    /// Plain-text `row col value` lines.
    pub fn write_triplets<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "# {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

/// Triplet accumulator for block systems.
#[derive(Clone, Debug, Default)]
pub struct BlockBuilder {
    pub entries: Vec<(usize, usize, f64)>,
}

impl BlockBuilder {
    pub fn add_block(&mut self, row_offset: usize, col_offset: usize, m: &CsrMatrix) {
        self.entries.extend(m.triplets().map(|(i, j, v)| (i + row_offset, j + col_offset, v)));
    }

    /// Adds `m` at `(row_offset, col_offset)` and `m^T` at the mirrored
    /// position.
    pub fn add_symmetric_pair(&mut self, row_offset: usize, col_offset: usize, m: &CsrMatrix) {
        for (i, j, v) in m.triplets() {
            self.entries.push((i + row_offset, j + col_offset, v));
            self.entries.push((j + col_offset, i + row_offset, v));
        }
    }

    pub fn build(self, n: usize) -> CsrMatrix {
        CsrMatrix::from_triplets(n, n, self.entries)
    }
}

fn to_faer(m: &CsrMatrix) -> Result<SparseColMat<usize, f64>, LinalgError> {
    let trips: Vec<Triplet<usize, usize, f64>> = m.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::<usize, f64>::try_new_from_triplets(m.nrows, m.ncols, &trips)
        .map_err(|e| LinalgError::Factorization(format!("{e:?}")))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Owned intranodal `L B L^T` factors of a symmetric matrix.
struct LbltFactor {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    subdiag: Vec<f64>,
    perm_fwd: Vec<usize>,
    perm_inv: Vec<usize>,
}

enum Factor {
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Lblt(LbltFactor),
}

/// Which sparse direct factorization to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    /// Supernodal symmetric-indefinite factorization with Bunch-Kaufman
    /// pivoting inside supernodes and a minimum-degree ordering.
    SymmetricIndefinite,
    /// General sparse LU with partial pivoting.
    Lu,
}

/// Sparse direct solver with iterative refinement against the original
/// matrix.
pub struct SparseSolver {
    matrix: CsrMatrix,
    factor: Factor,
}

/// Maximum refinement sweeps after the initial solve.
pub const MAX_REFINEMENT_STEPS: usize = 5;

fn factorize_lblt(matrix: &CsrMatrix) -> Result<LbltFactor, LinalgError> {
    let n = matrix.nrows;
    let lower: Vec<Triplet<usize, usize, f64>> =
        matrix.triplets().filter(|(i, j, _)| i >= j).map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &lower)
        .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
    let symbolic = factorize_symbolic_cholesky(
        a.symbolic(),
        Side::Lower,
        SymmetricOrdering::Amd,
        CholeskySymbolicParams {
            supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
            ..Default::default()
        },
    )
    .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
    let mut values = vec![0.0; symbolic.len_val()];
    let mut subdiag = vec![0.0; n];
    let mut perm_fwd = vec![0usize; n];
    let mut perm_inv = vec![0usize; n];
    let par = Par::Seq;
    let mut mem = MemBuffer::new(symbolic.factorize_numeric_intranode_lblt_scratch::<f64>(par, Default::default()));
    symbolic.factorize_numeric_intranode_lblt(
        &mut values,
        &mut subdiag,
        &mut perm_fwd,
        &mut perm_inv,
        a.as_ref(),
        Side::Lower,
        par,
        MemStack::new(&mut mem),
        Default::default(),
    );
    Ok(LbltFactor { symbolic, values, subdiag, perm_fwd, perm_inv })
}

impl LbltFactor {
    fn solve_in_place(&self, b: &mut Mat<f64>) {
        let n = self.perm_fwd.len();
        let perm = faer::perm::PermRef::new_checked(&self.perm_fwd, &self.perm_inv, n);
        let lblt = IntranodeLbltRef::new(&self.symbolic, &self.values, &self.subdiag, perm);
        let mut mem = MemBuffer::new(lblt.solve_in_place_scratch::<f64>(b.ncols(), Par::Seq));
        lblt.solve_in_place_with_conj(Conj::No, b.as_mut(), Par::Seq, MemStack::new(&mut mem));
    }
}

impl SparseSolver {
    /// Symmetric-indefinite factorization; only the lower triangle of
    /// `matrix` is read by the factorization, the full matrix by the
    /// refinement.
    pub fn symmetric(matrix: &CsrMatrix) -> Result<Self, LinalgError> {
        Self::new(matrix, FactorKind::SymmetricIndefinite)
    }

    pub fn lu(matrix: &CsrMatrix) -> Result<Self, LinalgError> {
        Self::new(matrix, FactorKind::Lu)
    }

    pub fn new(matrix: &CsrMatrix, kind: FactorKind) -> Result<Self, LinalgError> {
        if matrix.nrows != matrix.ncols {
            return Err(LinalgError::Dimension("direct solve needs a square matrix".into()));
        }
        let factor = match kind {
            FactorKind::Lu => {
                Factor::Lu(to_faer(matrix)?.sp_lu().map_err(|e| LinalgError::Factorization(format!("{e:?}")))?)
            }
            FactorKind::SymmetricIndefinite => Factor::Lblt(factorize_lblt(matrix)?),
        };
        Ok(Self { matrix: matrix.clone(), factor })
    }

    fn solve_in_place(&self, b: &mut Mat<f64>) {
        match &self.factor {
            Factor::Lu(lu) => lu.solve_in_place(b.as_mut()),
            Factor::Lblt(f) => f.solve_in_place(b),
        }
    }

    fn raw_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.solve_in_place(&mut b);
        (0..rhs.len()).map(|i| b[(i, 0)]).collect()
    }

    /// Solves with iterative refinement until the relative residual reaches
    /// `tol` or stops improving; returns the solution and its relative
    /// residual.
    pub fn solve(&self, rhs: &[f64], tol: f64) -> (Vec<f64>, f64) {
        let bn = norm(rhs);
        if bn == 0.0 {
            return (vec![0.0; rhs.len()], 0.0);
        }
        let mut x = self.raw_solve(rhs);
        let residual = |x: &[f64]| -> Vec<f64> {
            let ax = self.matrix.mul_vec(x);
            rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
        };
        let mut r = residual(&x);
        let mut rel = norm(&r) / bn;
        for _ in 0..MAX_REFINEMENT_STEPS {
            if !rel.is_finite() || rel <= tol {
                break;
            }
            let dx = self.raw_solve(&r);
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let rc = residual(&cand);
            let relc = norm(&rc) / bn;
            if !(relc < rel) {
                break;
            }
            x = cand;
            r = rc;
            rel = relc;
        }
        (x, rel)
    }

    /// Solves for every column of a dense right-hand side without
    /// refinement.
    pub fn solve_many(&self, rhs: &Mat<f64>) -> Mat<f64> {
        let mut b = rhs.clone();
        self.solve_in_place(&mut b);
        b
    }
}

/// Applies the Householder reflector `I - 2 v v^T / (v^T v)` from both sides
/// of a symmetric matrix.
fn reflect_both(m: &mut Mat<f64>, v: &[f64]) {
    let n = v.len();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    if vv == 0.0 {
        return;
    }
    let beta = 2.0 / vv;
    // w = beta * M v, then M <- M - v w^T - w v^T + beta (v^T w) v v^T
    let w: Vec<f64> = (0..n).map(|i| beta * (0..n).map(|j| m[(i, j)] * v[j]).sum::<f64>()).collect();
    let vw: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
    let c = 0.5 * beta * vw;
    let z: Vec<f64> = w.iter().zip(v).map(|(wi, vi)| wi - c * vi).collect();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] -= v[i] * z[j] + z[i] * v[j];
        }
    }
}

/// Householder vectors of a QR factorization of `c^T`, one per constraint
/// row; the trailing `n - k` coordinates after reflection span the null
/// space of `c`.
fn constraint_reflectors(constraints: &[Vec<f64>], n: usize) -> Result<Vec<Vec<f64>>, LinalgError> {
    let k = constraints.len();
    let mut cols: Vec<Vec<f64>> = constraints.to_vec();
    if cols.iter().any(|c| c.len() != n) {
        return Err(LinalgError::Dimension("constraint length".into()));
    }
    let mut reflectors = Vec::with_capacity(k);
    for j in 0..k {
        let x = &cols[j];
        let alpha_norm = x[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = vec![0.0; n];
        if alpha_norm > 0.0 {
            let sign = if x[j] >= 0.0 { 1.0 } else { -1.0 };
            v[j..].copy_from_slice(&x[j..]);
            v[j] += sign * alpha_norm;
        }
        let vv: f64 = v.iter().map(|a| a * a).sum();
        if vv > 0.0 {
            for c in cols.iter_mut().skip(j) {
                let dot: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                let s = 2.0 * dot / vv;
                c.iter_mut().zip(&v).for_each(|(ci, vi)| *ci -= s * vi);
            }
        }
        reflectors.push(v);
    }
    Ok(reflectors)
}

/// Restricts symmetric matrices to the null space of the constraint rows.
pub fn restrict_to_nullspace(mats: &mut [&mut Mat<f64>], constraints: &[Vec<f64>]) -> Result<(), LinalgError> {
    let n = mats.first().map_or(0, |m| m.nrows());
    let k = constraints.len();
    let refl = constraint_reflectors(constraints, n)?;
    for m in mats.iter_mut() {
        for v in &refl {
            reflect_both(m, v);
        }
        **m = Mat::from_fn(n - k, n - k, |i, j| m[(i + k, j + k)]);
    }
    Ok(())
}

/// Ascending eigenvalues of `a x = lambda b x` on the null space of the
/// constraint rows, with `a` symmetric and `b` symmetric positive definite.
pub fn constrained_generalized_eigenvalues(
    a: &Mat<f64>,
    b: &Mat<f64>,
    constraints: &[Vec<f64>],
) -> Result<Vec<f64>, LinalgError> {
    let mut a = a.clone();
    let mut b = b.clone();
    restrict_to_nullspace(&mut [&mut a, &mut b], constraints)?;
    generalized_eigenvalues(&a, &b)
}

/// Ascending eigenvalues of `a x = lambda b x`.
pub fn generalized_eigenvalues(a: &Mat<f64>, b: &Mat<f64>) -> Result<Vec<f64>, LinalgError> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let llt = b.llt(Side::Lower).map_err(|_| LinalgError::NotPositiveDefinite)?;
    let l = llt.L();
    let mut x = a.clone();
    l.solve_lower_triangular_in_place(&mut x);
    let mut y = x.transpose().to_owned();
    l.solve_lower_triangular_in_place(&mut y);
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (y[(i, j)] + y[(j, i)]));
    let mut ev = sym.self_adjoint_eigenvalues(Side::Lower).map_err(|_| LinalgError::Eigen)?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_in_order() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 1, 2.0), (1, 0, 0.5), (0, 0, 3.0)]);
        assert_eq!(m.row_ptr, vec![0, 2, 3]);
        assert_eq!(m.get(1, 0), 1.5);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![5.0, 1.5]);
        assert_eq!(m.transpose().get(0, 1), 1.5);
    }

    #[test]
    fn direct_solvers_handle_indefinite_system() {
        let m = CsrMatrix::from_triplets(3, 3, vec![(0, 0, 2.0), (0, 2, 1.0), (2, 0, 1.0), (1, 1, 3.0)]);
        for kind in [FactorKind::SymmetricIndefinite, FactorKind::Lu] {
            let solver = SparseSolver::new(&m, kind).unwrap();
            let (x, rel) = solver.solve(&[1.0, 3.0, 2.0], 1e-14);
            assert!(rel < 1e-14, "{kind:?}");
            assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14 && (x[2] + 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn generalized_eigen_with_constraint() {
        let a = Mat::<f64>::from_fn(3, 3, |i, j| if i == j { (i + 1) as f64 } else { 0.0 });
        let b = Mat::<f64>::identity(3, 3);
        let ev = generalized_eigenvalues(&a, &b).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[2] - 3.0).abs() < 1e-12);
        let ev = constrained_generalized_eigenvalues(&a, &b, &[vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(ev.len(), 2);
        assert!((ev[0] - 2.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
        let b2 = Mat::<f64>::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.0 });
        let ev = constrained_generalized_eigenvalues(&a, &b2, &[vec![1.0, 1.0, 0.0]]).unwrap();
        assert!((ev[0] - 0.75).abs() < 1e-12 && (ev[1] - 1.5).abs() < 1e-12);
    }
}
