//! Vector and matrix norms used to collapse moment gaps into scalars.
//!
//! The MEGA metric only uses the Frobenius norm. The operator norm (largest
//! absolute eigenvalue, via power iteration) is kept for exploration.

use std::ops::{Add, Sub};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MegaError, Result};
use crate::rng;

/// Symmetric tolerance used by the invariant checks.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Square, finite, symmetric matrix.
///
/// Construction symmetrizes the input as `(M + Mᵀ)/2`, so moment matrices that
/// are symmetric only up to rounding are accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(MegaError::invalid(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(MegaError::invalid("matrix has dimension 0"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(MegaError::invalid("matrix has non-finite entries"));
        }
        Ok(Self::symmetrized(m))
    }

    /// Builds from row-major entries of a `dim × dim` matrix.
    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(MegaError::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `v vᵀ`.
    pub fn outer(v: &DVector<f64>) -> Self {
        SymMatrix(v * v.transpose())
    }

    // Internal constructor for values that are symmetric by construction.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| self.0[(i, j)])
            .collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest eigenvalue is at least `-tol · max(1, |M|_F)`.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol * frobenius_norm(self).max(1.0)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

/// `(Σ |v_i|^q)^(1/q)`.
pub fn vector_qnorm(v: &[f64], q: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(MegaError::invalid("q-norm of an empty vector"));
    }
    if !(q >= 1.0) {
        return Err(MegaError::invalid(format!("q-norm needs q >= 1, got {q}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(MegaError::invalid("q-norm of a vector with non-finite entries"));
    }
    if q == 2.0 {
        return Ok(v.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    if q == 1.0 {
        return Ok(v.iter().map(|x| x.abs()).sum());
    }
    Ok(v.iter().map(|x| x.abs().powf(q)).sum::<f64>().powf(q.recip()))
}

/// `(Σ_ij M_ij²)^(1/2)`; equal to `sqrt(Tr(MᵀM))`.
pub fn frobenius_norm(m: &SymMatrix) -> f64 {
    m.0.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Frobenius norm of an arbitrary dense matrix, rejecting non-finite entries.
pub fn frobenius_norm_dense(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(MegaError::invalid("Frobenius norm of a non-finite matrix"));
    }
    Ok(m.iter().map(|x| x * x).sum::<f64>().sqrt())
}

pub const DEFAULT_POWER_TOL: f64 = 1e-10;
pub const DEFAULT_POWER_MAX_ITER: usize = 1000;
const FALLBACK_START_SEED: u64 = 0x6d65_6761;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorNorm {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest absolute eigenvalue of `m` by power iteration.
///
/// The estimate at step k is `|M v_k|` for the unit iterate `v_k`, which is
/// non-decreasing for symmetric `M` and also converges when `λ` and `-λ` are
/// both dominant. The run starts from the normalized all-ones vector; if that
/// vector is annihilated by `M` the run restarts once from a seeded random
/// unit vector.
pub fn operator_norm(m: &SymMatrix, tol: f64, max_iter: usize) -> Result<OperatorNorm> {
    if !(tol > 0.0) {
        return Err(MegaError::invalid(format!("tolerance must be > 0, got {tol}")));
    }
    if max_iter == 0 {
        return Err(MegaError::invalid("max_iter must be >= 1"));
    }
    let fro = frobenius_norm(m);
    if fro == 0.0 {
        return Ok(OperatorNorm {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let d = m.dim();
    let ones = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let run = power_iterate(m.as_matrix(), ones, tol, max_iter);
    // Stagnation at zero: the start vector lies in the null space.
    if run.value <= fro * f64::EPSILON {
        let mut r = rng::seeded(FALLBACK_START_SEED);
        let v = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
        let v = &v / v.norm();
        return Ok(power_iterate(m.as_matrix(), v, tol, max_iter));
    }
    Ok(run)
}

fn power_iterate(m: &DMatrix<f64>, mut v: DVector<f64>, tol: f64, max_iter: usize) -> OperatorNorm {
    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        let w = m * &v;
        let est = w.norm();
        if est == 0.0 {
            return OperatorNorm {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        if (est - prev).abs() < tol {
            return OperatorNorm {
                value: est,
                iterations: it,
                converged: true,
            };
        }
        prev = est;
        v = w / est;
    }
    OperatorNorm {
        value: prev,
        iterations: max_iter,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sym(dim: usize, entries: &[f64]) -> SymMatrix {
        SymMatrix::from_row_slice(dim, entries).unwrap()
    }

    #[test]
    fn qnorm_examples() {
        assert_eq!(vector_qnorm(&[3.0, 4.0], 2.0).unwrap(), 5.0);
        assert_eq!(vector_qnorm(&[0.0, 0.0, 0.0], 2.0).unwrap(), 0.0);
        assert_eq!(vector_qnorm(&[1.0, -2.0, 2.0], 1.0).unwrap(), 5.0);
        assert_abs_diff_eq!(
            vector_qnorm(&[1.0, 1.0], 3.0).unwrap(),
            2f64.powf(1.0 / 3.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn qnorm_errors() {
        assert!(matches!(vector_qnorm(&[], 2.0), Err(MegaError::InvalidInput(_))));
        assert!(matches!(vector_qnorm(&[1.0], 0.5), Err(MegaError::InvalidInput(_))));
        assert!(matches!(
            vector_qnorm(&[f64::NAN], 2.0),
            Err(MegaError::InvalidInput(_))
        ));
    }

    #[test]
    fn frobenius_examples() {
        assert_abs_diff_eq!(frobenius_norm(&SymMatrix::identity(2)), 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(frobenius_norm(&SymMatrix::zeros(2)), 0.0);
        assert_abs_diff_eq!(
            frobenius_norm(&sym(2, &[1.0, 2.0, 2.0, 3.0])),
            18f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn construction_symmetrizes_and_rejects_bad_input() {
        let m = sym(2, &[1.0, 2.0, 4.0, 3.0]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
        assert!(SymMatrix::new(DMatrix::from_element(2, 3, 1.0)).is_err());
        assert!(SymMatrix::from_row_slice(2, &[1.0, f64::INFINITY, 0.0, 1.0]).is_err());
        assert!(frobenius_norm_dense(&DMatrix::from_element(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn operator_norm_examples() {
        let r = operator_norm(
            &sym(2, &[2.0, 0.0, 0.0, 1.0]),
            DEFAULT_POWER_TOL,
            DEFAULT_POWER_MAX_ITER,
        )
        .unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.value, 2.0, epsilon = 1e-8);
        let r = operator_norm(&SymMatrix::identity(3), DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-8);
        let r = operator_norm(
            &sym(2, &[2.0, 1.0, 1.0, 2.0]),
            DEFAULT_POWER_TOL,
            DEFAULT_POWER_MAX_ITER,
        )
        .unwrap();
        assert_abs_diff_eq!(r.value, 3.0, epsilon = 1e-8);
    }

    #[test]
    fn operator_norm_zero_and_errors() {
        let r = operator_norm(&SymMatrix::zeros(3), 1e-10, 10).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.converged);
        assert!(operator_norm(&SymMatrix::identity(2), 0.0, 10).is_err());
        assert!(operator_norm(&SymMatrix::identity(2), 1e-10, 0).is_err());
    }

    #[test]
    fn operator_norm_falls_back_when_ones_is_in_null_space() {
        // eigenpairs: 2 on (1,-1), 0 on (1,1)
        let m = sym(2, &[1.0, -1.0, -1.0, 1.0]);
        let r = operator_norm(&m, 1e-12, 1000).unwrap();
        assert_abs_diff_eq!(r.value, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn operator_norm_handles_opposite_dominant_eigenvalues() {
        let m = sym(2, &[3.0, 0.0, 0.0, -3.0]);
        let r = operator_norm(&m, 1e-12, 1000).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.value, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn operator_norm_flags_non_convergence() {
        let m = sym(3, &[1.0, 0.0, 0.0, 0.0, 0.999, 0.0, 0.0, 0.0, 0.5]);
        let r = operator_norm(&m, 1e-15, 2).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }

    fn eigen_oracle(m: &SymMatrix) -> Vec<f64> {
        m.as_matrix().clone().symmetric_eigenvalues().iter().cloned().collect()
    }

    fn arb_sym(max_dim: usize) -> impl Strategy<Value = SymMatrix> {
        (1..=max_dim).prop_flat_map(|d| {
            prop::collection::vec(-10.0f64..10.0, d * d).prop_map(move |e| SymMatrix::from_row_slice(d, &e).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn frobenius_dominates_operator(m in arb_sym(6)) {
            let op = operator_norm(&m, 1e-12, 100_000).unwrap();
            prop_assert!(frobenius_norm(&m) + 1e-9 >= op.value);
            let exact = eigen_oracle(&m).iter().fold(0.0f64, |a, l| a.max(l.abs()));
            prop_assert!((op.value - exact).abs() <= 1e-6 * exact.max(1.0));
        }

        #[test]
        fn frobenius_squared_is_eigen_sum(m in arb_sym(5)) {
            let sum_sq: f64 = eigen_oracle(&m).iter().map(|l| l * l).sum();
            let f = frobenius_norm(&m);
            prop_assert!((f * f - sum_sq).abs() <= 1e-9 * sum_sq.max(1.0));
        }

        #[test]
        fn frobenius_homogeneous(m in arb_sym(5), c in -5.0f64..5.0) {
            let lhs = frobenius_norm(&m.scale(c));
            prop_assert!((lhs - c.abs() * frobenius_norm(&m)).abs() <= 1e-10 * lhs.max(1.0));
        }

        #[test]
        fn frobenius_triangle(
            (a, b) in (1usize..=5).prop_flat_map(|d| (
                prop::collection::vec(-10.0f64..10.0, d * d),
                prop::collection::vec(-10.0f64..10.0, d * d),
            ).prop_map(move |(x, y)| (
                SymMatrix::from_row_slice(d, &x).unwrap(),
                SymMatrix::from_row_slice(d, &y).unwrap(),
            )))
        ) {
            prop_assert!(frobenius_norm(&(&a + &b)) <= frobenius_norm(&a) + frobenius_norm(&b) + 1e-12);
        }

        #[test]
        fn qnorm2_matches_row_matrix_frobenius(v in prop::collection::vec(-100.0f64..100.0, 1..20)) {
            let row = DMatrix::from_row_slice(1, v.len(), &v);
            let q = vector_qnorm(&v, 2.0).unwrap();
            prop_assert!((q - frobenius_norm_dense(&row).unwrap()).abs() <= 1e-12 * q.max(1.0));
        }
    }
}
