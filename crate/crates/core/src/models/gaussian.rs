use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::norms::SymMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal with a Cholesky-factored covariance, for densities.
pub(crate) struct GaussianDensity {
    mean: Vec<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    /// `None` when the covariance is not positive definite.
    pub(crate) fn new(mean: &DVector<f64>, cov: &SymMatrix) -> Option<Self> {
        let chol = cov.as_matrix().clone().cholesky()?.unpack();
        let d = mean.len();
        let log_det: f64 = (0..d).map(|i| chol[(i, i)].ln()).sum::<f64>() * 2.0;
        if !log_det.is_finite() {
            return None;
        }
        Some(GaussianDensity {
            mean: mean.as_slice().to_vec(),
            chol,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    pub(crate) fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        // forward substitution L y = x - μ
        let mut y = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if d <= 16 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..d {
            let mut acc = x[i] - self.mean[i];
            for (j, yj) in y[..i].iter().enumerate() {
                acc -= self.chol[(i, j)] * yj;
            }
            y[i] = acc / self.chol[(i, i)];
            quad += y[i] * y[i];
        }
        self.log_norm - 0.5 * quad
    }
}

/// Factor `A` with `A Aᵀ = Σ` for sampling; handles singular PSD matrices.
pub(crate) fn sampling_factor(cov: &SymMatrix) -> DMatrix<f64> {
    if let Some(ch) = cov.as_matrix().clone().cholesky() {
        return ch.unpack();
    }
    let eig = cov.as_matrix().clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

pub(crate) fn standard_normal_vec<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standard_normal_density_at_origin() {
        let g = GaussianDensity::new(&DVector::zeros(2), &SymMatrix::identity(2)).unwrap();
        assert_abs_diff_eq!(g.log_pdf(&[0.0, 0.0]), -LN_2PI, epsilon = 1e-12);
        assert_abs_diff_eq!(LN_2PI, (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn density_matches_closed_form_correlated() {
        let cov = SymMatrix::from_row_slice(2, &[2.0, 0.6, 0.6, 1.0]).unwrap();
        let g = GaussianDensity::new(&DVector::from_vec(vec![1.0, -1.0]), &cov).unwrap();
        let det: f64 = 2.0 * 1.0 - 0.36;
        let (dx, dy) = (0.5f64, 0.25f64);
        // inverse of [[a,b],[b,c]] = [[c,-b],[-b,a]]/det
        let quad = (1.0 * dx * dx - 2.0 * 0.6 * dx * dy + 2.0 * dy * dy) / det;
        let expected = -LN_2PI - 0.5 * det.ln() - 0.5 * quad;
        assert_abs_diff_eq!(g.log_pdf(&[1.5, -0.75]), expected, epsilon = 1e-12);
    }

    #[test]
    fn singular_covariance_has_no_density_but_samples() {
        let cov = SymMatrix::from_row_slice(2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(GaussianDensity::new(&DVector::zeros(2), &cov).is_none());
        let a = sampling_factor(&cov);
        let back = &a * a.transpose();
        for (x, y) in back.iter().zip(cov.as_matrix().iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn lse_is_stable() {
        assert_abs_diff_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
