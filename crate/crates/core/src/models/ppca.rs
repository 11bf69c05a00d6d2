//! Probabilistic PCA: `z ~ N(0, I_M)`, `x | z ~ N(W z + b, σ² I_D)`.
//!
//! The maximum-likelihood solution is closed form in terms of the
//! eigendecomposition of the (1/n) sample covariance with eigenvalues
//! `λ_1 ≥ … ≥ λ_D` and eigenvectors `U`:
//!
//! ```text
//! b  = x̄
//! σ² = mean(λ_{M+1}, …, λ_D)
//! W  = U_M (Λ_M - σ² I)^{1/2}
//! ```
//!
//! `W` is only identified up to a rotation; we fix the rotation to the
//! identity and flip each eigenvector so its first non-negligible
//! coordinate is positive.

use nalgebra::{DMatrix, DVector};

use super::gaussian::standard_normal_vec;
use super::LatentModel;
use crate::error::{MegaError, Result};
use crate::estimators::{data_first_moment, ConditionalMomentSample, Dataset, MomentPair, Variances};
use crate::norms::SymMatrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PpcaModel {
    w: DMatrix<f64>,
    b: DVector<f64>,
    sigma2: f64,
}

impl PpcaModel {
    /// `w` is `d × M` with `M ≤ d`.
    pub fn new(w: DMatrix<f64>, b: DVector<f64>, sigma2: f64) -> Result<Self> {
        let (d, latent) = w.shape();
        if d == 0 || latent == 0 {
            return Err(MegaError::invalid("loading matrix must be non-empty"));
        }
        if latent > d {
            return Err(MegaError::invalid(format!(
                "latent dimension {latent} exceeds data dimension {d}"
            )));
        }
        if b.len() != d {
            return Err(MegaError::invalid(format!(
                "offset has length {}, expected {d}",
                b.len()
            )));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(MegaError::invalid(format!(
                "sigma2 must be positive and finite, got {sigma2}"
            )));
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(MegaError::invalid("pPCA parameters must be finite"));
        }
        Ok(PpcaModel { w, b, sigma2 })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }
}

/// Closed-form maximum-likelihood pPCA with `latent_dim` factors.
pub fn ppca_fit(s: &Dataset, latent_dim: usize) -> Result<PpcaModel> {
    let d = s.d();
    if latent_dim == 0 || latent_dim >= d {
        return Err(MegaError::invalid(format!(
            "latent dimension must satisfy 1 <= M < d = {d}, got {latent_dim}"
        )));
    }
    let cov = s.covariance(0)?;
    let eig = cov.into_matrix().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let top = vals[0];
    let rank_tol = top.abs().max(f64::MIN_POSITIVE) * 1e-12 * d as f64;
    let nonzero = vals.iter().filter(|&&l| l > rank_tol).count();
    if top <= 0.0 || nonzero < latent_dim + 1 {
        return Err(MegaError::numerical(format!(
            "sample covariance has {nonzero} non-negligible eigenvalues, need at least {}",
            latent_dim + 1
        )));
    }
    let sigma2 = vals[latent_dim..].iter().sum::<f64>() / (d - latent_dim) as f64;

    let mut w = DMatrix::zeros(d, latent_dim);
    for (col, &idx) in order.iter().take(latent_dim).enumerate() {
        let mut u = eig.eigenvectors.column(idx).into_owned();
        if let Some(first) = u.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                u = -u;
            }
        }
        let scale = (vals[col] - sigma2).max(0.0).sqrt();
        w.set_column(col, &(u * scale));
    }
    PpcaModel::new(w, data_first_moment(s), sigma2)
}

impl LatentModel for PpcaModel {
    fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `b` and `W Wᵀ + σ² I + b bᵀ`.
    fn exact_moments(&self) -> MomentPair {
        let d = self.dim();
        let mut second = &self.w * self.w.transpose() + DMatrix::identity(d, d) * self.sigma2;
        second.ger(1.0, &self.b, &self.b, 1.0);
        MomentPair {
            first: self.b.clone(),
            second: SymMatrix::symmetrized(second),
        }
    }

    fn conditional_moment_sample(&self, m: usize, seed: u64) -> Result<ConditionalMomentSample> {
        if m == 0 {
            return Err(MegaError::invalid("conditional moment sample needs m >= 1"));
        }
        let mut r = rng::seeded(seed);
        let d = self.dim();
        let mut means = DMatrix::zeros(m, d);
        for i in 0..m {
            let z = standard_normal_vec(&mut r, self.latent_dim());
            let mu = &self.w * z + &self.b;
            means.row_mut(i).copy_from(&mu.transpose());
        }
        let vars = DMatrix::from_element(m, d, self.sigma2);
        ConditionalMomentSample::new(means, Variances::Diagonal(vars))
    }

    fn ancestral_sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(MegaError::invalid("ancestral sample needs n >= 1"));
        }
        let mut r = rng::seeded(seed);
        let d = self.dim();
        let sd = self.sigma2.sqrt();
        let mut rows = DMatrix::zeros(n, d);
        for i in 0..n {
            let z = standard_normal_vec(&mut r, self.latent_dim());
            let eps = standard_normal_vec(&mut r, d);
            let x = &self.w * z + &self.b + eps * sd;
            rows.row_mut(i).copy_from(&x.transpose());
        }
        Dataset::new(rows)
    }
}
