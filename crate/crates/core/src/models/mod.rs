//! Built-in latent variable generative models.
//!
//! Both families expose the same [`LatentModel`] surface: exact marginal
//! moments (the oracle), conditional-moment sampling (the FME input), and
//! ancestral sampling (the SE input).

pub(crate) mod gaussian;
pub mod gmm;
pub mod ppca;

pub use gmm::{gmm_fit_em, GmmFit, GmmModel};
pub use ppca::{ppca_fit, PpcaModel};

use crate::error::{MegaError, Result};
use crate::estimators::{self, ConditionalMomentSample, Dataset, MegaReport, MomentPair};

/// EM controls.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Absolute log-likelihood improvement below which EM stops.
    pub loglik_tol: f64,
    pub n_restarts: usize,
    /// Added to every covariance diagonal in each M-step.
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 500,
            loglik_tol: 1e-6,
            n_restarts: 5,
            variance_floor: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(MegaError::invalid("max_iter must be >= 1"));
        }
        if !(self.loglik_tol > 0.0) {
            return Err(MegaError::invalid("loglik_tol must be > 0"));
        }
        if self.n_restarts == 0 {
            return Err(MegaError::invalid("n_restarts must be >= 1"));
        }
        if !(self.variance_floor > 0.0) || !self.variance_floor.is_finite() {
            return Err(MegaError::invalid("variance_floor must be a positive finite number"));
        }
        Ok(())
    }
}

pub trait LatentModel {
    fn dim(&self) -> usize;

    /// Closed-form first and second moments of `p(x)`.
    fn exact_moments(&self) -> MomentPair;

    /// `m` draws `z_i ~ p(z)` mapped to `(E[x|z_i], Var[x|z_i])`.
    fn conditional_moment_sample(&self, m: usize, seed: u64) -> Result<ConditionalMomentSample>;

    /// `n` points from `z ~ p(z)`, `x ~ p(x|z)`.
    fn ancestral_sample(&self, n: usize, seed: u64) -> Result<Dataset>;

    /// Model-side moments for MEGA: exact when `m == 0`, otherwise the FME over `m` draws.
    fn model_moments(&self, m: usize, seed: u64) -> Result<MomentPair> {
        if m == 0 {
            Ok(self.exact_moments())
        } else {
            Ok(estimators::fme_moments(&self.conditional_moment_sample(m, seed)?))
        }
    }

    /// MEGA of `data` against this model (`m == 0` uses exact moments).
    fn mega(&self, data: &Dataset, m: usize, seed: u64) -> Result<MegaReport> {
        if m == 0 {
            estimators::mega_from_moments(data, &self.exact_moments(), 0, None)
        } else {
            let cms = self.conditional_moment_sample(m, seed)?;
            estimators::mega(data, &cms, Some(seed))
        }
    }
}

/// Either built-in family; what the model file stores.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gmm(GmmModel),
    Ppca(PpcaModel),
}

impl Model {
    pub fn family(&self) -> &'static str {
        match self {
            Model::Gmm(_) => "gmm",
            Model::Ppca(_) => "ppca",
        }
    }
}

impl From<GmmModel> for Model {
    fn from(g: GmmModel) -> Self {
        Model::Gmm(g)
    }
}

impl From<PpcaModel> for Model {
    fn from(p: PpcaModel) -> Self {
        Model::Ppca(p)
    }
}

impl LatentModel for Model {
    fn dim(&self) -> usize {
        match self {
            Model::Gmm(g) => g.dim(),
            Model::Ppca(p) => p.dim(),
        }
    }

    fn exact_moments(&self) -> MomentPair {
        match self {
            Model::Gmm(g) => g.exact_moments(),
            Model::Ppca(p) => p.exact_moments(),
        }
    }

    fn conditional_moment_sample(&self, m: usize, seed: u64) -> Result<ConditionalMomentSample> {
        match self {
            Model::Gmm(g) => g.conditional_moment_sample(m, seed),
            Model::Ppca(p) => p.conditional_moment_sample(m, seed),
        }
    }

    fn ancestral_sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            Model::Gmm(g) => g.ancestral_sample(n, seed),
            Model::Ppca(p) => p.ancestral_sample(n, seed),
        }
    }
}
