//! Moment Estimators Gap (MEGA) for latent variable generative models.
//!
//! A latent variable model defines `p(x) = ∫ p(x|z) p(z) dz`. Its first two
//! moments can be estimated from the data alone (data estimators), or from
//! the model by averaging the conditional moments `E[x|z]` and `Var[x|z]`
//! over latent draws `z ~ p(z)` (forward model estimators). The gap between
//! the two, collapsed with the Frobenius norm, measures how well the model
//! reproduces the data's first and second moments:
//!
//! ```text
//! 1MEGA-F = | mean(S) - (1/m) Σ E[x|z_i] |_2
//! 2MEGA-F = | Cov_{n-1}(S) + x̄x̄ᵀ - (1/m) Σ (Var[x|z_i] + E[x|z_i]E[x|z_i]ᵀ) |_F
//! ```
//!
//! Modules:
//! - [`norms`]: vector q-norms, Frobenius and operator norms of symmetric matrices.
//! - [`estimators`]: data, forward-model and sample estimators, and [`MegaReport`].
//! - [`models`]: Gaussian mixtures and probabilistic PCA with exact moments.
//! - [`selection`]: AIC, the MEGA-penalized likelihood, k sweeps and α paths.
//! - [`datagen`] / [`io`]: synthetic data and the CSV / key-value file formats.
//! - [`experiments`]: model comparison, FME-vs-SE gap study and variance study.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod models;
pub mod norms;
pub mod rng;
pub mod selection;

pub use error::{MegaError, Result};
pub use estimators::{ConditionalMomentSample, Dataset, MegaReport, MomentPair, Variances};
pub use models::{FitConfig, GmmModel, LatentModel, Model, PpcaModel};
pub use norms::SymMatrix;

/// Monte Carlo size used when callers do not pick one.
pub const DEFAULT_M: usize = 10_000;
