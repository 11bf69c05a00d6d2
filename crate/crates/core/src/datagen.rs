//! Synthetic datasets: a three-cluster Gaussian mixture, two interleaving
//! moons, and samples from any user-supplied mixture.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MegaError, Result};
use crate::estimators::Dataset;
use crate::models::{GmmModel, LatentModel};
use crate::norms::SymMatrix;
use crate::rng;

/// Generating means of the three-cluster mixture.
pub const THREE_CLUSTER_MEANS: [[f64; 2]; 3] = [[0.0, 0.0], [4.0, 0.0], [2.0, 3.5]];
/// Isotropic variance of every three-cluster component.
pub const THREE_CLUSTER_VARIANCE: f64 = 0.5;
pub const DEFAULT_MOONS_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    ThreeCluster,
    Moons,
    CustomGmm,
}

impl std::str::FromStr for SyntheticKind {
    type Err = MegaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three_cluster" | "three-cluster" => Ok(SyntheticKind::ThreeCluster),
            "moons" => Ok(SyntheticKind::Moons),
            "custom_gmm" | "custom-gmm" => Ok(SyntheticKind::CustomGmm),
            other => Err(MegaError::invalid(format!("unknown dataset kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    /// Moons only.
    pub noise: f64,
    pub seed: u64,
    /// Required for [`SyntheticKind::CustomGmm`].
    pub generator_model: Option<GmmModel>,
}

impl SyntheticSpec {
    /// Data plus the generating mixture when one exists.
    pub fn generate(&self) -> Result<(Dataset, Option<GmmModel>)> {
        if self.n == 0 {
            return Err(MegaError::invalid("n must be >= 1"));
        }
        if !(self.noise >= 0.0) {
            return Err(MegaError::invalid("noise must be >= 0"));
        }
        match self.kind {
            SyntheticKind::ThreeCluster => {
                let (s, g) = gen_three_cluster(self.n, self.seed)?;
                Ok((s, Some(g)))
            }
            SyntheticKind::Moons => Ok((gen_moons(self.n, self.noise, self.seed)?, None)),
            SyntheticKind::CustomGmm => {
                let g = self
                    .generator_model
                    .clone()
                    .ok_or_else(|| MegaError::invalid("custom_gmm needs a generator model"))?;
                Ok((g.ancestral_sample(self.n, self.seed)?, Some(g)))
            }
        }
    }
}

/// The fixed 2-D, equal-weight, three-component mixture behind [`gen_three_cluster`].
pub fn three_cluster_model() -> GmmModel {
    let means = THREE_CLUSTER_MEANS
        .iter()
        .map(|m| DVector::from_column_slice(m))
        .collect();
    let cov = SymMatrix::identity(2).scale(THREE_CLUSTER_VARIANCE);
    GmmModel::new(vec![1.0 / 3.0; 3], means, vec![cov; 3]).expect("constant model is valid")
}

pub fn gen_three_cluster(n: usize, seed: u64) -> Result<(Dataset, GmmModel)> {
    if n < 3 {
        return Err(MegaError::invalid(format!("three-cluster data needs n >= 3, got {n}")));
    }
    let g = three_cluster_model();
    Ok((g.ancestral_sample(n, seed)?, g))
}

/// Two interleaving half circles.
///
/// The first `n/2` points follow `(cos t, sin t)` and the remaining ones
/// `(1 - cos t, 0.5 - sin t)`, `t` evenly spaced on `[0, π]`, each perturbed by
/// `N(0, noise²)` per coordinate.
pub fn gen_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(MegaError::invalid(format!("moons need n >= 2, got {n}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(MegaError::invalid("noise must be finite and >= 0"));
    }
    let upper = n / 2;
    let lower = n - upper;
    let mut r = rng::seeded(seed);
    let mut rows = DMatrix::zeros(n, 2);
    let mut i = 0;
    for (count, is_upper) in [(upper, true), (lower, false)] {
        for t in arc_params(count) {
            let (x, y) = if is_upper {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            rows[(i, 0)] = x + noise * r.sample::<f64, _>(StandardNormal);
            rows[(i, 1)] = y + noise * r.sample::<f64, _>(StandardNormal);
            i += 1;
        }
    }
    Dataset::new(rows)
}

fn arc_params(count: usize) -> impl Iterator<Item = f64> {
    let step = if count > 1 {
        std::f64::consts::PI / (count - 1) as f64
    } else {
        0.0
    };
    (0..count).map(move |i| i as f64 * step)
}
