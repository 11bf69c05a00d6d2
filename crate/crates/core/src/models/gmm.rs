//! Gaussian mixture model: `z ~ Categorical(π)`, `x | z=j ~ N(μ_j, Σ_j)`.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use super::gaussian::{log_sum_exp, sampling_factor, standard_normal_vec, GaussianDensity};
use super::{FitConfig, LatentModel};
use crate::error::{MegaError, Result};
use crate::estimators::{data_first_moment, ConditionalMomentSample, Dataset, MomentPair, Variances};
use crate::norms::SymMatrix;
use crate::rng::{self, MegaRng};

pub const WEIGHT_SUM_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<SymMatrix>,
}

impl GmmModel {
    /// Validates weights (non-negative, summing to 1 within `1e-9`), shapes,
    /// and that every covariance is positive semidefinite.
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<SymMatrix>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(MegaError::invalid("mixture needs at least one component"));
        }
        if means.len() != k || covariances.len() != k {
            return Err(MegaError::invalid(format!(
                "{k} weights, {} means, {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MegaError::invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MegaError::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(MegaError::invalid("component means have dimension 0"));
        }
        for (j, (mu, cov)) in means.iter().zip(&covariances).enumerate() {
            if mu.len() != d || cov.dim() != d {
                return Err(MegaError::invalid(format!("component {j} has inconsistent dimensions")));
            }
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(MegaError::invalid(format!("component {j} has a non-finite mean")));
            }
            if !cov.is_psd(PSD_TOL) {
                return Err(MegaError::invalid(format!(
                    "covariance of component {j} is not positive semidefinite"
                )));
            }
        }
        Ok(GmmModel {
            weights,
            means,
            covariances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[SymMatrix] {
        &self.covariances
    }

    /// Same model with components reordered: new component `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k()];
        if perm.len() != self.k()
            || perm
                .iter()
                .any(|&p| p >= self.k() || std::mem::replace(&mut seen[p], true))
        {
            return Err(MegaError::invalid("not a permutation of the components"));
        }
        Ok(GmmModel {
            weights: perm.iter().map(|&p| self.weights[p]).collect(),
            means: perm.iter().map(|&p| self.means[p].clone()).collect(),
            covariances: perm.iter().map(|&p| self.covariances[p].clone()).collect(),
        })
    }

    fn densities(&self) -> Result<Vec<GaussianDensity>> {
        self.means
            .iter()
            .zip(&self.covariances)
            .enumerate()
            .map(|(j, (mu, cov))| {
                GaussianDensity::new(mu, cov)
                    .ok_or_else(|| MegaError::numerical(format!("covariance of component {j} is singular")))
            })
            .collect()
    }

    fn component_sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.weights).expect("weights validated at construction")
    }
}

/// `Σ_i log Σ_j π_j N(x_i; μ_j, Σ_j)`.
pub fn gmm_loglik(g: &GmmModel, s: &Dataset) -> Result<f64> {
    if g.dim() != s.d() {
        return Err(MegaError::invalid(format!(
            "model dimension {} does not match data dimension {}",
            g.dim(),
            s.d()
        )));
    }
    let dens = g.densities()?;
    let log_w: Vec<f64> = g.weights.iter().map(|w| w.ln()).collect();
    let x = row_major(s);
    let d = s.d();
    let mut buf = vec![0.0; g.k()];
    let mut total = 0.0;
    for row in x.chunks_exact(d) {
        for (j, dj) in dens.iter().enumerate() {
            buf[j] = log_w[j] + dj.log_pdf(row);
        }
        total += log_sum_exp(&buf);
    }
    Ok(total)
}

impl LatentModel for GmmModel {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `Σ π_j μ_j` and `Σ π_j (Σ_j + μ_j μ_jᵀ)`.
    fn exact_moments(&self) -> MomentPair {
        let d = self.dim();
        let mut first = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for ((w, mu), cov) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            first += mu * *w;
            second += cov.as_matrix() * *w;
            second.ger(*w, mu, mu, 1.0);
        }
        MomentPair {
            first,
            second: SymMatrix::symmetrized(second),
        }
    }

    fn conditional_moment_sample(&self, m: usize, seed: u64) -> Result<ConditionalMomentSample> {
        if m == 0 {
            return Err(MegaError::invalid("conditional moment sample needs m >= 1"));
        }
        let mut r = rng::seeded(seed);
        let cat = self.component_sampler();
        let d = self.dim();
        let mut means = DMatrix::zeros(m, d);
        let mut covs = Vec::with_capacity(m);
        for i in 0..m {
            let z = cat.sample(&mut r);
            means.row_mut(i).copy_from(&self.means[z].transpose());
            covs.push(self.covariances[z].clone());
        }
        ConditionalMomentSample::new(means, Variances::Full(covs))
    }

    fn ancestral_sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(MegaError::invalid("ancestral sample needs n >= 1"));
        }
        let mut r = rng::seeded(seed);
        let cat = self.component_sampler();
        let factors: Vec<DMatrix<f64>> = self.covariances.iter().map(sampling_factor).collect();
        let d = self.dim();
        let mut rows = DMatrix::zeros(n, d);
        for i in 0..n {
            let z = cat.sample(&mut r);
            let eps = standard_normal_vec(&mut r, d);
            let x = &self.means[z] + &factors[z] * eps;
            rows.row_mut(i).copy_from(&x.transpose());
        }
        Dataset::new(rows)
    }
}

/// Result of [`gmm_fit_em`].
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood of `model` on the training data.
    pub loglik: f64,
    /// Log-likelihood before the first M-step and after every M-step of the winning restart.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// Index of the winning restart (seeded `cfg.seed + restart`).
    pub restart: usize,
    /// Restarts discarded because a component emptied.
    pub degenerate_restarts: usize,
}

/// Fits a `k`-component full-covariance mixture by EM.
///
/// Each restart seeds the means k-means++ style from data points, starts
/// every covariance at the global (1/n) data covariance, and uses uniform
/// weights. EM stops when the log-likelihood improves by less than
/// `cfg.loglik_tol` or after `cfg.max_iter` M-steps. `cfg.variance_floor`
/// is added to every covariance diagonal in each M-step. A restart whose
/// responsibilities empty a component is discarded; the best remaining
/// restart by final log-likelihood wins (ties go to the earliest).
pub fn gmm_fit_em(s: &Dataset, k: usize, cfg: &FitConfig) -> Result<GmmFit> {
    cfg.validate()?;
    if k == 0 {
        return Err(MegaError::invalid("k must be >= 1"));
    }
    if k > s.n() {
        return Err(MegaError::invalid(format!(
            "k = {k} exceeds the {} observations",
            s.n()
        )));
    }
    let x = row_major(s);
    let attempts: Vec<Option<RestartOutcome>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| run_restart(&x, s.n(), s.d(), k, cfg, cfg.seed.wrapping_add(r as u64)))
        .collect();

    let degenerate_restarts = attempts.iter().filter(|a| a.is_none()).count();
    let mut best: Option<(usize, RestartOutcome)> = None;
    for (r, outcome) in attempts.into_iter().enumerate() {
        if let Some(o) = outcome {
            if best.as_ref().is_none_or(|(_, b)| o.loglik > b.loglik) {
                best = Some((r, o));
            }
        }
    }
    let (restart, o) = best.ok_or_else(|| {
        MegaError::numerical(format!(
            "all {} EM restarts for k = {k} degenerated to an empty component",
            cfg.n_restarts
        ))
    })?;
    let model = GmmModel::new(o.weights, o.means, o.covariances)?;
    Ok(GmmFit {
        model,
        loglik: o.loglik,
        loglik_trace: o.trace,
        converged: o.converged,
        restart,
        degenerate_restarts,
    })
}

struct RestartOutcome {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<SymMatrix>,
    loglik: f64,
    trace: Vec<f64>,
    converged: bool,
}

fn row_major(s: &Dataset) -> Vec<f64> {
    s.matrix().transpose().as_slice().to_vec()
}

fn run_restart(x: &[f64], n: usize, d: usize, k: usize, cfg: &FitConfig, seed: u64) -> Option<RestartOutcome> {
    let mut r = rng::seeded(seed);
    let data = Dataset::new(DMatrix::from_row_slice(n, d, x)).ok()?;
    let global = data.covariance(0).ok()?;
    let floor = SymMatrix::identity(d).scale(cfg.variance_floor);
    let mut means = kmeans_pp_seeds(x, n, d, k, &mut r);
    let mut covariances = vec![&global + &floor; k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut resp = vec![0.0; n * k];
    let mut ll = e_step(x, d, &weights, &means, &covariances, &mut resp)?;
    let mut trace = vec![ll];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        m_step(
            x,
            n,
            d,
            &resp,
            cfg.variance_floor,
            &mut weights,
            &mut means,
            &mut covariances,
        )?;
        let next = e_step(x, d, &weights, &means, &covariances, &mut resp)?;
        trace.push(next);
        let improvement = next - ll;
        ll = next;
        if improvement < cfg.loglik_tol {
            converged = true;
            break;
        }
    }
    Some(RestartOutcome {
        weights,
        means,
        covariances,
        loglik: ll,
        trace,
        converged,
    })
}

/// k-means++ seeding: first center uniform, the rest proportional to squared
/// distance from the nearest chosen center.
fn kmeans_pp_seeds(x: &[f64], n: usize, d: usize, k: usize, r: &mut MegaRng) -> Vec<DVector<f64>> {
    let point = |i: usize| &x[i * d..(i + 1) * d];
    let mut centers = vec![r.random_range(0..n)];
    let mut dist2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            r.random_range(0..n)
        };
        centers.push(next);
        for (i, di) in dist2.iter_mut().enumerate() {
            *di = di.min(sq_dist(point(i), point(next)));
        }
    }
    centers
        .into_iter()
        .map(|c| DVector::from_column_slice(point(c)))
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Fills `resp` (row-major `n × k`) and returns the log-likelihood.
fn e_step(
    x: &[f64],
    d: usize,
    weights: &[f64],
    means: &[DVector<f64>],
    covariances: &[SymMatrix],
    resp: &mut [f64],
) -> Option<f64> {
    let k = weights.len();
    let dens: Vec<GaussianDensity> = means
        .iter()
        .zip(covariances)
        .map(|(mu, cov)| GaussianDensity::new(mu, cov))
        .collect::<Option<_>>()?;
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut ll = 0.0;
    for (row, out) in x.chunks_exact(d).zip(resp.chunks_exact_mut(k)) {
        for j in 0..k {
            out[j] = log_w[j] + dens[j].log_pdf(row);
        }
        let lse = log_sum_exp(out);
        for v in out.iter_mut() {
            *v = (*v - lse).exp();
        }
        ll += lse;
    }
    ll.is_finite().then_some(ll)
}

// Returns None when a component receives (numerically) no responsibility.
#[allow(clippy::too_many_arguments)]
fn m_step(
    x: &[f64],
    n: usize,
    d: usize,
    resp: &[f64],
    floor: f64,
    weights: &mut [f64],
    means: &mut [DVector<f64>],
    covariances: &mut [SymMatrix],
) -> Option<()> {
    let k = weights.len();
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
        if !(nk > 1e-10 * n as f64) {
            return None;
        }
        let mut mu = DVector::zeros(d);
        for (i, row) in x.chunks_exact(d).enumerate() {
            let w = resp[i * k + j];
            for a in 0..d {
                mu[a] += w * row[a];
            }
        }
        mu /= nk;
        let mut cov = DMatrix::zeros(d, d);
        for (i, row) in x.chunks_exact(d).enumerate() {
            let w = resp[i * k + j];
            for a in 0..d {
                let da = row[a] - mu[a];
                for b in 0..=a {
                    cov[(a, b)] += w * da * (row[b] - mu[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        cov /= nk;
        for a in 0..d {
            cov[(a, a)] += floor;
        }
        weights[j] = nk / n as f64;
        means[j] = mu;
        covariances[j] = SymMatrix::symmetrized(cov);
    }
    // renormalize against rounding in the responsibility sums
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Some(())
}

/// Single Gaussian at `x̄` with the `1/(n - ddof)` covariance plus `floor·I`.
pub fn single_gaussian_fit(s: &Dataset, ddof: usize, floor: f64) -> Result<GmmModel> {
    let cov = s.covariance(ddof)?;
    let cov = &cov + &SymMatrix::identity(s.d()).scale(floor);
    GmmModel::new(vec![1.0], vec![data_first_moment(s)], vec![cov])
}
