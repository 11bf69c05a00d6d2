//! Choosing the number of mixture components.
//!
//! Two criteria are computed for every candidate `k`:
//!
//! - AIC `= 2p - 2 ll(S)` with `p = 2k` (lower is better)
//! - the MEGA-penalized likelihood `ll(S) - α (1MEGA-F + sqrt(2MEGA-F))` (higher is better)
//!
//! `ll(S)` is the summed log-likelihood, so the useful range of `α` grows with `n`.
//! Fits do not depend on `α`; a regularization path reuses one set of fits.

use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::error::{MegaError, Result};
use crate::estimators::{Dataset, MegaReport};
use crate::models::gmm::gmm_loglik;
use crate::models::{gmm_fit_em, FitConfig, GmmModel, LatentModel};

/// Default α grid for calibration.
pub const DEFAULT_ALPHA_GRID: [f64; 8] = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

/// `2p - 2 ll` with `p = 2k`.
pub fn aic(loglik: f64, k: usize) -> f64 {
    4.0 * k as f64 - 2.0 * loglik
}

/// `ll - α (1MEGA-F + sqrt(2MEGA-F))`.
pub fn mega_penalized_objective(loglik: f64, report: &MegaReport, alpha: f64) -> f64 {
    loglik - alpha * mega_penalty(report)
}

/// `1MEGA-F + sqrt(2MEGA-F)`.
pub fn mega_penalty(report: &MegaReport) -> f64 {
    report.mega1_f + report.mega2_f.sqrt()
}

/// One fitted candidate, shared across every α.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub k: usize,
    pub outcome: std::result::Result<FittedCandidate, String>,
}

#[derive(Debug, Clone)]
pub struct FittedCandidate {
    pub model: GmmModel,
    pub loglik: f64,
    pub report: MegaReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEntry {
    pub k: usize,
    pub loglik: f64,
    pub aic: f64,
    pub mega1_f: f64,
    pub mega2_f: f64,
    pub penalized_objective: f64,
    pub alpha: f64,
    pub seed: u64,
    pub m_used: usize,
    /// Set when fitting this `k` failed; numeric fields are then NaN.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub alpha: f64,
    /// Ordered by `k`.
    pub entries: Vec<SelectionEntry>,
    pub best_by_aic: usize,
    pub best_by_penalized: usize,
}

impl SelectionResult {
    pub fn entry(&self, k: usize) -> Option<&SelectionEntry> {
        self.entries.iter().find(|e| e.k == k)
    }
}

fn check_range(k_range: &RangeInclusive<usize>) -> Result<()> {
    if k_range.is_empty() || *k_range.start() == 0 {
        return Err(MegaError::invalid(format!(
            "k range {}..={} must be non-empty with minimum >= 1",
            k_range.start(),
            k_range.end()
        )));
    }
    Ok(())
}

/// Fits one mixture per `k` and computes its log-likelihood and MEGA.
///
/// `m == 0` uses exact mixture moments; otherwise the FME over `m` latent
/// draws seeded with `cfg.seed`. Failures are kept per `k`.
pub fn fit_candidates(
    s: &Dataset,
    k_range: RangeInclusive<usize>,
    m: usize,
    cfg: &FitConfig,
) -> Result<Vec<Candidate>> {
    check_range(&k_range)?;
    cfg.validate()?;
    let ks: Vec<usize> = k_range.collect();
    let candidates: Vec<Candidate> = ks
        .par_iter()
        .map(|&k| {
            let outcome = fit_one(s, k, m, cfg).map_err(|e| e.to_string());
            Candidate { k, outcome }
        })
        .collect();
    if candidates.iter().all(|c| c.outcome.is_err()) {
        let reasons: Vec<String> = candidates
            .iter()
            .filter_map(|c| c.outcome.as_ref().err().map(|e| format!("k={}: {e}", c.k)))
            .collect();
        return Err(MegaError::numerical(format!(
            "every candidate failed: {}",
            reasons.join("; ")
        )));
    }
    Ok(candidates)
}

fn fit_one(s: &Dataset, k: usize, m: usize, cfg: &FitConfig) -> Result<FittedCandidate> {
    let fit = gmm_fit_em(s, k, cfg)?;
    let loglik = gmm_loglik(&fit.model, s)?;
    let report = fit.model.mega(s, m, cfg.seed)?;
    Ok(FittedCandidate {
        model: fit.model,
        loglik,
        report,
    })
}

/// Scores already-fitted candidates at one α.
pub fn evaluate(candidates: &[Candidate], alpha: f64, seed: u64) -> Result<SelectionResult> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(MegaError::invalid(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    let mut entries: Vec<SelectionEntry> = candidates
        .iter()
        .map(|c| match &c.outcome {
            Ok(f) => SelectionEntry {
                k: c.k,
                loglik: f.loglik,
                aic: aic(f.loglik, c.k),
                mega1_f: f.report.mega1_f,
                mega2_f: f.report.mega2_f,
                penalized_objective: mega_penalized_objective(f.loglik, &f.report, alpha),
                alpha,
                seed,
                m_used: f.report.m_used,
                failure: None,
            },
            Err(e) => SelectionEntry {
                k: c.k,
                loglik: f64::NAN,
                aic: f64::NAN,
                mega1_f: f64::NAN,
                mega2_f: f64::NAN,
                penalized_objective: f64::NAN,
                alpha,
                seed,
                m_used: 0,
                failure: Some(e.clone()),
            },
        })
        .collect();
    entries.sort_by_key(|e| e.k);

    let ok = || entries.iter().filter(|e| e.failure.is_none());
    // strict comparisons keep the smaller k on ties
    let best_by_aic = ok()
        .fold(None::<&SelectionEntry>, |best, e| match best {
            Some(b) if b.aic <= e.aic => Some(b),
            _ => Some(e),
        })
        .map(|e| e.k)
        .ok_or_else(|| MegaError::numerical("no candidate was fitted successfully"))?;
    let best_by_penalized = ok()
        .fold(None::<&SelectionEntry>, |best, e| match best {
            Some(b) if b.penalized_objective >= e.penalized_objective => Some(b),
            _ => Some(e),
        })
        .map(|e| e.k)
        .expect("non-empty when AIC selection succeeded");
    Ok(SelectionResult {
        alpha,
        entries,
        best_by_aic,
        best_by_penalized,
    })
}

pub fn select_k(
    s: &Dataset,
    k_range: RangeInclusive<usize>,
    alpha: f64,
    m: usize,
    cfg: &FitConfig,
) -> Result<SelectionResult> {
    let candidates = fit_candidates(s, k_range, m, cfg)?;
    evaluate(&candidates, alpha, cfg.seed)
}

/// One selection per α (ascending), all sharing the same fits.
pub fn regularization_path(
    s: &Dataset,
    k_range: RangeInclusive<usize>,
    alphas: &[f64],
    m: usize,
    cfg: &FitConfig,
) -> Result<Vec<SelectionResult>> {
    check_alphas(alphas)?;
    let candidates = fit_candidates(s, k_range, m, cfg)?;
    path_from_candidates(&candidates, alphas, cfg.seed)
}

pub fn path_from_candidates(candidates: &[Candidate], alphas: &[f64], seed: u64) -> Result<Vec<SelectionResult>> {
    check_alphas(alphas)?;
    alphas.iter().map(|&a| evaluate(candidates, a, seed)).collect()
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(MegaError::invalid("alpha list is empty"));
    }
    if alphas.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(MegaError::invalid("alphas must be sorted ascending"));
    }
    Ok(())
}

/// Smallest positive α whose penalized selection agrees across every
/// replicate path (one path per data seed, all on the same α grid).
/// Returns the α and the agreed `k`.
pub fn calibrate_alpha(paths: &[Vec<SelectionResult>]) -> Option<(f64, usize)> {
    let first = paths.first()?;
    (0..first.len()).find_map(|i| {
        let alpha = first[i].alpha;
        if alpha <= 0.0 {
            return None;
        }
        let k = first[i].best_by_penalized;
        paths
            .iter()
            .all(|p| p.get(i).is_some_and(|r| r.alpha == alpha && r.best_by_penalized == k))
            .then_some((alpha, k))
    })
}
