//! Reproducible studies built on the estimators: model comparison, the
//! FME-vs-SE accuracy study over `m`, and the estimator variance study.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{MegaError, Result};
use crate::estimators::{fme_moments, se_moments, ConditionalMomentSample, Dataset, MegaReport, MomentPair, Variances};
use crate::models::gaussian::{sampling_factor, standard_normal_vec};
use crate::models::{LatentModel, Model};
use crate::norms::frobenius_norm;
use crate::rng::{self, derive_seed};

/// Points drawn per model for comparison scatter plots.
pub const COMPARE_SAMPLE_SIZE: usize = 500;
pub const DEFAULT_GAP_M_VALUES: [usize; 4] = [100, 1_000, 10_000, 100_000];
pub const DEFAULT_GAP_SEEDS: usize = 20;

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub name: String,
    pub report: MegaReport,
}

/// Rows in input order plus `ranking`, the row indices sorted by
/// `mega2_f` then `mega1_f` (stable, so exact ties keep input order).
#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub ranking: Vec<usize>,
}

pub fn compare(data: &Dataset, models: &[(String, Model)], m: usize, seed: u64) -> Result<Comparison> {
    if models.len() < 2 {
        return Err(MegaError::invalid(format!(
            "comparison needs at least 2 models, got {}",
            models.len()
        )));
    }
    for (name, model) in models {
        if model.dim() != data.d() {
            return Err(MegaError::invalid(format!(
                "model '{name}' has dimension {}, data has {}",
                model.dim(),
                data.d()
            )));
        }
    }
    let rows = models
        .iter()
        .map(|(name, model)| {
            Ok(ComparisonRow {
                name: name.clone(),
                report: model.mega(data, m, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ranking: Vec<usize> = (0..rows.len()).collect();
    ranking.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a].report, &rows[b].report);
        ra.mega2_f
            .total_cmp(&rb.mega2_f)
            .then(ra.mega1_f.total_cmp(&rb.mega1_f))
    });
    Ok(Comparison { rows, ranking })
}

/// Minimal standalone SVG scatter of the first two coordinates.
/// Each layer is `(label, colour, points)`.
pub fn svg_scatter(title: &str, layers: &[(&str, &str, &Dataset)]) -> Result<String> {
    if layers.is_empty() {
        return Err(MegaError::invalid("scatter needs at least one layer"));
    }
    if layers.iter().any(|(_, _, s)| s.d() < 2) {
        return Err(MegaError::invalid("scatter needs at least two coordinates"));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (_, _, s) in layers {
        for i in 0..s.n() {
            let (x, y) = (s.matrix()[(i, 0)], s.matrix()[(i, 1)]);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    let (w, h, pad) = (480.0, 480.0, 30.0);
    let sx = (x1 - x0).max(1e-12);
    let sy = (y1 - y0).max(1e-12);
    let px = |x: f64| pad + (x - x0) / sx * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / sy * (h - 2.0 * pad);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{pad}" y="18" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    for (li, (label, colour, s)) in layers.iter().enumerate() {
        let _ = writeln!(out, r#"<g fill="{}" fill-opacity="0.55">"#, escape(colour));
        for i in 0..s.n() {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#,
                px(s.matrix()[(i, 0)]),
                py(s.matrix()[(i, 1)])
            );
        }
        let _ = writeln!(out, "</g>");
        let ly = h - 8.0 - 14.0 * (layers.len() - 1 - li) as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{}">{}</text>"#,
            w - 150.0,
            escape(colour),
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Fme,
    Se,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Fme => "fme",
            EstimatorKind::Se => "se",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRecord {
    pub m: usize,
    /// Replicate index; the RNG seed is derived from it and the study seed.
    pub replicate: usize,
    pub estimator: EstimatorKind,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapMedian {
    pub m: usize,
    pub fme: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStudy {
    pub exact_second_norm: f64,
    /// Ordered by `m`, replicate, then estimator (FME first).
    pub records: Vec<GapRecord>,
    /// One row per `m`, in input order.
    pub medians: Vec<GapMedian>,
}

/// `‖FME₂ - exact₂‖_F` and `‖SE₂ - exact₂‖_F` for every `m` and replicate.
///
/// The SE uses an ancestral sample of size `m` that shares its latent draws
/// with the FME (see [`emission_sample`]), so each replicate compares the
/// two estimators on the same `z_1..z_m`. Replicate `r` draws latents from
/// `derive_seed(seed, r)`.
pub fn gap_study<M: LatentModel + Sync>(model: &M, m_values: &[usize], n_seeds: usize, seed: u64) -> Result<GapStudy> {
    if m_values.is_empty() || m_values.contains(&0) {
        return Err(MegaError::invalid("m values must be non-empty and positive"));
    }
    if n_seeds == 0 {
        return Err(MegaError::invalid("gap study needs at least one seed"));
    }
    let exact = model.exact_moments();
    let jobs: Vec<(usize, usize)> = m_values
        .iter()
        .flat_map(|&m| (0..n_seeds).map(move |r| (m, r)))
        .collect();
    let gaps: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(m, r)| {
            let rs = derive_seed(seed, r as u64);
            let (fme, se) = paired_estimates(model, m, rs)?;
            Ok((second_gap(&fme, &exact), second_gap(&se, &exact)))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(2 * jobs.len());
    for (&(m, replicate), &(f, s)) in jobs.iter().zip(&gaps) {
        records.push(GapRecord {
            m,
            replicate,
            estimator: EstimatorKind::Fme,
            gap: f,
        });
        records.push(GapRecord {
            m,
            replicate,
            estimator: EstimatorKind::Se,
            gap: s,
        });
    }
    let medians = m_values
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let chunk = &gaps[i * n_seeds..(i + 1) * n_seeds];
            GapMedian {
                m,
                fme: median(chunk.iter().map(|g| g.0).collect()),
                se: median(chunk.iter().map(|g| g.1).collect()),
            }
        })
        .collect();
    Ok(GapStudy {
        exact_second_norm: frobenius_norm(&exact.second),
        records,
        medians,
    })
}

fn paired_estimates<M: LatentModel>(model: &M, m: usize, seed: u64) -> Result<(MomentPair, MomentPair)> {
    let cms = model.conditional_moment_sample(m, seed)?;
    let x = emission_sample(&cms, derive_seed(seed, 1))?;
    Ok((fme_moments(&cms), se_moments(&x)))
}

/// One point `x_i ~ N(E[x|z_i], Var[x|z_i])` per latent draw.
///
/// For Gaussian emissions this completes the conditional moments into an
/// ancestral sample over the same latents.
pub fn emission_sample(cms: &ConditionalMomentSample, seed: u64) -> Result<Dataset> {
    let (m, d) = (cms.m(), cms.d());
    let mut r = rng::seeded(seed);
    let mut rows = DMatrix::zeros(m, d);
    for i in 0..m {
        let eps = standard_normal_vec(&mut r, d);
        let noise = match cms.variances() {
            Variances::Diagonal(v) => eps.component_mul(&v.row(i).transpose().map(f64::sqrt)),
            Variances::Full(v) => sampling_factor(&v[i]) * eps,
        };
        let x = cms.means().row(i).transpose() + noise;
        rows.row_mut(i).copy_from(&x.transpose());
    }
    Dataset::new(rows)
}

fn second_gap(est: &MomentPair, exact: &MomentPair) -> f64 {
    frobenius_norm(&(&est.second - &exact.second))
}

/// Median of a non-empty sample; the mean of the two middle values for even sizes.
pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty(), "median of an empty sample");
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateVariance {
    pub i: usize,
    pub fme: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryVariance {
    pub i: usize,
    pub j: usize,
    pub fme: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStudy {
    pub m: usize,
    pub replications: usize,
    pub first: Vec<CoordinateVariance>,
    /// Upper triangle `i <= j`, row-major.
    pub second: Vec<EntryVariance>,
}

impl VarianceStudy {
    /// Fraction of first-moment coordinates and second-moment entries with
    /// `Var(FME) <= Var(SE)`.
    pub fn fraction_dominated(&self) -> f64 {
        let total = self.first.len() + self.second.len();
        let hits =
            self.first.iter().filter(|c| c.fme <= c.se).count() + self.second.iter().filter(|e| e.fme <= e.se).count();
        hits as f64 / total as f64
    }

    /// Largest `Var(FME) / Var(SE)` over every coordinate and entry
    /// (0 when both variances vanish).
    pub fn max_ratio(&self) -> f64 {
        self.first
            .iter()
            .map(|c| (c.fme, c.se))
            .chain(self.second.iter().map(|e| (e.fme, e.se)))
            .map(|(f, s)| if f == 0.0 { 0.0 } else { f / s })
            .fold(0.0, f64::max)
    }
}

/// Empirical variance (denominator `R - 1`) of the FME and SE over `R`
/// independent replications, each with `m` draws.
pub fn variance_study<M: LatentModel + Sync>(
    model: &M,
    m: usize,
    replications: usize,
    seed: u64,
) -> Result<VarianceStudy> {
    if m == 0 {
        return Err(MegaError::invalid("m must be >= 1"));
    }
    if replications < 2 {
        return Err(MegaError::invalid(format!(
            "need at least 2 replications, got {replications}"
        )));
    }
    let reps: Vec<(MomentPair, MomentPair)> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let rs = derive_seed(seed, r as u64);
            let (fme, se) = paired_estimates(model, m, rs)?;
            Ok((fme, se))
        })
        .collect::<Result<_>>()?;

    let d = model.dim();
    let var_of = |f: &dyn Fn(&MomentPair) -> f64, pick_se: bool| {
        sample_variance(reps.iter().map(|(a, b)| f(if pick_se { b } else { a })))
    };
    let first = (0..d)
        .map(|i| CoordinateVariance {
            i,
            fme: var_of(&|p| p.first[i], false),
            se: var_of(&|p| p.first[i], true),
        })
        .collect();
    let mut second = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            second.push(EntryVariance {
                i,
                j,
                fme: var_of(&|p| p.second.get(i, j), false),
                se: var_of(&|p| p.second.get(i, j), true),
            });
        }
    }
    Ok(VarianceStudy {
        m,
        replications,
        first,
        second,
    })
}

/// Two-pass unbiased variance.
fn sample_variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_three_cluster, three_cluster_model};
    use crate::models::GmmModel;
    use crate::norms::SymMatrix;
    use nalgebra::DVector;

    fn single(mean: f64) -> Model {
        Model::Gmm(
            GmmModel::new(
                vec![1.0],
                vec![DVector::from_vec(vec![mean, 0.0])],
                vec![SymMatrix::identity(2)],
            )
            .unwrap(),
        )
    }

    #[test]
    fn compare_ranks_and_keeps_ties_in_input_order() {
        let (s, g) = gen_three_cluster(300, 1).unwrap();
        let models = vec![
            ("far".to_string(), single(10.0)),
            ("truth".to_string(), Model::Gmm(g.clone())),
            ("truth-again".to_string(), Model::Gmm(g)),
        ];
        let c = compare(&s, &models, 0, 0).unwrap();
        assert_eq!(c.ranking, vec![1, 2, 0]);
        assert_eq!(c.rows[1].report, c.rows[2].report);
        assert!(compare(&s, &models[..1], 0, 0).is_err());
    }

    #[test]
    fn compare_rejects_dimension_mismatch() {
        let s = Dataset::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(compare(&s, &[("a".into(), single(0.0)), ("b".into(), single(1.0))], 0, 0).is_err());
    }

    #[test]
    fn emission_sample_matches_model_moments() {
        let g = three_cluster_model();
        let cms = g.conditional_moment_sample(40_000, 5).unwrap();
        let x = emission_sample(&cms, 6).unwrap();
        let se = se_moments(&x);
        let exact = g.exact_moments();
        assert!(second_gap(&se, &exact) < 0.02 * frobenius_norm(&exact.second));

        let p = crate::models::PpcaModel::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.5]),
            nalgebra::DVector::zeros(2),
            0.3,
        )
        .unwrap();
        let x = emission_sample(&p.conditional_moment_sample(40_000, 1).unwrap(), 2).unwrap();
        let exact = p.exact_moments();
        assert!(second_gap(&se_moments(&x), &exact) < 0.03 * frobenius_norm(&exact.second));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn gap_study_layout_and_determinism() {
        let g = three_cluster_model();
        let a = gap_study(&g, &[50, 200], 3, 9).unwrap();
        assert_eq!(a.records.len(), 2 * 3 * 2);
        assert_eq!(a.records[0].estimator, EstimatorKind::Fme);
        assert_eq!(a.records[1].estimator, EstimatorKind::Se);
        assert_eq!(a.records.last().unwrap().m, 200);
        assert_eq!(a.medians.iter().map(|r| r.m).collect::<Vec<_>>(), vec![50, 200]);
        assert_eq!(a, gap_study(&g, &[50, 200], 3, 9).unwrap());
        assert!(gap_study(&g, &[0], 3, 9).is_err());
        assert!(gap_study(&g, &[10], 0, 9).is_err());
    }

    #[test]
    fn single_component_has_zero_fme_variance() {
        let g = GmmModel::new(
            vec![1.0],
            vec![DVector::from_vec(vec![1.0, -1.0])],
            vec![SymMatrix::identity(2)],
        )
        .unwrap();
        let v = variance_study(&g, 20, 10, 3).unwrap();
        assert!(v.first.iter().all(|c| c.fme == 0.0 && c.se > 0.0));
        assert!(v.second.iter().all(|e| e.fme == 0.0 && e.se > 0.0));
        assert_eq!(v.second.len(), 3);
        assert_eq!(v.fraction_dominated(), 1.0);
        assert_eq!(v.max_ratio(), 0.0);
        assert!(variance_study(&g, 20, 1, 3).is_err());
    }

    #[test]
    fn svg_contains_every_point() {
        let a = Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let b = Dataset::from_rows(&[vec![0.5, 0.2]]).unwrap();
        let svg = svg_scatter("a <b>", &[("data", "#1f77b4", &a), ("model", "#d62728", &b)]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("a &lt;b&gt;"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let one_d = Dataset::from_rows(&[vec![0.0]]).unwrap();
        assert!(svg_scatter("x", &[("d", "red", &one_d)]).is_err());
    }
}
