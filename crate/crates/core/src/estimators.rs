//! Data estimators (DE), forward model estimators (FME) and sample
//! estimators (SE) of the first two moments, and the MEGA report that
//! compares DE against FME.
//!
//! Second moments are `d × d` outer-product matrices `E[x xᵀ]`.
//!
//! - DE:  `x̄` and `Cov_{n-1}(S) + x̄ x̄ᵀ`
//! - FME: `(1/m) Σ E[x|z_i]` and `(1/m) Σ (Var[x|z_i] + E[x|z_i] E[x|z_i]ᵀ)`, `z_i ~ p(z)`
//! - SE:  `(1/G) Σ x̃_i` and `(1/G) Σ x̃_i x̃_iᵀ` over ancestral samples `x̃_i`

use nalgebra::{DMatrix, DVector};

use crate::error::{MegaError, Result};
use crate::norms::{frobenius_norm, vector_qnorm, SymMatrix};

/// `n` observations of a `d`-dimensional vector, stored as an `n × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: DMatrix<f64>,
}

impl Dataset {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(MegaError::invalid("dataset has no rows"));
        }
        if rows.ncols() == 0 {
            return Err(MegaError::invalid("dataset has dimension 0"));
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            // column-major position
            let row = pos % rows.nrows();
            return Err(MegaError::invalid(format!("non-finite value in row {row}")));
        }
        Ok(Dataset { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(MegaError::invalid(format!(
                "row {i} has length {}, expected {d}",
                rows[i].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), d, &flat))
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Covariance with `1/(n - ddof)` normalization.
    pub fn covariance(&self, ddof: usize) -> Result<SymMatrix> {
        let n = self.n();
        if n <= ddof {
            return Err(MegaError::invalid(format!(
                "covariance with ddof={ddof} needs more than {ddof} rows, got {n}"
            )));
        }
        let mean = data_first_moment(self);
        let mut centered = self.rows.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let scatter = centered.transpose() * &centered;
        Ok(SymMatrix::symmetrized(scatter / (n - ddof) as f64))
    }
}

/// Per-draw conditional variances, either diagonal or full.
#[derive(Debug, Clone, PartialEq)]
pub enum Variances {
    /// `m × d`, row `i` holds the diagonal of `Var[x|z_i]`.
    Diagonal(DMatrix<f64>),
    Full(Vec<SymMatrix>),
}

/// `m` draws of `(E[x|z_i], Var[x|z_i])` for `z_i ~ p(z)`.
///
/// This is the model side of the forward model estimator and the only thing
/// MEGA needs from a model, so any external model can be evaluated by
/// exporting it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMomentSample {
    means: DMatrix<f64>,
    variances: Variances,
}

impl ConditionalMomentSample {
    /// `means` is `m × d`.
    pub fn new(means: DMatrix<f64>, variances: Variances) -> Result<Self> {
        let (m, d) = means.shape();
        if m == 0 || d == 0 {
            return Err(MegaError::invalid("conditional moment sample is empty"));
        }
        for (i, row) in means.row_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(MegaError::Validation {
                    row: i,
                    message: "non-finite conditional mean".into(),
                });
            }
        }
        match &variances {
            Variances::Diagonal(v) => {
                if v.shape() != (m, d) {
                    return Err(MegaError::invalid(format!(
                        "diagonal variances are {:?}, expected ({m}, {d})",
                        v.shape()
                    )));
                }
                for (i, row) in v.row_iter().enumerate() {
                    if row.iter().any(|x| !x.is_finite()) {
                        return Err(MegaError::Validation {
                            row: i,
                            message: "non-finite variance".into(),
                        });
                    }
                    if row.iter().any(|&x| x < 0.0) {
                        return Err(MegaError::Validation {
                            row: i,
                            message: "negative diagonal variance".into(),
                        });
                    }
                }
            }
            Variances::Full(v) => {
                if v.len() != m {
                    return Err(MegaError::invalid(format!(
                        "{} covariance matrices for {m} means",
                        v.len()
                    )));
                }
                for (i, cov) in v.iter().enumerate() {
                    if cov.dim() != d {
                        return Err(MegaError::Validation {
                            row: i,
                            message: format!("covariance has dimension {}, expected {d}", cov.dim()),
                        });
                    }
                    if (0..d).any(|j| cov.get(j, j) < 0.0) {
                        return Err(MegaError::Validation {
                            row: i,
                            message: "negative diagonal variance".into(),
                        });
                    }
                }
            }
        }
        Ok(ConditionalMomentSample { means, variances })
    }

    pub fn m(&self) -> usize {
        self.means.nrows()
    }

    pub fn d(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn variances(&self) -> &Variances {
        &self.variances
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.variances, Variances::Diagonal(_))
    }

    /// Full covariance of draw `i`.
    pub fn variance(&self, i: usize) -> SymMatrix {
        match &self.variances {
            Variances::Diagonal(v) => SymMatrix::symmetrized(DMatrix::from_diagonal(&v.row(i).transpose())),
            Variances::Full(v) => v[i].clone(),
        }
    }
}

/// First moment and outer-product second moment of a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    pub first: DVector<f64>,
    pub second: SymMatrix,
}

impl MomentPair {
    pub fn new(first: DVector<f64>, second: SymMatrix) -> Result<Self> {
        if first.len() != second.dim() {
            return Err(MegaError::invalid(format!(
                "first moment has length {}, second moment is {}x{}",
                first.len(),
                second.dim(),
                second.dim()
            )));
        }
        Ok(MomentPair { first, second })
    }

    pub fn d(&self) -> usize {
        self.first.len()
    }

    /// `second - first firstᵀ`.
    pub fn covariance(&self) -> SymMatrix {
        &self.second - &SymMatrix::outer(&self.first)
    }

    /// True when the implied covariance is PSD within `1e-8`.
    pub fn is_distribution(&self) -> bool {
        self.covariance().is_psd(1e-8)
    }
}

/// Gaps between data and forward-model estimators plus their norms.
#[derive(Debug, Clone, PartialEq)]
pub struct MegaReport {
    /// `DE₁ - FME₁`.
    pub gap1: DVector<f64>,
    /// `DE₂ - FME₂`.
    pub gap2: SymMatrix,
    /// `|gap1|_2`.
    pub mega1_f: f64,
    /// `|gap2|_F`.
    pub mega2_f: f64,
    /// Latent draws behind the FME; 0 means exact model moments were used.
    pub m_used: usize,
    pub seed: Option<u64>,
}

/// `x̄`.
pub fn data_first_moment(s: &Dataset) -> DVector<f64> {
    let n = s.n() as f64;
    let mut sum = DVector::zeros(s.d());
    for row in s.rows.row_iter() {
        sum += row.transpose();
    }
    sum / n
}

/// `Cov_{n-1}(S) + x̄ x̄ᵀ`.
pub fn data_second_moment(s: &Dataset) -> Result<SymMatrix> {
    if s.n() < 2 {
        return Err(MegaError::invalid(format!(
            "second-moment data estimator needs n >= 2, got {}",
            s.n()
        )));
    }
    let cov = s.covariance(1)?;
    Ok(&cov + &SymMatrix::outer(&data_first_moment(s)))
}

/// Data estimators of both moments.
pub fn data_moments(s: &Dataset) -> Result<MomentPair> {
    MomentPair::new(data_first_moment(s), data_second_moment(s)?)
}

/// Forward model estimator from conditional moments.
pub fn fme_moments(cms: &ConditionalMomentSample) -> MomentPair {
    let (m, d) = cms.means.shape();
    let mut first = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for (i, row) in cms.means.row_iter().enumerate() {
        let mu = row.transpose();
        second.ger(1.0, &mu, &mu, 1.0);
        first += &mu;
        match &cms.variances {
            Variances::Diagonal(v) => {
                for j in 0..d {
                    second[(j, j)] += v[(i, j)];
                }
            }
            Variances::Full(v) => second += v[i].as_matrix(),
        }
    }
    let inv = 1.0 / m as f64;
    MomentPair {
        first: first * inv,
        second: SymMatrix::symmetrized(second * inv),
    }
}

/// Sample estimator: raw `1/G` averages over generated points.
pub fn se_moments(x: &Dataset) -> MomentPair {
    let g = x.n() as f64;
    let first = data_first_moment(x);
    let second = x.rows.transpose() * &x.rows / g;
    MomentPair {
        first,
        second: SymMatrix::symmetrized(second),
    }
}

/// MEGA of a dataset against a conditional moment sample.
pub fn mega(s: &Dataset, cms: &ConditionalMomentSample, seed: Option<u64>) -> Result<MegaReport> {
    if s.d() != cms.d() {
        return Err(MegaError::invalid(format!(
            "data dimension {} does not match model dimension {}",
            s.d(),
            cms.d()
        )));
    }
    mega_from_moments(s, &fme_moments(cms), cms.m(), seed)
}

/// MEGA against arbitrary model-side moments, e.g. exact ones (`m_used = 0`).
pub fn mega_from_moments(s: &Dataset, model: &MomentPair, m_used: usize, seed: Option<u64>) -> Result<MegaReport> {
    if s.d() != model.d() {
        return Err(MegaError::invalid(format!(
            "data dimension {} does not match model dimension {}",
            s.d(),
            model.d()
        )));
    }
    let de = data_moments(s)?;
    let gap1 = &de.first - &model.first;
    let gap2 = &de.second - &model.second;
    let mega1_f = vector_qnorm(gap1.as_slice(), 2.0)?;
    let mega2_f = frobenius_norm(&gap2);
    Ok(MegaReport {
        gap1,
        gap2,
        mega1_f,
        mega2_f,
        m_used,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ds(rows: &[&[f64]]) -> Dataset {
        Dataset::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn assert_mat(m: &SymMatrix, expected: &[f64]) {
        for (a, b) in m.to_row_major().iter().zip(expected) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn first_moment_examples() {
        assert_eq!(
            data_first_moment(&ds(&[&[0.0, 0.0], &[2.0, 2.0]])).as_slice(),
            &[1.0, 1.0]
        );
        assert_eq!(data_first_moment(&ds(&[&[5.0], &[5.0], &[5.0]])).as_slice(), &[5.0]);
        let cloud = ds(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        assert_eq!(data_first_moment(&cloud).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn second_moment_examples() {
        assert_mat(
            &data_second_moment(&ds(&[&[0.0, 0.0], &[2.0, 2.0]])).unwrap(),
            &[3.0, 3.0, 3.0, 3.0],
        );
        let c = [1.5, -2.0, 0.25];
        let constant = ds(&[&c, &c, &c]);
        let expected: Vec<f64> = c.iter().flat_map(|a| c.iter().map(move |b| a * b)).collect();
        assert_mat(&data_second_moment(&constant).unwrap(), &expected);
        assert_mat(&data_second_moment(&ds(&[&[0.0], &[1.0], &[2.0]])).unwrap(), &[2.0]);
    }

    #[test]
    fn second_moment_needs_two_rows() {
        assert!(matches!(
            data_second_moment(&ds(&[&[1.0, 2.0]])),
            Err(MegaError::InvalidInput(_))
        ));
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(Dataset::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(Dataset::from_rows(&[vec![f64::NAN]]).is_err());
        assert!(Dataset::from_rows(&[]).is_err());
    }

    fn diag_cms(means: &[&[f64]], vars: &[&[f64]]) -> ConditionalMomentSample {
        let d = means[0].len();
        let mf: Vec<f64> = means.iter().flat_map(|r| r.iter().copied()).collect();
        let vf: Vec<f64> = vars.iter().flat_map(|r| r.iter().copied()).collect();
        ConditionalMomentSample::new(
            DMatrix::from_row_slice(means.len(), d, &mf),
            Variances::Diagonal(DMatrix::from_row_slice(vars.len(), d, &vf)),
        )
        .unwrap()
    }

    #[test]
    fn fme_examples() {
        let p = fme_moments(&diag_cms(&[&[0.0, 0.0]], &[&[1.0, 1.0]]));
        assert_eq!(p.first.as_slice(), &[0.0, 0.0]);
        assert_mat(&p.second, &[1.0, 0.0, 0.0, 1.0]);

        let p = fme_moments(&diag_cms(&[&[1.0, 0.0], &[-1.0, 0.0]], &[&[0.0, 0.0], &[0.0, 0.0]]));
        assert_eq!(p.first.as_slice(), &[0.0, 0.0]);
        assert_mat(&p.second, &[1.0, 0.0, 0.0, 0.0]);

        let (mu, s2) = (1.7, 0.3);
        let p = fme_moments(&diag_cms(&[&[mu]], &[&[s2]]));
        assert_abs_diff_eq!(p.second.get(0, 0), s2 + mu * mu, epsilon = 1e-15);
    }

    #[test]
    fn fme_full_matches_promoted_diagonal() {
        let diag = diag_cms(&[&[1.0, 2.0], &[0.5, -1.0]], &[&[0.3, 0.4], &[1.0, 2.0]]);
        let full = ConditionalMomentSample::new(
            diag.means().clone(),
            Variances::Full((0..2).map(|i| diag.variance(i)).collect()),
        )
        .unwrap();
        assert_eq!(fme_moments(&diag), fme_moments(&full));
    }

    #[test]
    fn cms_rejects_negative_variance() {
        let r = ConditionalMomentSample::new(
            DMatrix::from_row_slice(2, 1, &[0.0, 0.0]),
            Variances::Diagonal(DMatrix::from_row_slice(2, 1, &[1.0, -0.1])),
        );
        assert!(matches!(r, Err(MegaError::Validation { row: 1, .. })));
    }

    #[test]
    fn se_examples() {
        let p = se_moments(&ds(&[&[1.0, 1.0]]));
        assert_eq!(p.first.as_slice(), &[1.0, 1.0]);
        assert_mat(&p.second, &[1.0, 1.0, 1.0, 1.0]);
        let p = se_moments(&ds(&[&[1.0, 0.0], &[-1.0, 0.0]]));
        assert_eq!(p.first.as_slice(), &[0.0, 0.0]);
        assert_mat(&p.second, &[1.0, 0.0, 0.0, 0.0]);
        let p = se_moments(&ds(&[&[0.0, 0.0], &[0.0, 0.0]]));
        assert_mat(&p.second, &[0.0; 4]);
    }

    #[test]
    fn perfect_model_has_zero_mega() {
        let s = ds(&[&[0.0, 0.0], &[2.0, 2.0]]);
        // Var = DE₂ - x̄x̄ᵀ = [[2,2],[2,2]] with mean (1,1)
        let cms = ConditionalMomentSample::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            Variances::Full(vec![SymMatrix::from_row_slice(2, &[2.0, 2.0, 2.0, 2.0]).unwrap()]),
        )
        .unwrap();
        let r = mega(&s, &cms, Some(3)).unwrap();
        assert_eq!(r.mega1_f, 0.0);
        assert_eq!(r.mega2_f, 0.0);
        assert_eq!(r.m_used, 1);
        assert_eq!(r.seed, Some(3));
    }

    #[test]
    fn mega_dimension_mismatch() {
        let s = ds(&[&[0.0, 0.0], &[2.0, 2.0]]);
        let cms = diag_cms(&[&[0.0]], &[&[1.0]]);
        assert!(matches!(mega(&s, &cms, None), Err(MegaError::InvalidInput(_))));
    }

    proptest! {
        #[test]
        fn mega_invariant_to_order(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 2..30),
            draws in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 2), prop::collection::vec(0.0f64..3.0, 2)), 1..30),
        ) {
            let s = Dataset::from_rows(&rows).unwrap();
            let mut rev_rows = rows.clone();
            rev_rows.reverse();
            let s_rev = Dataset::from_rows(&rev_rows).unwrap();
            let build = |ds: &[(Vec<f64>, Vec<f64>)]| {
                let mf: Vec<f64> = ds.iter().flat_map(|(m, _)| m.clone()).collect();
                let vf: Vec<f64> = ds.iter().flat_map(|(_, v)| v.clone()).collect();
                ConditionalMomentSample::new(
                    DMatrix::from_row_slice(ds.len(), 2, &mf),
                    Variances::Diagonal(DMatrix::from_row_slice(ds.len(), 2, &vf)),
                ).unwrap()
            };
            let mut rev_draws = draws.clone();
            rev_draws.reverse();
            let a = mega(&s, &build(&draws), None).unwrap();
            let b = mega(&s_rev, &build(&rev_draws), None).unwrap();
            prop_assert!((a.mega1_f - b.mega1_f).abs() < 1e-10);
            prop_assert!((a.mega2_f - b.mega2_f).abs() < 1e-10);
            prop_assert_eq!(a.gap2.max_asymmetry(), 0.0);
        }

        #[test]
        fn de_second_moment_is_cov_plus_outer(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..20)) {
            // independent oracle: explicit double loop with n-1 denominator
            let n = rows.len() as f64;
            let mean: Vec<f64> = (0..3).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let s = Dataset::from_rows(&rows).unwrap();
            let de = data_second_moment(&s).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    let cov = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0);
                    prop_assert!((de.get(a, b) - (cov + mean[a] * mean[b])).abs() < 1e-9);
                }
            }
        }
    }
}
