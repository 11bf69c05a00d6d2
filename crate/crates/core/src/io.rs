//! File formats.
//!
//! - Dataset CSV: one observation per line, `d` comma-separated floats.
//! - Conditional-moment CSV: header `# mega-cms v1 d=<D> var=<diag|full>`,
//!   then one draw per line: `D` means followed by `D` variances (`diag`) or
//!   the `D²` row-major covariance entries (`full`).
//! - Model file: `key = value` lines with keys `family`, `d`, `k`/`M`,
//!   `weights`, `mean.<j>`, `cov.<j>` (row-major), `w` (row-major), `b`, `sigma2`.
//!
//! Lines starting with `#` (other than the conditional-moment header) and
//! blank lines are ignored. Floats are written with 17 significant digits.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{MegaError, Result};
use crate::estimators::{ConditionalMomentSample, Dataset, MegaReport, Variances};
use crate::models::{GmmModel, Model, PpcaModel};
use crate::norms::SymMatrix;
use crate::selection::SelectionResult;

/// Largest `|C_ij - C_ji|` accepted in a full-covariance row.
pub const CMS_SYMMETRY_TOL: f64 = 1e-6;

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",")
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .enumerate()
        .map(|(col, cell)| {
            let cell = cell.trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| MegaError::parse(lineno, format!("column {}: '{cell}' is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(MegaError::parse(
                    lineno,
                    format!("column {}: non-finite value '{cell}'", col + 1),
                ));
            }
            Ok(v)
        })
        .collect()
}

/// Non-blank, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn dataset_to_csv(s: &Dataset) -> String {
    let mut out = String::new();
    for row in s.matrix().row_iter() {
        out.push_str(&join(row.iter().copied()));
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut flat = Vec::new();
    let mut d = None;
    let mut n = 0;
    for (lineno, line) in data_lines(text) {
        let row = parse_row(line, lineno)?;
        match d {
            None => d = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(MegaError::parse(
                    lineno,
                    format!("row has {} values, expected {d}", row.len()),
                ));
            }
            _ => {}
        }
        flat.extend(row);
        n += 1;
    }
    let d = d.ok_or_else(|| MegaError::parse(text.lines().count().max(1), "file contains no data rows"))?;
    Dataset::new(DMatrix::from_row_slice(n, d, &flat))
}

pub fn write_dataset(s: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset_to_csv(s))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn cms_to_csv(cms: &ConditionalMomentSample) -> String {
    let d = cms.d();
    let kind = if cms.is_diagonal() { "diag" } else { "full" };
    let mut out = format!("# mega-cms v1 d={d} var={kind}\n");
    for i in 0..cms.m() {
        let mut vals: Vec<f64> = cms.means().row(i).iter().copied().collect();
        match cms.variances() {
            Variances::Diagonal(v) => vals.extend(v.row(i).iter().copied()),
            Variances::Full(v) => vals.extend(v[i].to_row_major()),
        }
        out.push_str(&join(vals));
        out.push('\n');
    }
    out
}

fn parse_cms_header(line: &str, lineno: usize) -> Result<(usize, bool)> {
    let bad = || {
        MegaError::parse(
            lineno,
            format!("expected '# mega-cms v1 d=<D> var=<diag|full>', got '{line}'"),
        )
    };
    let body = line.strip_prefix('#').ok_or_else(bad)?;
    let tokens: Vec<&str> = body.split_whitespace().collect();
    if tokens.len() != 4 || tokens[0] != "mega-cms" || tokens[1] != "v1" {
        return Err(bad());
    }
    let d: usize = tokens[2]
        .strip_prefix("d=")
        .and_then(|v| v.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(bad)?;
    let diag = match tokens[3].strip_prefix("var=") {
        Some("diag") => true,
        Some("full") => false,
        _ => return Err(bad()),
    };
    Ok((d, diag))
}

pub fn parse_conditional_moments(text: &str) -> Result<ConditionalMomentSample> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| MegaError::parse(1, "empty conditional-moment file"))?;
    let (d, diag) = parse_cms_header(header, hline)?;
    let width = if diag { 2 * d } else { d + d * d };

    let mut means = Vec::new();
    let mut diag_vars = Vec::new();
    let mut full_vars = Vec::new();
    let mut m = 0;
    for (lineno, line) in lines.filter(|(_, l)| !l.starts_with('#')) {
        let row = parse_row(line, lineno)?;
        if row.len() != width {
            return Err(MegaError::parse(
                lineno,
                format!("row has {} values, expected {width}", row.len()),
            ));
        }
        means.extend_from_slice(&row[..d]);
        let var = &row[d..];
        if diag {
            if let Some(j) = var.iter().position(|&v| v < 0.0) {
                return Err(MegaError::Validation {
                    row: m,
                    message: format!("line {lineno}: negative variance in coordinate {j}"),
                });
            }
            diag_vars.extend_from_slice(var);
        } else {
            for a in 0..d {
                for b in (a + 1)..d {
                    let gap = (var[a * d + b] - var[b * d + a]).abs();
                    if gap > CMS_SYMMETRY_TOL {
                        return Err(MegaError::Validation {
                            row: m,
                            message: format!("line {lineno}: covariance not symmetric at ({a},{b}), |diff| = {gap}"),
                        });
                    }
                }
            }
            full_vars.push(SymMatrix::from_row_slice(d, var)?);
        }
        m += 1;
    }
    if m == 0 {
        return Err(MegaError::parse(hline, "conditional-moment file has no rows"));
    }
    let variances = if diag {
        Variances::Diagonal(DMatrix::from_row_slice(m, d, &diag_vars))
    } else {
        Variances::Full(full_vars)
    };
    ConditionalMomentSample::new(DMatrix::from_row_slice(m, d, &means), variances)
}

pub fn write_conditional_moments(cms: &ConditionalMomentSample, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, cms_to_csv(cms))?;
    Ok(())
}

pub fn read_conditional_moments(path: impl AsRef<Path>) -> Result<ConditionalMomentSample> {
    parse_conditional_moments(&fs::read_to_string(path)?)
}

pub fn model_to_string(model: &Model) -> String {
    let mut out = String::new();
    match model {
        Model::Gmm(g) => {
            let d = g.means()[0].len();
            let _ = writeln!(out, "family = gmm");
            let _ = writeln!(out, "d = {d}");
            let _ = writeln!(out, "k = {}", g.k());
            let _ = writeln!(out, "weights = {}", join(g.weights().iter().copied()));
            for j in 0..g.k() {
                let _ = writeln!(out, "mean.{j} = {}", join(g.means()[j].iter().copied()));
                let _ = writeln!(out, "cov.{j} = {}", join(g.covariances()[j].to_row_major()));
            }
        }
        Model::Ppca(p) => {
            let (d, latent) = p.w().shape();
            let _ = writeln!(out, "family = ppca");
            let _ = writeln!(out, "d = {d}");
            let _ = writeln!(out, "M = {latent}");
            let w_row_major = (0..d)
                .flat_map(|i| (0..latent).map(move |j| (i, j)))
                .map(|(i, j)| p.w()[(i, j)]);
            let _ = writeln!(out, "w = {}", join(w_row_major));
            let _ = writeln!(out, "b = {}", join(p.b().iter().copied()));
            let _ = writeln!(out, "sigma2 = {}", fmt_f64(p.sigma2()));
        }
    }
    out
}

struct KeyValues {
    entries: HashMap<String, (usize, String)>,
}

impl KeyValues {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (lineno, line) in data_lines(text) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MegaError::parse(lineno, "expected 'key = value'"))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (lineno, v.trim().to_string())).is_some() {
                return Err(MegaError::parse(lineno, format!("duplicate key '{key}'")));
            }
        }
        Ok(KeyValues { entries })
    }

    fn raw(&self, key: &str) -> Result<(usize, &str)> {
        self.entries
            .get(key)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| MegaError::parse(0, format!("missing key '{key}'")))
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map(|(l, _)| *l).unwrap_or(0)
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let (l, v) = self.raw(key)?;
        v.parse()
            .map_err(|_| MegaError::parse(l, format!("'{key}' must be a non-negative integer, got '{v}'")))
    }

    fn floats(&self, key: &str, expected: usize) -> Result<Vec<f64>> {
        let (l, v) = self.raw(key)?;
        let vals = parse_row(v, l)?;
        if vals.len() != expected {
            return Err(MegaError::parse(
                l,
                format!("'{key}' has {} values, expected {expected}", vals.len()),
            ));
        }
        Ok(vals)
    }
}

fn validation(line: usize, e: MegaError) -> MegaError {
    match e {
        MegaError::InvalidInput(message) => MegaError::Validation { row: line, message },
        other => other,
    }
}

pub fn parse_model(text: &str) -> Result<Model> {
    let kv = KeyValues::parse(text)?;
    let (fline, family) = kv.raw("family")?;
    let d = kv.usize("d")?;
    match family {
        "gmm" => {
            let k = kv.usize("k")?;
            let weights = kv.floats("weights", k)?;
            let mut means = Vec::with_capacity(k);
            let mut covs = Vec::with_capacity(k);
            for j in 0..k {
                means.push(DVector::from_vec(kv.floats(&format!("mean.{j}"), d)?));
                let key = format!("cov.{j}");
                let entries = kv.floats(&key, d * d)?;
                let cov = SymMatrix::from_row_slice(d, &entries).map_err(|e| validation(kv.line(&key), e))?;
                covs.push(cov);
            }
            let g = GmmModel::new(weights, means, covs).map_err(|e| validation(kv.line("weights"), e))?;
            Ok(Model::Gmm(g))
        }
        "ppca" => {
            let latent = kv.usize("M")?;
            let w = kv.floats("w", d * latent)?;
            let b = kv.floats("b", d)?;
            let sigma2 = kv.floats("sigma2", 1)?[0];
            let p = PpcaModel::new(DMatrix::from_row_slice(d, latent, &w), DVector::from_vec(b), sigma2)
                .map_err(|e| validation(fline, e))?;
            Ok(Model::Ppca(p))
        }
        other => Err(MegaError::Validation {
            row: fline,
            message: format!("unknown model family '{other}'"),
        }),
    }
}

pub fn write_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    parse_model(&fs::read_to_string(path)?)
}

/// Long-format report: `field,i,j,value`.
pub fn mega_report_to_csv(r: &MegaReport) -> String {
    let mut out = String::from("field,i,j,value\n");
    let _ = writeln!(out, "mega1_f,,,{}", r.mega1_f);
    let _ = writeln!(out, "mega2_f,,,{}", r.mega2_f);
    let _ = writeln!(out, "m_used,,,{}", r.m_used);
    let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
    let _ = writeln!(out, "seed,,,{seed}");
    for (i, v) in r.gap1.iter().enumerate() {
        let _ = writeln!(out, "gap1,{i},,{v}");
    }
    let d = r.gap2.dim();
    for i in 0..d {
        for j in 0..d {
            let _ = writeln!(out, "gap2,{i},{j},{}", r.gap2.get(i, j));
        }
    }
    out
}

/// Selection table with columns
/// `k,loglik,aic,mega1_f,mega2_f,alpha,penalized_objective,seed,m_used`,
/// one row per successfully fitted `k` per α. Failed entries are skipped.
pub fn selection_to_csv(results: &[SelectionResult]) -> String {
    let mut out = String::from("k,loglik,aic,mega1_f,mega2_f,alpha,penalized_objective,seed,m_used\n");
    for e in results.iter().flat_map(|r| &r.entries).filter(|e| e.failure.is_none()) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.k, e.loglik, e.aic, e.mega1_f, e.mega2_f, e.alpha, e.penalized_objective, e.seed, e.m_used
        );
    }
    out
}
