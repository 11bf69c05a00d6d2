use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use mega::datagen::{SyntheticKind, SyntheticSpec};
use mega::estimators;
use mega::experiments;
use mega::io;
use mega::models::{gmm_fit_em, ppca_fit, FitConfig, LatentModel, Model};
use mega::rng::derive_seed;
use mega::selection::{self, SelectionResult, DEFAULT_ALPHA_GRID};
use mega::DEFAULT_M;

use crate::manifest::RunManifest;
use crate::{
    CompareArgs, EmArgs, Family, FitArgs, GapStudyArgs, GenDataArgs, MegaArgs, PathArgs, SelectArgs, SweepArgs,
    VarianceStudyArgs,
};

pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    pub m: Option<usize>,
}

/// Collects artifacts for one command and writes its manifest last.
struct Output {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Output {
    fn new(ctx: &Context, command: &str) -> Result<Self> {
        fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
        Ok(Output {
            dir: ctx.out.clone(),
            manifest: RunManifest::new(command, ctx.seed),
        })
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.manifest.param(key, value);
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.artifacts.push(name.to_string());
        Ok(path)
    }

    fn finish(self) -> Result<()> {
        self.manifest.write(&self.dir)
    }
}

fn fit_config(em: &EmArgs, seed: u64) -> FitConfig {
    FitConfig {
        max_iter: em.max_iter,
        loglik_tol: em.tol,
        n_restarts: em.restarts,
        variance_floor: em.variance_floor,
        seed,
    }
}

fn record_em(out: &mut Output, em: &EmArgs) {
    out.param("max_iter", em.max_iter);
    out.param("tol", em.tol);
    out.param("restarts", em.restarts);
    out.param("variance_floor", em.variance_floor);
}

fn load_data(path: &Path) -> Result<mega::Dataset> {
    io::read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    io::read_model(path).with_context(|| format!("reading model {}", path.display()))
}

pub fn gen_data(ctx: &Context, a: GenDataArgs) -> Result<()> {
    let kind: SyntheticKind = a.kind.parse()?;
    let generator_model = match (&a.model, kind) {
        (Some(p), SyntheticKind::CustomGmm) => match load_model(p)? {
            Model::Gmm(g) => Some(g),
            Model::Ppca(_) => bail!("custom_gmm needs a gmm model file"),
        },
        (None, SyntheticKind::CustomGmm) => bail!("custom_gmm needs --model"),
        (Some(_), _) => bail!("--model is only used with custom_gmm"),
        (None, _) => None,
    };
    let spec = SyntheticSpec {
        kind,
        n: a.n,
        noise: a.noise,
        seed: ctx.seed,
        generator_model,
    };
    let (data, generator) = spec.generate()?;

    let mut out = Output::new(ctx, "gen-data")?;
    out.param("kind", &a.kind);
    out.param("n", a.n);
    if kind == SyntheticKind::Moons {
        out.param("noise", a.noise);
    }
    if let Some(p) = &a.model {
        out.param("model", p.display());
    }
    out.write("data.csv", &io::dataset_to_csv(&data))?;
    if let Some(g) = generator {
        out.write("generator.model", &io::model_to_string(&Model::Gmm(g)))?;
    }
    println!(
        "wrote {} rows (d = {}) to {}",
        data.n(),
        data.d(),
        out.dir.join("data.csv").display()
    );
    out.finish()
}

pub fn fit(ctx: &Context, a: FitArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let mut out = Output::new(ctx, "fit")?;
    out.param("data", a.data.display());
    let model: Model = match a.family {
        Family::Gmm => {
            let cfg = fit_config(&a.em, ctx.seed);
            let fit = gmm_fit_em(&data, a.k, &cfg)?;
            out.param("family", "gmm");
            out.param("k", a.k);
            record_em(&mut out, &a.em);
            let mut trace = String::from("iteration,loglik\n");
            for (i, ll) in fit.loglik_trace.iter().enumerate() {
                let _ = writeln!(trace, "{i},{ll}");
            }
            out.write("loglik_trace.csv", &trace)?;
            println!(
                "gmm k={} loglik={} converged={} restart={} degenerate_restarts={}",
                a.k, fit.loglik, fit.converged, fit.restart, fit.degenerate_restarts
            );
            fit.model.into()
        }
        Family::Ppca => {
            let p = ppca_fit(&data, a.latent_dim)?;
            out.param("family", "ppca");
            out.param("latent_dim", a.latent_dim);
            println!("ppca latent_dim={} sigma2={}", a.latent_dim, p.sigma2());
            p.into()
        }
    };
    out.write("model.model", &io::model_to_string(&model))?;
    out.finish()
}

pub fn mega(ctx: &Context, a: MegaArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let mut out = Output::new(ctx, "mega")?;
    out.param("data", a.data.display());
    let report = match (&a.model, &a.cms) {
        (Some(path), None) => {
            let model = load_model(path)?;
            ensure!(
                model.dim() == data.d(),
                "data dimension {} does not match model dimension {}",
                data.d(),
                model.dim()
            );
            let m = if a.exact {
                ensure!(ctx.m.unwrap_or(0) == 0, "--exact cannot be combined with --m > 0");
                0
            } else {
                ctx.m.unwrap_or(DEFAULT_M)
            };
            out.param("model", path.display());
            out.param("m", m);
            if m == 0 {
                ensure!(!a.save_cms, "--save-cms needs Monte Carlo mode (m > 0)");
                model.mega(&data, 0, ctx.seed)?
            } else {
                let cms = model.conditional_moment_sample(m, ctx.seed)?;
                if a.save_cms {
                    out.write("cms.csv", &io::cms_to_csv(&cms))?;
                }
                estimators::mega(&data, &cms, Some(ctx.seed))?
            }
        }
        (None, Some(path)) => {
            ensure!(ctx.m.is_none(), "--m does not apply to a conditional-moment file");
            let cms = io::read_conditional_moments(path).with_context(|| format!("reading {}", path.display()))?;
            out.param("cms", path.display());
            estimators::mega(&data, &cms, Some(ctx.seed))?
        }
        _ => bail!("give exactly one of --model or --cms"),
    };
    println!(
        "1MEGA-F = {}\n2MEGA-F = {}\nm_used = {}\nseed = {}",
        report.mega1_f,
        report.mega2_f,
        report.m_used,
        report.seed.map_or("none".to_string(), |s| s.to_string())
    );
    out.write("mega.csv", &io::mega_report_to_csv(&report))?;
    out.finish()
}

pub fn compare(ctx: &Context, a: CompareArgs) -> Result<()> {
    ensure!(a.models.len() >= 2, "compare needs at least two --model files");
    let data = load_data(&a.data)?;
    let m = ctx.m.unwrap_or(DEFAULT_M);
    let models = a
        .models
        .iter()
        .map(|p| Ok((p.display().to_string(), load_model(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let cmp = experiments::compare(&data, &models, m, ctx.seed)?;

    let mut out = Output::new(ctx, "compare")?;
    out.param("data", a.data.display());
    out.param(
        "models",
        a.models
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    out.param("m", m);
    out.param("sample_size", experiments::COMPARE_SAMPLE_SIZE);

    let mut table = String::from("rank,index,name,mega1_f,mega2_f,m_used\n");
    for (rank, &i) in cmp.ranking.iter().enumerate() {
        let r = &cmp.rows[i];
        let _ = writeln!(
            table,
            "{},{i},{},{},{},{}",
            rank + 1,
            r.name,
            r.report.mega1_f,
            r.report.mega2_f,
            r.report.m_used
        );
        println!(
            "{}. {} 1MEGA-F={} 2MEGA-F={}",
            rank + 1,
            r.name,
            r.report.mega1_f,
            r.report.mega2_f
        );
    }
    out.write("ranking.csv", &table)?;
    for (i, ((name, model), row)) in models.iter().zip(&cmp.rows).enumerate() {
        out.write(&format!("mega_{i}.csv"), &io::mega_report_to_csv(&row.report))?;
        let sample = model.ancestral_sample(experiments::COMPARE_SAMPLE_SIZE, derive_seed(ctx.seed, i as u64))?;
        out.write(&format!("samples_{i}.csv"), &io::dataset_to_csv(&sample))?;
        if data.d() >= 2 {
            let svg = experiments::svg_scatter(name, &[("data", "#1f77b4", &data), (name, "#d62728", &sample)])?;
            out.write(&format!("scatter_{i}.svg"), &svg)?;
        }
    }
    out.finish()
}

fn sweep_candidates(
    ctx: &Context,
    s: &SweepArgs,
    seed: u64,
) -> Result<(mega::Dataset, Vec<selection::Candidate>, usize)> {
    ensure!(s.k_min >= 1 && s.k_min <= s.k_max, "need 1 <= k-min <= k-max");
    let data = load_data(&s.data)?;
    let m = ctx.m.unwrap_or(0);
    let candidates = selection::fit_candidates(&data, s.k_min..=s.k_max, m, &fit_config(&s.em, seed))?;
    for c in &candidates {
        if let Err(e) = &c.outcome {
            eprintln!("warning: fit failed for k={}: {e}", c.k);
        }
    }
    Ok((data, candidates, m))
}

fn record_sweep(out: &mut Output, s: &SweepArgs, m: usize) {
    out.param("data", s.data.display());
    out.param("k_min", s.k_min);
    out.param("k_max", s.k_max);
    out.param("m", m);
    record_em(out, &s.em);
}

fn aic_table(result: &SelectionResult) -> String {
    let mut t = String::from("k,loglik,aic\n");
    for e in result.entries.iter().filter(|e| e.failure.is_none()) {
        let _ = writeln!(t, "{},{},{}", e.k, e.loglik, e.aic);
    }
    t
}

fn path_table(path: &[SelectionResult]) -> String {
    let mut t = String::from("alpha,best_by_aic,best_by_penalized\n");
    for r in path {
        let _ = writeln!(t, "{},{},{}", r.alpha, r.best_by_aic, r.best_by_penalized);
    }
    t
}

fn print_path(path: &[SelectionResult]) {
    for r in path {
        println!(
            "alpha={} best_by_aic={} best_by_penalized={}",
            r.alpha, r.best_by_aic, r.best_by_penalized
        );
    }
}

pub fn select(ctx: &Context, a: SelectArgs) -> Result<()> {
    let alphas = a.alpha.map_or_else(|| DEFAULT_ALPHA_GRID.to_vec(), |x| vec![x]);
    let (_, candidates, m) = sweep_candidates(ctx, &a.sweep, ctx.seed)?;
    let path = selection::path_from_candidates(&candidates, &alphas, ctx.seed)?;

    let mut out = Output::new(ctx, "select")?;
    record_sweep(&mut out, &a.sweep, m);
    out.param("alphas", join(&alphas));
    out.write("aic.csv", &aic_table(&path[0]))?;
    out.write("selection.csv", &io::selection_to_csv(&path))?;
    out.write("path.csv", &path_table(&path))?;
    print_path(&path);
    out.finish()
}

pub fn path(ctx: &Context, a: PathArgs) -> Result<()> {
    let alphas = a.alphas.clone().unwrap_or_else(|| DEFAULT_ALPHA_GRID.to_vec());
    ensure!(a.calibration_seeds >= 1, "--calibration-seeds must be >= 1");
    let mut out = Output::new(ctx, "path")?;
    let mut paths = Vec::with_capacity(a.calibration_seeds);
    let mut m_used = 0;
    for r in 0..a.calibration_seeds {
        let seed = if r == 0 {
            ctx.seed
        } else {
            derive_seed(ctx.seed, r as u64)
        };
        let (_, candidates, m) = sweep_candidates(ctx, &a.sweep, seed)?;
        m_used = m;
        paths.push(selection::path_from_candidates(&candidates, &alphas, seed)?);
    }
    record_sweep(&mut out, &a.sweep, m_used);
    out.param("alphas", join(&alphas));
    out.param("calibration_seeds", a.calibration_seeds);
    out.write("selection.csv", &io::selection_to_csv(&paths[0]))?;
    out.write("path.csv", &path_table(&paths[0]))?;
    print_path(&paths[0]);
    if a.calibration_seeds > 1 {
        let mut t = String::from("alpha,k\n");
        match selection::calibrate_alpha(&paths) {
            Some((alpha, k)) => {
                let _ = writeln!(t, "{alpha},{k}");
                println!("calibrated alpha={alpha} selects k={k} for every seed");
            }
            None => println!("no positive alpha gives a seed-stable selection"),
        }
        out.write("calibration.csv", &t)?;
    }
    out.finish()
}

pub fn gap_study(ctx: &Context, a: GapStudyArgs) -> Result<()> {
    ensure!(ctx.m.is_none(), "gap-study takes --m-values, not --m");
    let model = load_model(&a.model)?;
    let study = experiments::gap_study(&model, &a.m_values, a.n_seeds, ctx.seed)?;
    let mut out = Output::new(ctx, "gap-study")?;
    out.param("model", a.model.display());
    out.param(
        "m_values",
        a.m_values.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
    );
    out.param("n_seeds", a.n_seeds);

    let mut long = String::from("m,seed,estimator,gap\n");
    for r in &study.records {
        let seed = derive_seed(ctx.seed, r.replicate as u64);
        let _ = writeln!(long, "{},{seed},{},{}", r.m, r.estimator.label(), r.gap);
    }
    out.write("gaps.csv", &long)?;
    let mut med = String::from("m,fme_median,se_median,exact_second_norm\n");
    for row in &study.medians {
        let _ = writeln!(med, "{},{},{},{}", row.m, row.fme, row.se, study.exact_second_norm);
        println!("m={} median FME gap={} median SE gap={}", row.m, row.fme, row.se);
    }
    out.write("medians.csv", &med)?;
    out.finish()
}

pub fn variance_study(ctx: &Context, a: VarianceStudyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let m = ctx.m.unwrap_or(100);
    let v = experiments::variance_study(&model, m, a.replications, ctx.seed)?;
    let mut out = Output::new(ctx, "variance-study")?;
    out.param("model", a.model.display());
    out.param("m", m);
    out.param("replications", a.replications);

    let mut first = String::from("i,var_fme,var_se\n");
    for c in &v.first {
        let _ = writeln!(first, "{},{},{}", c.i, c.fme, c.se);
    }
    out.write("variance_first.csv", &first)?;
    let mut second = String::from("i,j,var_fme,var_se\n");
    for e in &v.second {
        let _ = writeln!(second, "{},{},{},{}", e.i, e.j, e.fme, e.se);
    }
    out.write("variance_second.csv", &second)?;
    let summary = format!(
        "fraction_dominated,max_ratio\n{},{}\n",
        v.fraction_dominated(),
        v.max_ratio()
    );
    out.write("variance_summary.csv", &summary)?;
    println!("fraction with Var(FME) <= Var(SE): {}", v.fraction_dominated());
    println!("largest Var(FME)/Var(SE): {}", v.max_ratio());
    out.finish()
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
