//! Command-line front end. Every run writes into
//! `<out>/run-<subcommand>-<hash>/`, where the hash covers the echoed
//! [`RunConfig`], so identical invocations land in the same directory with
//! byte-identical files.
//!
//! Exit codes: `0` success, `1` usage or I/O problems, `2` a fit that did
//! not converge.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bivar::{
    self, bev_density_grid, copula_density_grid, copula_gof, cvm_independence_test, fit_bev_logistic, fit_copula,
    joint_collision_probability_averaged, kendall_tau, pseudo_observations, CopulaFamily, Dependence,
};
use crate::dataset::{
    self, bivariate_set, empirical_collision_probability, filter_threshold, load_csv, Covariates, ManeuverDataset,
    Measure, Schema, Series,
};
use crate::fit_pot::{fit_gpd, pot_probability_ci};
use crate::fit_uni::{self, fit_gev, lr_test, qq_plot_data, residual_density, NonStationarySpec, UniFit};
use crate::mc::derive_seed;
use crate::plot::{self, Style, Trace};
use crate::prob::{self, bm_collision_probability, Method, ProbEstimate};
use crate::stats;
use crate::sweep::{self, stable_region, SweepResult, Variant};
use crate::synth::{self, SynthConfig};
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 1;

#[derive(Parser, Debug)]
#[command(name = "evtss", version, about = "Collision probabilities from surrogate safety measures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Maneuver CSV.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// JSON column map (ttc, thw, collision, covariates).
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    #[arg(long, global = true, default_value = "ttc")]
    pub measure: Measure,
    /// Filter limit in seconds (default 1.5 for TTC, 2.0 for THW).
    #[arg(long, global = true)]
    pub limit: Option<f64>,
    #[arg(long, global = true, default_value_t = 1.5)]
    pub limit_ttc: f64,
    #[arg(long, global = true, default_value_t = 2.0)]
    pub limit_thw: f64,
    /// Location covariates (TTC margin for fit-biv).
    #[arg(long, global = true, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Location covariates of the THW margin in fit-biv.
    #[arg(long, global = true, value_delimiter = ',')]
    pub thw_covariates: Vec<String>,
    /// Pin the shape at zero (in fit-biv, the two-step THW margin only).
    #[arg(long, global = true)]
    pub gumbel: bool,
    /// Shift the negated measure so its sample maximum is zero (THW in fit-biv).
    #[arg(long, global = true)]
    pub normalized: bool,
    #[arg(long, global = true, default_value_t = 1_000_000)]
    pub mc_size: usize,
    #[arg(long, global = true, default_value_t = 500)]
    pub bootstrap: usize,
    #[arg(long, global = true, env = "EVTSS_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Univariate block-maxima fit, LR tests, probabilities and diagnostics.
    FitBm,
    /// Bivariate logistic fit and two-step copula fit.
    FitBiv,
    /// Block-maxima sensitivity sweep over filter limits.
    Sweep(SweepArgs),
    /// Peaks-over-threshold sweep and, with --limit, a single fit.
    Pot(SweepArgs),
    /// Write a synthetic maneuver dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Binomial estimate k/(n+k) with a normal interval.
    ProbEmpirical(EmpiricalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    /// Comma-separated thresholds in seconds.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub xi_tol: f64,
    #[arg(long, default_value_t = 0.3)]
    pub min_width: f64,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// Synthetic configuration JSON; the calibrated default otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub maneuvers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct EmpiricalArgs {
    /// Collisions.
    #[arg(long)]
    pub k: usize,
    /// Non-collision maneuvers.
    #[arg(long)]
    pub n: usize,
}

/// Everything a run depends on, echoed into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub measure: Measure,
    pub limit: Option<f64>,
    pub limit_ttc: f64,
    pub limit_thw: f64,
    pub covariates: Vec<String>,
    pub thw_covariates: Vec<String>,
    pub gumbel: bool,
    pub normalized: bool,
    pub mc_size: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub level: f64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub grid: Vec<f64>,
    pub xi_tol: f64,
    pub min_width: f64,
    pub synth_config: Option<PathBuf>,
    pub maneuvers: Option<usize>,
    pub k: Option<usize>,
    pub n: Option<usize>,
}

impl RunConfig {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.into(),
            input: None,
            schema: None,
            measure: Measure::Ttc,
            limit: None,
            limit_ttc: 1.5,
            limit_thw: 2.0,
            covariates: vec![],
            thw_covariates: vec![],
            gumbel: false,
            normalized: false,
            mc_size: 1_000_000,
            bootstrap: 500,
            seed: DEFAULT_SEED,
            level: 0.95,
            out: PathBuf::from("."),
            threads: None,
            grid: vec![],
            xi_tol: 0.1,
            min_width: 0.3,
            synth_config: None,
            maneuvers: None,
            k: None,
            n: None,
        }
    }

    pub fn from_cli(cli: &Cli) -> Self {
        let c = &cli.common;
        let mut cfg = Self {
            subcommand: String::new(),
            input: c.input.clone(),
            schema: c.schema.clone(),
            measure: c.measure,
            limit: c.limit,
            limit_ttc: c.limit_ttc,
            limit_thw: c.limit_thw,
            covariates: c.covariates.clone(),
            thw_covariates: c.thw_covariates.clone(),
            gumbel: c.gumbel,
            normalized: c.normalized,
            mc_size: c.mc_size,
            bootstrap: c.bootstrap,
            seed: c.seed.unwrap_or(DEFAULT_SEED),
            level: c.level,
            out: c.out.clone(),
            threads: c.threads,
            ..Self::new("")
        };
        cfg.subcommand = match &cli.command {
            Command::FitBm => "fit-bm".into(),
            Command::FitBiv => "fit-biv".into(),
            Command::Sweep(a) | Command::Pot(a) => {
                cfg.grid = a.grid.clone();
                cfg.xi_tol = a.xi_tol;
                cfg.min_width = a.min_width;
                if matches!(cli.command, Command::Sweep(_)) { "sweep" } else { "pot" }.into()
            }
            Command::Simulate(a) => {
                cfg.synth_config = a.config.clone();
                cfg.maneuvers = a.maneuvers;
                "simulate".into()
            }
            Command::ProbEmpirical(a) => {
                cfg.k = Some(a.k);
                cfg.n = Some(a.n);
                "prob-empirical".into()
            }
        };
        cfg
    }

    /// Hex digest of the configuration with output location and thread cap
    /// removed; neither changes any result.
    pub fn stamp(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.threads = None;
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("serializable config"));
        digest.iter().take(6).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(format!("run-{}-{}", self.subcommand, self.stamp()))
    }
}

/// Result of a finished command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub run_dir: PathBuf,
    pub converged: bool,
    pub summary: String,
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cfg = RunConfig::from_cli(&cli);
    match execute(&cfg) {
        Ok(o) => {
            println!("{}", o.summary);
            println!("outputs: {}", o.run_dir.display());
            if o.converged {
                0
            } else {
                eprintln!("warning: at least one fit did not converge");
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::NotPsd => 2,
        _ => 1,
    }
}

/// Runs a configured command, honoring the thread cap.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Usage(format!("--level must be in (0,1), got {}", cfg.level)));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        pool = pool.num_threads(t.max(1));
    }
    let pool = pool.build().map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    pool.install(|| {
        let dir = cfg.run_dir();
        std::fs::create_dir_all(&dir)?;
        write_json(&dir, "run_config.json", cfg)?;
        match cfg.subcommand.as_str() {
            "fit-bm" => cmd_fit_bm(cfg, &dir),
            "fit-biv" => cmd_fit_biv(cfg, &dir),
            "sweep" => cmd_sweep(cfg, &dir),
            "pot" => cmd_pot(cfg, &dir),
            "simulate" => cmd_simulate(cfg, &dir),
            "prob-empirical" => cmd_prob_empirical(cfg, &dir),
            other => Err(Error::Usage(format!("unknown subcommand `{other}`"))),
        }
        .map(|(converged, summary)| Outcome {
            run_dir: dir.clone(),
            converged,
            summary,
        })
    })
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_rows(dir: &Path, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Left-aligned plain-text table.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(s, "{c:<w$}  ");
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

fn est(value: f64, se: f64) -> String {
    if se.is_finite() && se > 0.0 {
        format!("{value:.4} ({se:.4})")
    } else {
        format!("{value:.4}")
    }
}

fn load(cfg: &RunConfig) -> Result<ManeuverDataset> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Usage("--input is required".into()))?;
    let schema = match &cfg.schema {
        Some(p) => Schema::from_json_file(p)?,
        None => Schema::default(),
    };
    load_csv(input, &schema)
}

fn default_limit(m: Measure) -> f64 {
    match m {
        Measure::Ttc => 1.5,
        Measure::Thw => 2.0,
    }
}

/// Negated (optionally max-normalized) series and the shift applied.
fn to_maxima(raw: &Series, normalized: bool) -> Result<(Series, f64)> {
    if normalized {
        dataset::normalize_to_sample_max(raw)
    } else {
        Ok((dataset::negate(raw), 0.0))
    }
}

fn spec(names: &[String], gumbel: bool) -> NonStationarySpec {
    NonStationarySpec {
        covariate_names: names.to_vec(),
        fix_shape_to_zero: gumbel,
        interactions: vec![],
    }
}

fn design_or_empty(names: &[String], cov: &Covariates, n: usize) -> Result<Covariates> {
    if names.is_empty() {
        Ok(Covariates::empty(n))
    } else {
        cov.select(names)
    }
}

fn fit_table(fit: &UniFit) -> String {
    let mut rows: Vec<Vec<String>> = fit
        .location
        .iter()
        .map(|c| vec![if c.name == "mu0" { "mu0".into() } else { format!("mu({})", c.name) }, est(c.value, c.se)])
        .collect();
    rows.push(vec!["sigma".into(), est(fit.sigma.value, fit.sigma.se)]);
    rows.push(vec!["xi".into(), est(fit.xi.value, fit.xi.se)]);
    rows.push(vec!["neg. loglik".into(), format!("{:.3}", -fit.loglik)]);
    rows.push(vec!["AIC".into(), format!("{:.3}", fit.aic())]);
    table(&["parameter", "estimate (se)"], &rows)
}

fn family_name(fit: &UniFit) -> &'static str {
    match fit.family {
        fit_uni::Family::Gumbel => "Gumbel",
        fit_uni::Family::Gev => "GEV",
        fit_uni::Family::Gpd => "GPD",
    }
}

#[derive(Serialize)]
struct LrRow {
    restricted: Vec<String>,
    statistic: f64,
    df: usize,
    p_value: f64,
}

#[derive(Serialize)]
struct FitBmReport<'a> {
    measure: Measure,
    limit: f64,
    normalization_shift: f64,
    n: usize,
    collisions: usize,
    family: &'static str,
    fit: &'a UniFit,
    gumbel_suggested: bool,
    lr_tests: Vec<LrRow>,
    probabilities: Vec<ProbEstimate>,
    location_normal: Option<prob::LocationNormal>,
    qq_fraction_inside: Option<f64>,
}

fn cmd_fit_bm(cfg: &RunConfig, dir: &Path) -> Result<(bool, String)> {
    let ds = load(cfg)?;
    let m = cfg.measure;
    let limit = cfg.limit.unwrap_or(default_limit(m));
    let k = ds.collision_counts().of(m.collision());
    let filtered = filter_threshold(&ds, m, limit)?;
    let raw = filtered.measure_series(m);
    let n = raw.len();
    let (x, shift) = to_maxima(&raw, cfg.normalized)?;
    let cov = design_or_empty(&cfg.covariates, &filtered.covariates(&cfg.covariates)?, n)?;
    let fit = fit_gev(&x, &cov, &spec(&cfg.covariates, cfg.gumbel))?;

    let mut lr_tests = Vec::new();
    if !cfg.covariates.is_empty() {
        let mut baselines = vec![vec![]];
        if cfg.covariates.len() > 1 {
            for drop in &cfg.covariates {
                baselines.push(cfg.covariates.iter().filter(|c| *c != drop).cloned().collect());
            }
        }
        for names in baselines {
            let b = fit_gev(&x, &design_or_empty(&names, &cov, n)?, &spec(&names, cfg.gumbel))?;
            let lr = lr_test(&b, &fit)?;
            lr_tests.push(LrRow {
                restricted: names,
                statistic: lr.statistic,
                df: lr.df,
                p_value: lr.p_value,
            });
        }
    }

    let mut probabilities = vec![empirical_collision_probability(k, n, cfg.level)?];
    let mut location_normal = None;
    let mut qq_inside = None;
    if fit.converged {
        if let Some(p) = fit.stationary_params() {
            probabilities.push(ProbEstimate::point(bm_collision_probability(&p).p, Method::BmPlugin));
        }
        if cfg.mc_size >= prob::MIN_MC_SIZE {
            probabilities.push(prob::prob_covariate_approach(&fit, &cov, cfg.mc_size, derive_seed(cfg.seed, 1), cfg.level)?);
            let (p, ln) = prob::prob_locationdist_approach(&fit, &cov, cfg.mc_size, derive_seed(cfg.seed, 2), cfg.level)?;
            probabilities.push(p);
            location_normal = Some(ln);
        }
        let qq = qq_plot_data(&fit, &x, &cov, cfg.bootstrap.max(19), derive_seed(cfg.seed, 3))?;
        qq_inside = Some(qq.fraction_inside);
        plot::write_svg(dir.join("qq.svg"), &plot::qq_svg(&qq, "Residual QQ plot"))?;
        write_rows(
            dir,
            "qq.csv",
            &["theoretical", "empirical", "lower", "upper"],
            (0..qq.theoretical.len()).map(|i| vec![qq.theoretical[i], qq.empirical[i], qq.lower[i], qq.upper[i]]),
        )?;
        let z = fit_uni::standardize_residuals(&fit, &x, &cov)?;
        let dens = residual_density(&z.values, 20);
        plot::write_svg(dir.join("density.svg"), &plot::density_svg(&dens, "Residual density"))?;
        write_rows(
            dir,
            "density.csv",
            &["center", "empirical", "model"],
            (0..dens.centers.len()).map(|i| vec![dens.centers[i], dens.empirical[i], dens.model[i]]),
        )?;
    }

    let mut text = format!(
        "{} fit of negated {}{} below {limit} s: n = {n}, collisions = {k}\n\n",
        family_name(&fit),
        m.as_str().to_uppercase(),
        if cfg.normalized { " (normalized)" } else { "" },
    );
    text += &fit_table(&fit);
    if fit.gumbel_suggested() {
        text += "\n|xi| < 2 se: a Gumbel refit (--gumbel) is worth comparing\n";
    }
    if !lr_tests.is_empty() {
        text += "\nLikelihood-ratio tests against nested models\n";
        let rows: Vec<Vec<String>> = lr_tests
            .iter()
            .map(|r| {
                let name = if r.restricted.is_empty() { "stationary".into() } else { r.restricted.join(",") };
                vec![name, format!("{:.3}", r.statistic), r.df.to_string(), format!("{:.4}", r.p_value)]
            })
            .collect();
        text += &table(&["restricted model", "statistic", "df", "p-value"], &rows);
    }
    text += "\nCollision probability\n";
    let rows: Vec<Vec<String>> = probabilities
        .iter()
        .map(|p| vec![format!("{:?}", p.method), p.display()])
        .collect();
    text += &table(&["method", "estimate (CI)"], &rows);
    for d in &fit.diagnostics {
        text += &format!("note: {d}\n");
    }
    let report = FitBmReport {
        measure: m,
        limit,
        normalization_shift: shift,
        n,
        collisions: k,
        family: family_name(&fit),
        fit: &fit,
        gumbel_suggested: fit.gumbel_suggested(),
        lr_tests,
        probabilities,
        location_normal,
        qq_fraction_inside: qq_inside,
    };
    write_json(dir, "report.json", &report)?;
    write_text(dir, "report.txt", &text)?;
    Ok((fit.converged, text))
}

fn cdf_at_zero(fit: &UniFit, design: &Covariates) -> Vec<f64> {
    fit.locations(design)
        .into_iter()
        .map(|m| 1.0 - prob::exceed_zero(m, fit.sigma.value, fit.xi.value))
        .collect()
}

#[derive(Serialize)]
struct FitBivReport<'a> {
    limit_ttc: f64,
    limit_thw: f64,
    thw_normalization_shift: f64,
    n: usize,
    collisions: usize,
    empirical: ProbEstimate,
    logistic: &'a bivar::BivLogisticFit,
    logistic_probability: bivar::JointProbability,
    margins: [&'a UniFit; 2],
    kendall: bivar::KendallTau,
    pearson: f64,
    independence_test: bivar::BootstrapTest,
    joe_frank: &'a bivar::CopulaFit,
    gumbel_copula: &'a bivar::CopulaFit,
    joe_frank_gof: Option<bivar::GofResult>,
    copula_probability: Option<bivar::JointProbability>,
}

fn cmd_fit_biv(cfg: &RunConfig, dir: &Path) -> Result<(bool, String)> {
    let ds = load(cfg)?;
    let set = bivariate_set(&ds, cfg.limit_ttc, cfg.limit_thw)?;
    let n = set.ttc.len();
    let x = dataset::negate(&set.ttc);
    let (y, shift) = to_maxima(&set.thw, cfg.normalized)?;
    let mut names = cfg.covariates.clone();
    names.extend(cfg.thw_covariates.iter().filter(|c| !cfg.covariates.contains(c)).cloned());
    let cov = if names.is_empty() {
        Covariates::empty(n)
    } else {
        set.covariates(&names, &ds.covariate_names)?
    };
    let spec_ttc = spec(&cfg.covariates, false);
    let spec_thw = spec(&cfg.thw_covariates, cfg.gumbel);
    let d_ttc = design_or_empty(&cfg.covariates, &cov, n)?;
    let d_thw = design_or_empty(&cfg.thw_covariates, &cov, n)?;

    // full likelihood frees both shapes; --gumbel only pins the two-step margin
    let bev = fit_bev_logistic(&x, &y, &cov, [&spec_ttc, &spec(&cfg.thw_covariates, false)])?;
    let f0 = bev.margin_ttc.cdf_at_zero(&d_ttc);
    let g0 = bev.margin_thw.cdf_at_zero(&d_thw);
    let logistic_probability = joint_collision_probability_averaged(&f0, &g0, &Dependence::Logistic { r: bev.r.value })?;

    let uni_ttc = fit_gev(&x, &d_ttc, &spec_ttc)?;
    let uni_thw = fit_gev(&y, &d_thw, &spec_thw)?;
    let pobs = pseudo_observations(&x.values, &y.values)?;
    let kendall = kendall_tau(&x.values, &y.values)?;
    let pearson = stats::pearson(&x.values, &y.values);
    let independence_test = cvm_independence_test(&pobs, cfg.bootstrap, derive_seed(cfg.seed, 11))?;
    let jf = fit_copula(CopulaFamily::JoeFrank, &pobs)?;
    let gc = fit_copula(CopulaFamily::Gumbel, &pobs)?;
    let gof = if jf.converged {
        Some(copula_gof(&jf, &pobs, cfg.bootstrap, derive_seed(cfg.seed, 10))?)
    } else {
        None
    };
    let copula_probability = (uni_ttc.converged && uni_thw.converged)
        .then(|| {
            joint_collision_probability_averaged(
                &cdf_at_zero(&uni_ttc, &d_ttc),
                &cdf_at_zero(&uni_thw, &d_thw),
                &Dependence::from_copula_fit(&jf),
            )
        })
        .transpose()?;
    let empirical = empirical_collision_probability(set.collisions, n, cfg.level)?;

    let obs: Vec<(f64, f64)> = x.values.iter().copied().zip(y.values.iter().copied()).collect();
    // covariate-dependent margins are drawn at their average location
    if let (Some(m1), Some(m2)) = (bev.margin_ttc.params_at_mean(&d_ttc), bev.margin_thw.params_at_mean(&d_thw)) {
        let span = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = 0.1 * (hi - lo);
            (0..60).map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / 59.0).collect::<Vec<f64>>()
        };
        let grid = bev_density_grid(&m1, &m2, bev.r.value, &span(&x.values), &span(&y.values));
        write_grid(dir, "bev_density.csv", &grid)?;
        plot::write_svg(
            dir.join("bev_density.svg"),
            &plot::heatmap_svg(&grid, &obs, "Logistic model density", "-TTC", "-THW"),
        )?;
    }
    let cgrid = copula_density_grid(jf.copula().as_ref(), 40);
    write_grid(dir, "copula_density.csv", &cgrid)?;
    let pts: Vec<(f64, f64)> = pobs.u.iter().copied().zip(pobs.v.iter().copied()).collect();
    plot::write_svg(
        dir.join("copula_density.svg"),
        &plot::heatmap_svg(&cgrid, &pts, "Joe-Frank copula density", "u", "v"),
    )?;

    let mut text = format!(
        "Bivariate fit: TTC < {} s and THW < {} s, n = {n}, collisions = {}\n\n",
        cfg.limit_ttc, cfg.limit_thw, set.collisions
    );
    text += "Full likelihood, logistic dependence\n";
    let mut rows = Vec::new();
    let (a, b) = (&bev.margin_ttc, &bev.margin_thw);
    let width = a.location.len().max(b.location.len());
    for i in 0..width {
        let cell = |m: &bivar::MarginEstimate| m.location.get(i).map_or("-".into(), |c| est(c.value, c.se));
        let name = a.location.get(i).or(b.location.get(i)).map(|c| c.name.clone()).unwrap_or_default();
        rows.push(vec![name, cell(a), cell(b)]);
    }
    rows.push(vec!["sigma".into(), est(a.sigma.value, a.sigma.se), est(b.sigma.value, b.sigma.se)]);
    rows.push(vec!["xi".into(), est(a.xi.value, a.xi.se), est(b.xi.value, b.xi.se)]);
    text += &table(&["parameter", "TTC", "THW"], &rows);
    text += &format!(
        "r = {}  chi = {:.4}  AIC = {:.3}\n",
        est(bev.r.value, bev.r.se),
        bev.chi,
        bev.aic
    );
    if bev.boundary_warning {
        text += "warning: r estimate at the independence boundary\n";
    }
    text += &format!(
        "joint probability {:.5}  head-on {:.5}  rear-end {:.5}  both {:.6}\n\n",
        logistic_probability.any.p, logistic_probability.head_on, logistic_probability.rear_end, logistic_probability.both
    );
    text += "Two-step copula fit on pseudo-observations\n";
    text += &table(
        &["family", "parameters", "loglik", "AIC", "implied tau"],
        &[&jf, &gc]
            .iter()
            .map(|c| {
                vec![
                    format!("{:?}", c.family),
                    c.params.iter().zip(&c.se).map(|(p, s)| est(*p, *s)).collect::<Vec<_>>().join(", "),
                    format!("{:.3}", c.loglik),
                    format!("{:.3}", c.aic),
                    format!("{:.4}", c.kendall_tau_implied),
                ]
            })
            .collect::<Vec<_>>(),
    );
    if let Some(g) = &gof {
        text += &format!(
            "Kendall-process GoF (Joe-Frank): CvM {:.4} p = {:.4}, KS {:.4} p = {:.4}\n",
            g.cvm_statistic, g.cvm_p, g.ks_statistic, g.ks_p
        );
    }
    text += &format!(
        "Kendall tau {:.4} (p = {:.4}), Pearson {:.4}, CvM independence p = {:.4}\n",
        kendall.tau, kendall.p_value, pearson, independence_test.p_value
    );
    if let Some(cp) = &copula_probability {
        text += &format!("copula joint probability {:.5}\n", cp.any.p);
    }
    text += &format!("empirical {}\n", empirical.display());

    let converged = bev.converged && uni_ttc.converged && uni_thw.converged && jf.converged;
    let report = FitBivReport {
        limit_ttc: cfg.limit_ttc,
        limit_thw: cfg.limit_thw,
        thw_normalization_shift: shift,
        n,
        collisions: set.collisions,
        empirical,
        logistic: &bev,
        logistic_probability,
        margins: [&uni_ttc, &uni_thw],
        kendall,
        pearson,
        independence_test,
        joe_frank: &jf,
        gumbel_copula: &gc,
        joe_frank_gof: gof,
        copula_probability,
    };
    write_json(dir, "report.json", &report)?;
    write_text(dir, "report.txt", &text)?;
    Ok((converged, text))
}

fn write_grid(dir: &Path, name: &str, g: &bivar::DensityGrid) -> Result<()> {
    write_rows(
        dir,
        name,
        &["x", "y", "density"],
        g.ys.iter()
            .enumerate()
            .flat_map(|(j, y)| g.xs.iter().enumerate().map(move |(i, x)| vec![*x, *y, g.z[j][i]])),
    )
}

#[derive(Serialize)]
struct SweepReport<'a> {
    measure: Measure,
    results: [&'a SweepResult; 2],
    stable_regions: [Vec<(f64, f64)>; 2],
    xi_tol: f64,
    min_width: f64,
}

fn sweep_panels(results: [&SweepResult; 2], with_location: bool) -> String {
    let curve = |sr: &SweepResult, f: &dyn Fn(&sweep::PointFit) -> Option<f64>| -> Vec<(f64, f64)> {
        sr.fitted().filter_map(|(p, pf)| f(pf).map(|v| (p.threshold, v))).collect()
    };
    let label = |sr: &SweepResult| match sr.variant {
        Variant::Original => "original",
        Variant::Normalized => "normalized",
    };
    let mut charts = Vec::new();
    let params: Vec<(&str, Box<dyn Fn(&sweep::PointFit) -> Option<f64>>)> = {
        let mut v: Vec<(&str, Box<dyn Fn(&sweep::PointFit) -> Option<f64>>)> = Vec::new();
        if with_location {
            v.push(("location", Box::new(|f| f.location.map(|l| l.value))));
        }
        v.push(("scale", Box::new(|f| Some(f.scale.value))));
        v.push(("shape", Box::new(|f| Some(f.shape.value))));
        v
    };
    for (name, f) in &params {
        let traces: Vec<Trace> = results
            .iter()
            .map(|sr| Trace::new(label(sr), curve(sr, f.as_ref()), Style::Line))
            .collect();
        charts.push(plot::chart(name, "threshold (s)", name, &traces));
    }
    let mut traces: Vec<Trace> = results
        .iter()
        .map(|sr| Trace::new(label(sr), curve(sr, &|f| Some(f.probability)), Style::Line))
        .collect();
    traces.push(Trace::new(
        "empirical",
        results[0].points.iter().map(|p| (p.threshold, p.empirical)).collect(),
        Style::Dashed,
    ));
    charts.push(plot::chart("collision probability", "threshold (s)", "probability", &traces));
    plot::panels(&charts, 2)
}

fn sweep_text(results: [&SweepResult; 2], regions: &[Vec<(f64, f64)>; 2]) -> String {
    let mut text = String::new();
    for (sr, reg) in results.iter().zip(regions) {
        text += &format!("{:?} {:?} sweep\n", sr.method, sr.variant);
        let rows: Vec<Vec<String>> = sr
            .points
            .iter()
            .map(|p| match (&p.fit, &p.skipped) {
                (Some(f), _) => vec![
                    format!("{:.2}", p.threshold),
                    p.n.to_string(),
                    est(f.scale.value, f.scale.se),
                    est(f.shape.value, f.shape.se),
                    format!("{:.5}", f.probability),
                    format!("{:.5}", p.empirical),
                ],
                (None, s) => vec![
                    format!("{:.2}", p.threshold),
                    p.n.to_string(),
                    format!("skipped: {}", s.map_or("", |s| s.as_str())),
                    String::new(),
                    String::new(),
                    format!("{:.5}", p.empirical),
                ],
            })
            .collect();
        text += &table(&["threshold", "n", "scale", "shape", "model p", "empirical"], &rows);
        let reg: Vec<String> = reg.iter().map(|(a, b)| format!("[{a:.2}, {b:.2}]")).collect();
        text += &format!("stable shape regions: {}\n", if reg.is_empty() { "none".into() } else { reg.join(" ") });
        for w in &sr.warnings {
            text += &format!("warning: {w}\n");
        }
        text += "\n";
    }
    text
}

fn cmd_sweep(cfg: &RunConfig, dir: &Path) -> Result<(bool, String)> {
    let ds = load(cfg)?;
    let m = cfg.measure;
    let values = ds.measure_series(m);
    let k = ds.collision_counts().of(m.collision());
    let grid = if cfg.grid.is_empty() { sweep::default_grid() } else { cfg.grid.clone() };
    let a = sweep::sweep_bm(&values, k, &grid, Variant::Original)?;
    let b = sweep::sweep_bm(&values, k, &grid, Variant::Normalized)?;
    let regions = [stable_region(&a, cfg.xi_tol, cfg.min_width), stable_region(&b, cfg.xi_tol, cfg.min_width)];
    sweep::write_csv(&[&a, &b], dir.join("sweep.csv"))?;
    plot::write_svg(dir.join("sweep.svg"), &sweep_panels([&a, &b], true))?;
    let text = sweep_text([&a, &b], &regions);
    write_json(
        dir,
        "report.json",
        &SweepReport {
            measure: m,
            results: [&a, &b],
            stable_regions: regions,
            xi_tol: cfg.xi_tol,
            min_width: cfg.min_width,
        },
    )?;
    write_text(dir, "report.txt", &text)?;
    Ok((true, text))
}

#[derive(Serialize)]
struct PotReport<'a> {
    measure: Measure,
    results: [&'a SweepResult; 2],
    stable_regions: [Vec<(f64, f64)>; 2],
    single: Option<PotSingle>,
}

#[derive(Serialize)]
struct PotSingle {
    limit: f64,
    variant: Variant,
    fit: crate::fit_pot::PotFit,
    evaluation_point: f64,
    probability: ProbEstimate,
}

fn cmd_pot(cfg: &RunConfig, dir: &Path) -> Result<(bool, String)> {
    let ds = load(cfg)?;
    let m = cfg.measure;
    let values = ds.measure_series(m);
    let k = ds.collision_counts().of(m.collision());
    let grid = if cfg.grid.is_empty() { sweep::default_grid() } else { cfg.grid.clone() };
    let a = sweep::sweep_pot(&values, k, &grid, Variant::Original)?;
    let b = sweep::sweep_pot(&values, k, &grid, Variant::Normalized)?;
    let regions = [stable_region(&a, cfg.xi_tol, cfg.min_width), stable_region(&b, cfg.xi_tol, cfg.min_width)];
    sweep::write_csv(&[&a, &b], dir.join("pot_sweep.csv"))?;
    plot::write_svg(dir.join("pot_sweep.svg"), &sweep_panels([&a, &b], false))?;
    let mut text = sweep_text([&a, &b], &regions);
    let mut converged = true;
    let single = match cfg.limit {
        Some(limit) => {
            let (x, shift) = to_maxima(&values, cfg.normalized)?;
            let fit = fit_gpd(&x, -limit - shift)?;
            converged = fit.converged;
            let xmax = x.max().expect("non-empty");
            let probability = pot_probability_ci(&fit, xmax, cfg.mc_size.max(1000), derive_seed(cfg.seed, 4), cfg.level)?;
            text += &format!(
                "GPD over {limit} s: sigma = {}, xi = {}, exceedances = {}, conditional probability {}\n",
                est(fit.params.sigma, fit.sigma_se),
                est(fit.params.xi, fit.xi_se),
                fit.n_exceed,
                probability.display()
            );
            Some(PotSingle {
                limit,
                variant: if cfg.normalized { Variant::Normalized } else { Variant::Original },
                fit,
                evaluation_point: xmax,
                probability,
            })
        }
        None => None,
    };
    write_json(
        dir,
        "report.json",
        &PotReport {
            measure: m,
            results: [&a, &b],
            stable_regions: regions,
            single,
        },
    )?;
    write_text(dir, "report.txt", &text)?;
    Ok((converged, text))
}

fn cmd_simulate(cfg: &RunConfig, dir: &Path) -> Result<(bool, String)> {
    let mut sc = match &cfg.synth_config {
        Some(p) => SynthConfig::from_json_file(p)?,
        None => SynthConfig::calibrated(cfg.seed),
    };
    if let Some(n) = cfg.maneuvers {
        sc.n_maneuvers = n;
    }
    let ds = synth::generate(&sc)?;
    dataset::write_csv(&ds, dir.join("synthetic.csv"))?;
    write_json(dir, "synth_config.json", &sc)?;
    let truth = synth::true_collision_probability(&sc, cfg.mc_size.max(1))?;
    write_json(dir, "truth.json", &truth)?;
    let c = ds.collision_counts();
    let text = format!(
        "{} maneuvers, {} head-on and {} rear-end collisions\ntrue probabilities: head-on {:.5} rear-end {:.5} joint {:.5} ({} draws)\n",
        ds.len(),
        c.head_on,
        c.rear_end,
        truth.head_on.p,
        truth.rear_end.p,
        truth.joint.p,
        truth.n_sim
    );
    write_text(dir, "report.txt", &text)?;
    Ok((true, text))
}

fn cmd_prob_empirical(cfg: &RunConfig, dir: &Path) -> Result<(bool, String)> {
    let (k, n) = match (cfg.k, cfg.n) {
        (Some(k), Some(n)) => (k, n),
        _ => return Err(Error::Usage("prob-empirical needs --k and --n".into())),
    };
    let p = empirical_collision_probability(k, n, cfg.level)?;
    write_json(dir, "report.json", &p)?;
    let text = p.display();
    write_text(dir, "report.txt", &format!("{text}\n"))?;
    Ok((true, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let t = table(&["a", "bb"], &[vec!["long".into(), "x".into()]]);
        assert_eq!(t, "a     bb\n----  --\nlong  x\n");
    }

    #[test]
    fn stamp_ignores_output_location() {
        let mut a = RunConfig::new("fit-bm");
        let mut b = a.clone();
        b.out = PathBuf::from("/elsewhere");
        b.threads = Some(3);
        assert_eq!(a.stamp(), b.stamp());
        a.seed = 7;
        assert_ne!(a.stamp(), b.stamp());
    }

    #[test]
    fn parses_flags_and_subcommands() {
        let cli = Cli::try_parse_from([
            "evtss", "fit-bm", "--input", "x.csv", "--covariates", "a,b", "--gumbel", "--seed", "9", "--measure", "thw",
        ])
        .unwrap();
        let cfg = RunConfig::from_cli(&cli);
        assert_eq!(cfg.subcommand, "fit-bm");
        assert_eq!(cfg.covariates, vec!["a", "b"]);
        assert!(cfg.gumbel);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.measure, Measure::Thw);
        let cli = Cli::try_parse_from(["evtss", "prob-empirical", "--k", "9", "--n", "463"]).unwrap();
        let cfg = RunConfig::from_cli(&cli);
        assert_eq!((cfg.k, cfg.n), (Some(9), Some(463)));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["evtss", "fit-bm", "--level", "abc"]), 1);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["evtss", "fit-bm", "--out", out]), 1);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 2);
    }

    #[test]
    fn empirical_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new("prob-empirical");
        cfg.out = dir.path().to_path_buf();
        cfg.k = Some(9);
        cfg.n = Some(463);
        let o = execute(&cfg).unwrap();
        assert_eq!(o.summary, "0.0191 (0.0067, 0.0314)");
        assert!(o.run_dir.join("run_config.json").exists());
    }

    #[test]
    fn gumbel_plugin_probability() {
        let p = crate::dist::GevParams::gumbel(-1.456, 0.256).unwrap();
        assert!((bm_collision_probability(&p).p - 0.00338).abs() < 1e-5);
    }
}
