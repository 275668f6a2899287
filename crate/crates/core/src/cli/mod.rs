//! Command-line entry points: run configuration, the five subcommands and
//! the exit-code contract (0 ok, 2 convergence warning, 3 input error,
//! 4 numerical failure).

pub mod artifacts;
pub mod ingest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use artifacts::{
    finalize_manifest, read_draws_csv, read_manifest, sha256_hex, write_dataset, write_draws_csv,
    write_json, write_latents_csv, write_pareto_csv, write_trajectory_csv, EvalOutput, FitSummary,
    Manifest,
};
pub use ingest::{apply_standardization, ingest, split_days, standardize, Standardization};

use crate::data::PatientData;
use crate::error::Error;
use crate::eval::{
    cosine_similarity, mann_whitney_u, metric_report, pointwise_loglik, psis_loo,
    summarize_trajectories, trajectory_draws, LooResult,
};
use crate::inference::{fit_model, PosteriorDraws, SamplerConfig};
use crate::model::{ModelSpec, Variant};
use crate::params::Layout;
use crate::simulate::{
    default_coeff_set, simulate_from_fit, simulate_generative, simulate_toy, GroundTruth,
    Protocol, SimConfig, TrendKind,
};
use crate::Result;

/// Everything a run needs, config-file shaped. Flags override single fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub glucose: Option<PathBuf>,
    pub meals: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub model: ModelSpec,
    pub sampler: SamplerConfig,
    pub sim: SimConfig,
    /// Days (from each patient's first observation) forming the training
    /// split; everything later is test.
    pub train_days: usize,
    pub standardize_outcome: bool,
    pub standardize_covariates: bool,
    /// Outcome unit recorded in artifacts; a label only, never converted.
    pub unit: String,
    /// Posterior draws used for trajectory reconstruction, evenly thinned.
    pub max_trajectory_draws: usize,
    pub label: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            glucose: None,
            meals: None,
            out_dir: PathBuf::from("out"),
            model: ModelSpec::default(),
            sampler: SamplerConfig::default(),
            sim: SimConfig::default(),
            train_days: 2,
            standardize_outcome: true,
            standardize_covariates: true,
            unit: "mmol/L".into(),
            max_trajectory_draws: 400,
            label: None,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Input(format!("cannot read config {}: {e}", p.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    match s {
        "ind" => Ok(Variant::Ind),
        "hier" => Ok(Variant::Hier),
        "hier-time" => Ok(Variant::HierTime),
        "hier-time-cov" => Ok(Variant::HierTimeCov),
        _ => Err(format!(
            "unknown variant `{s}` (expected ind, hier, hier-time or hier-time-cov)"
        )),
    }
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    match s {
        "toy" => Ok(Protocol::Toy),
        "generative" => Ok(Protocol::Generative),
        "from-fit" => Ok(Protocol::FromFit),
        _ => Err(format!(
            "unknown protocol `{s}` (expected toy, generative or from-fit)"
        )),
    }
}

fn parse_trend(s: &str) -> std::result::Result<TrendKind, String> {
    match s {
        "linear" => Ok(TrendKind::Linear),
        "gp" => Ok(TrendKind::Gp),
        _ => Err(format!("unknown trend `{s}` (expected linear or gp)")),
    }
}

fn variant_name(v: Variant) -> String {
    match v {
        Variant::Ind => "ind",
        Variant::Hier => "hier",
        Variant::HierTime => "hier-time",
        Variant::HierTimeCov => "hier-time-cov",
    }
    .to_string()
}

#[derive(Parser)]
#[command(
    name = "eivtraj",
    version,
    about = "Treatment-response trajectories from glucose series and meal logs, \
             with errors-in-variables corrections for reported meal times and amounts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Sample the posterior for one model variant and write fit artifacts
    Fit(FitArgs),
    /// Reconstruct test-day trajectories from an existing fit
    Predict(PredictArgs),
    /// Generate a synthetic dataset with recorded ground truth
    Simulate(SimulateArgs),
    /// Score a fit: variance/error metrics, LOO, optional baseline comparison
    Evaluate(EvaluateArgs),
    /// Render one or more metric reports as a comparison table
    Report(ReportArgs),
}

#[derive(Args)]
pub struct FitArgs {
    /// JSON run config; individual flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub glucose: Option<PathBuf>,
    #[arg(long)]
    pub meals: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// ind, hier, hier-time or hier-time-cov
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub target_accept: Option<f64>,
    #[arg(long)]
    pub max_tree_depth: Option<usize>,
    #[arg(long)]
    pub sigma_x: Option<f64>,
    #[arg(long)]
    pub sigma_t: Option<f64>,
    #[arg(long)]
    pub sigma_d: Option<f64>,
    #[arg(long)]
    pub inducing: Option<usize>,
    #[arg(long)]
    pub train_days: Option<usize>,
    #[arg(long)]
    pub standardize_outcome: Option<bool>,
    #[arg(long)]
    pub standardize_covariates: Option<bool>,
    #[arg(long)]
    pub max_trajectory_draws: Option<usize>,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Directory holding draws.csv and manifest.json from a fit run
    #[arg(long)]
    pub fit_dir: PathBuf,
    /// Dataset override; defaults to the files the fit was trained on
    #[arg(long)]
    pub glucose: Option<PathBuf>,
    #[arg(long)]
    pub meals: Option<PathBuf>,
    /// Defaults to <fit-dir>/predict
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// toy, generative or from-fit
    #[arg(long, value_parser = parse_protocol)]
    pub protocol: Option<Protocol>,
    /// Required by the from-fit protocol
    #[arg(long)]
    pub fit_dir: Option<PathBuf>,
    #[arg(long)]
    pub n_patients: Option<usize>,
    #[arg(long)]
    pub meals_per_patient: Option<usize>,
    #[arg(long)]
    pub covariate_dim: Option<usize>,
    #[arg(long)]
    pub perturb_fraction: Option<f64>,
    #[arg(long)]
    pub perturb_sd: Option<f64>,
    #[arg(long)]
    pub response_scale: Option<f64>,
    /// linear or gp
    #[arg(long, value_parser = parse_trend)]
    pub trend: Option<TrendKind>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub cadence_min: Option<f64>,
    #[arg(long)]
    pub horizon_days: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub fit_dir: PathBuf,
    #[arg(long)]
    pub glucose: Option<PathBuf>,
    #[arg(long)]
    pub meals: Option<PathBuf>,
    /// A second fit of the same data; enables the rank test on per-patient
    /// test errors and supplies the exclusion baseline
    #[arg(long)]
    pub baseline_dir: Option<PathBuf>,
    /// Ground-truth JSON from a simulate run; enables coefficient recovery
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Defaults to <fit-dir>/eval
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// metric_report.json files from evaluate runs, one table row each
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Also write report.txt (and a manifest) here
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parses arguments and runs; the returned code is ready for process::exit.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Report(args) => cmd_report(args),
    }
}

/// Reads the dataset named by the config, applies the day split and checks
/// that every patient keeps enough training points to anchor a trend.
fn load_and_split(cfg: &RunConfig) -> Result<(Vec<PatientData>, PathBuf, PathBuf)> {
    let glucose = cfg
        .glucose
        .clone()
        .ok_or_else(|| Error::Input("no glucose path (use --glucose or the config file)".into()))?;
    let meals = cfg
        .meals
        .clone()
        .ok_or_else(|| Error::Input("no meals path (use --meals or the config file)".into()))?;
    let mut data = ingest(&glucose, &meals)?;
    split_days(&mut data, cfg.train_days);
    for p in &data {
        if p.n_train() < 2 {
            return Err(Error::Input(format!(
                "patient {} has {} training observations; need at least 2",
                p.id,
                p.n_train()
            )));
        }
    }
    Ok((data, glucose, meals))
}

fn check_layout(layout: &Layout, draws: &PosteriorDraws) -> Result<()> {
    if layout.names() != &draws.names[..] {
        return Err(Error::Input(
            "draws do not match this dataset and model (parameter names differ)".into(),
        ));
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<i32> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(v) = args.glucose {
        cfg.glucose = Some(v);
    }
    if let Some(v) = args.meals {
        cfg.meals = Some(v);
    }
    if let Some(v) = args.out_dir {
        cfg.out_dir = v;
    }
    if let Some(v) = args.variant {
        cfg.model.variant = v;
    }
    if let Some(v) = args.chains {
        cfg.sampler.chains = v;
    }
    if let Some(v) = args.warmup {
        cfg.sampler.warmup = v;
    }
    if let Some(v) = args.draws {
        cfg.sampler.draws = v;
    }
    if let Some(v) = args.seed {
        cfg.sampler.seed = v;
    }
    if let Some(v) = args.target_accept {
        cfg.sampler.target_accept = v;
    }
    if let Some(v) = args.max_tree_depth {
        cfg.sampler.max_tree_depth = v;
    }
    if let Some(v) = args.sigma_x {
        cfg.model.sigma_x = v;
    }
    if let Some(v) = args.sigma_t {
        cfg.model.sigma_t = v;
    }
    if let Some(v) = args.sigma_d {
        cfg.model.sigma_d = v;
    }
    if let Some(v) = args.inducing {
        cfg.model.inducing_count = v;
    }
    if let Some(v) = args.train_days {
        cfg.train_days = v;
    }
    if let Some(v) = args.standardize_outcome {
        cfg.standardize_outcome = v;
    }
    if let Some(v) = args.standardize_covariates {
        cfg.standardize_covariates = v;
    }
    if let Some(v) = args.max_trajectory_draws {
        cfg.max_trajectory_draws = v;
    }
    if let Some(v) = args.label {
        cfg.label = Some(v);
    }

    let (mut data, glucose, meals) = load_and_split(&cfg)?;
    let st = standardize(&mut data, cfg.standardize_outcome, cfg.standardize_covariates);
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    let fit = fit_model(&data, &cfg.model, &cfg.sampler)?;
    write_draws_csv(&out.join("draws.csv"), &fit.draws)?;
    write_json(
        &out.join("summary.json"),
        &FitSummary {
            variant: cfg.model.variant,
            chains: cfg.sampler.chains,
            draws_per_chain: cfg.sampler.draws,
            warmup: cfg.sampler.warmup,
            max_rhat: fit.max_rhat,
            divergences: fit.draws.divergence_counts(),
            step_sizes: &fit.draws.step_sizes,
            parameters: &fit.summaries,
        },
    )?;
    let td = trajectory_draws(&fit.draws, &fit.layout, &cfg.model, &data, cfg.max_trajectory_draws)?;
    let ts = summarize_trajectories(&td);
    write_trajectory_csv(&out.join("trajectory.csv"), &data, &ts, false)?;
    write_latents_csv(&out.join("latents.csv"), &data, &fit.draws, &fit.layout, cfg.model.variant)?;

    let max_rhat = fit.max_rhat;
    let mut manifest = Manifest {
        command: "fit".into(),
        seed: cfg.sampler.seed,
        config: cfg,
        standardization: Some(st),
        inputs: BTreeMap::new(),
        artifacts: BTreeMap::new(),
    };
    manifest.inputs.insert("glucose".into(), sha256_hex(&glucose)?);
    manifest.inputs.insert("meals".into(), sha256_hex(&meals)?);
    finalize_manifest(
        &out,
        manifest,
        &["draws.csv", "summary.json", "trajectory.csv", "latents.csv"],
    )?;

    if max_rhat > 1.05 {
        eprintln!(
            "warning: max R-hat {max_rhat:.3} exceeds 1.05; chains have not mixed, \
             artifacts were written anyway"
        );
        return Ok(2);
    }
    Ok(0)
}

/// Loads a fit directory back into memory: the manifest's config, the
/// re-ingested (and identically standardized) dataset, the draw matrix and
/// the layout it was sampled under.
struct ReloadedFit {
    cfg: RunConfig,
    data: Vec<PatientData>,
    draws: PosteriorDraws,
    layout: Layout,
    manifest: Manifest,
}

fn reload_fit(fit_dir: &Path, glucose: Option<PathBuf>, meals: Option<PathBuf>) -> Result<ReloadedFit> {
    let manifest = read_manifest(fit_dir)?;
    let mut cfg = manifest.config.clone();
    if let Some(g) = glucose {
        cfg.glucose = Some(g);
    }
    if let Some(m) = meals {
        cfg.meals = Some(m);
    }
    let (mut data, ..) = load_and_split(&cfg)?;
    if let Some(st) = &manifest.standardization {
        apply_standardization(&mut data, st)?;
    }
    let draws = read_draws_csv(&fit_dir.join("draws.csv"))?;
    let layout = Layout::for_model(&cfg.model, &data);
    check_layout(&layout, &draws)?;
    Ok(ReloadedFit {
        cfg,
        data,
        draws,
        layout,
        manifest,
    })
}

fn cmd_predict(args: PredictArgs) -> Result<i32> {
    let fit = reload_fit(&args.fit_dir, args.glucose, args.meals)?;
    let out = args.out_dir.unwrap_or_else(|| args.fit_dir.join("predict"));
    let td = trajectory_draws(
        &fit.draws,
        &fit.layout,
        &fit.cfg.model,
        &fit.data,
        fit.cfg.max_trajectory_draws,
    )?;
    let ts = summarize_trajectories(&td);
    fs::create_dir_all(&out)?;
    write_trajectory_csv(&out.join("trajectory.csv"), &fit.data, &ts, true)?;
    let manifest = Manifest {
        command: "predict".into(),
        seed: fit.manifest.seed,
        config: fit.cfg,
        standardization: fit.manifest.standardization.clone(),
        inputs: fit.manifest.inputs.clone(),
        artifacts: BTreeMap::new(),
    };
    finalize_manifest(&out, manifest, &["trajectory.csv"])?;
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(v) = args.out_dir {
        cfg.out_dir = v;
    }
    if let Some(v) = args.protocol {
        cfg.sim.protocol = v;
    }
    if let Some(v) = args.n_patients {
        cfg.sim.n_patients = v;
    }
    if let Some(v) = args.meals_per_patient {
        cfg.sim.meals_per_patient = v;
    }
    if let Some(v) = args.covariate_dim {
        cfg.sim.covariate_dim = v;
    }
    if let Some(v) = args.perturb_fraction {
        cfg.sim.perturb_fraction = v;
    }
    if let Some(v) = args.perturb_sd {
        cfg.sim.perturb_sd = v;
    }
    if let Some(v) = args.response_scale {
        cfg.sim.response_scale = v;
    }
    if let Some(v) = args.trend {
        cfg.sim.trend = v;
    }
    if let Some(v) = args.noise_sd {
        cfg.sim.noise_sd = v;
    }
    if let Some(v) = args.cadence_min {
        cfg.sim.cadence_min = v;
    }
    if let Some(v) = args.horizon_days {
        cfg.sim.horizon_days = v;
    }
    if let Some(v) = args.seed {
        cfg.sim.seed = v;
    }

    let (patients, truth) = match cfg.sim.protocol {
        Protocol::Toy => simulate_toy(&cfg.sim)?,
        Protocol::Generative => simulate_generative(&cfg.sim, &default_coeff_set(&cfg.sim))?,
        Protocol::FromFit => {
            let fit_dir = args
                .fit_dir
                .ok_or_else(|| Error::Input("from-fit simulation needs --fit-dir".into()))?;
            let fit = reload_fit(&fit_dir, None, None)?;
            simulate_from_fit(&fit.draws, &fit.layout, &fit.data, &cfg.sim)?
        }
    };
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    write_dataset(&out, &patients)?;
    write_json(&out.join("truth.json"), &truth)?;
    let manifest = Manifest {
        command: "simulate".into(),
        seed: cfg.sim.seed,
        config: cfg,
        standardization: None,
        inputs: BTreeMap::new(),
        artifacts: BTreeMap::new(),
    };
    finalize_manifest(&out, manifest, &["glucose.csv", "meals.csv", "truth.json"])?;
    Ok(0)
}

/// Posterior-mean height coefficients mapped back to raw data units, sliced
/// to the first `truth_dim` covariates per patient (simulated datasets are
/// zero-padded up to the nutrient schema).
fn destandardized_heights(
    draws: &PosteriorDraws,
    layout: &Layout,
    st: Option<&Standardization>,
    truth_dim: usize,
) -> Vec<f64> {
    let all = crate::eval::concat_height_means(draws, layout);
    let dim = layout.covariate_dim;
    let mut out = Vec::new();
    for n in 0..layout.n_patients {
        for j in 0..truth_dim.min(dim) {
            let mut v = all[n * dim + j];
            if let Some(st) = st {
                v *= st.outcome_scale / st.covariate_scales.get(j).copied().unwrap_or(1.0);
            }
            out.push(v);
        }
    }
    out
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    let fit = reload_fit(&args.fit_dir, args.glucose.clone(), args.meals.clone())?;
    let out = args.out_dir.unwrap_or_else(|| args.fit_dir.join("eval"));
    let td = trajectory_draws(
        &fit.draws,
        &fit.layout,
        &fit.cfg.model,
        &fit.data,
        fit.cfg.max_trajectory_draws,
    )?;
    let ts = summarize_trajectories(&td);

    let pooled = fit.draws.n_chains() * fit.draws.n_draws();
    let loo: Option<LooResult> = if pooled >= 100 {
        let ll = pointwise_loglik(&fit.draws, &fit.layout, &fit.cfg.model, &fit.data)?;
        Some(psis_loo(&ll)?)
    } else {
        eprintln!("warning: {pooled} pooled draws < 100, skipping importance-sampled LOO");
        None
    };

    let (report, u_test) = match &args.baseline_dir {
        None => (metric_report(&ts, &fit.data, None, loo.as_ref())?, None),
        Some(dir) => {
            let base = reload_fit(dir, args.glucose.clone(), args.meals.clone())?;
            if base.manifest.inputs != fit.manifest.inputs {
                return Err(Error::Input(
                    "baseline fit was trained on different data (input hashes differ)".into(),
                ));
            }
            let btd = trajectory_draws(
                &base.draws,
                &base.layout,
                &base.cfg.model,
                &base.data,
                base.cfg.max_trajectory_draws,
            )?;
            let bts = summarize_trajectories(&btd);
            let base_report = metric_report(&bts, &base.data, None, None)?;
            let baseline_m2: Vec<f64> = base_report.per_patient.iter().map(|p| p.m2).collect();
            let report = metric_report(&ts, &fit.data, Some(&baseline_m2), loo.as_ref())?;
            let mut cand = Vec::new();
            let mut basev = Vec::new();
            for (c, b) in report.per_patient.iter().zip(&base_report.per_patient) {
                if !c.excluded && c.m4.is_finite() && b.m4.is_finite() {
                    cand.push(c.m4);
                    basev.push(b.m4);
                }
            }
            let ut = if cand.is_empty() {
                None
            } else {
                Some(mann_whitney_u(&cand, &basev)?)
            };
            (report, ut)
        }
    };

    let cosine = match &args.truth {
        None => None,
        Some(path) => {
            let truth: GroundTruth = serde_json::from_str(&fs::read_to_string(path)?)?;
            let want = truth.concat_heights();
            let dim = truth.beta_h.first().map_or(0, |b| b.len());
            let got = destandardized_heights(
                &fit.draws,
                &fit.layout,
                fit.manifest.standardization.as_ref(),
                dim,
            );
            if got.len() == want.len() && !want.is_empty() {
                Some(cosine_similarity(&got, &want)?)
            } else {
                eprintln!(
                    "warning: ground truth covers {} coefficients, fit has {}; skipping cosine",
                    want.len(),
                    got.len()
                );
                None
            }
        }
    };

    let label = args
        .label
        .or_else(|| fit.cfg.label.clone())
        .unwrap_or_else(|| variant_name(fit.cfg.model.variant));
    fs::create_dir_all(&out)?;
    write_json(
        &out.join("metric_report.json"),
        &EvalOutput {
            label,
            variant: fit.cfg.model.variant,
            pooled_draws: pooled,
            metrics: report,
            u_test,
            cosine_beta_h: cosine,
        },
    )?;
    if let Some(loo) = &loo {
        write_pareto_csv(&out.join("pareto_k.csv"), &fit.data, loo)?;
    }
    let manifest = Manifest {
        command: "evaluate".into(),
        seed: fit.manifest.seed,
        config: fit.cfg,
        standardization: fit.manifest.standardization.clone(),
        inputs: fit.manifest.inputs.clone(),
        artifacts: BTreeMap::new(),
    };
    finalize_manifest(&out, manifest, &["metric_report.json", "pareto_k.csv"])?;
    Ok(0)
}

struct ReportRow {
    label: String,
    m: [f64; 5],
    p_value: Option<f64>,
    /// Deviance-scale LOO, effective parameters, SE on the deviance scale.
    loo: Option<(f64, f64, f64)>,
}

fn report_row(path: &Path, v: &serde_json::Value) -> ReportRow {
    let label = v["label"]
        .as_str()
        .map(str::to_string)
        .unwrap_or_else(|| path.file_stem().unwrap_or_default().to_string_lossy().into_owned());
    let g = |k: &str| v["metrics"][k].as_f64().unwrap_or(f64::NAN);
    let loo = v["metrics"]["loo"].as_object().map(|o| {
        let f = |k: &str| o.get(k).and_then(|x| x.as_f64()).unwrap_or(f64::NAN);
        (f("looic"), f("p_loo"), 2.0 * f("se_loo"))
    });
    ReportRow {
        label,
        m: [g("m1"), g("m2"), g("m3"), g("m4"), g("m5")],
        p_value: v["u_test"]["p_one_sided"].as_f64(),
        loo,
    }
}

fn cell(v: f64) -> String {
    if !v.is_finite() {
        "-".into()
    } else if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else if v.abs() >= 100.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    }
}

fn render_report(rows: &[ReportRow]) -> String {
    let headers = [
        "model", "M1", "M2", "M3", "M4", "M5", "p-value", "LOO", "pLOO", "SE-LOO",
    ];
    let mut grid: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        let mut row = vec![r.label.clone()];
        row.extend(r.m.iter().map(|&v| cell(v)));
        row.push(r.p_value.map_or("-".into(), cell));
        match r.loo {
            Some((looic, ploo, se)) => {
                row.push(cell(looic));
                row.push(cell(ploo));
                row.push(cell(se));
            }
            None => row.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
        }
        grid.push(row);
    }
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| grid.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in grid.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                out.push_str(&format!("{:<width$}", cell, width = widths[0]));
            } else {
                out.push_str(&format!("  {:>width$}", cell, width = widths[c]));
            }
        }
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out.push_str(
        "LOO is on the deviance scale (-2 * elpd_loo; lower is better); SE-LOO shares it.\n\
         p-value: one-sided rank test that the row's per-patient test errors are smaller\n\
         than the baseline's.\n",
    );
    out
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let mut rows = Vec::new();
    let mut inputs = BTreeMap::new();
    for p in &args.reports {
        let text = fs::read_to_string(p)
            .map_err(|e| Error::Input(format!("cannot read report {}: {e}", p.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        rows.push(report_row(p, &v));
        inputs.insert(p.display().to_string(), sha256_hex(p)?);
    }
    let table = render_report(&rows);
    print!("{table}");
    if let Some(dir) = args.out_dir {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("report.txt"), &table)?;
        let manifest = Manifest {
            command: "report".into(),
            seed: 0,
            config: RunConfig::default(),
            standardization: None,
            inputs,
            artifacts: BTreeMap::new(),
        };
        finalize_manifest(&dir, manifest, &["report.txt"])?;
    }
    Ok(0)
}
