//! The `aqst` batch driver.
//!
//! Every subcommand reads one JSON experiment config (all keys optional, unknown
//! keys rejected), applies `--set key=value` overrides, validates the resulting
//! run specs, and only then starts computing. Exit codes: 0 success, 1 runtime
//! failure, 2 usage error, 3 invalid config.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::design::{DesignClass, OptimizerParams};
use crate::harness::{
    aggregate_csv, aggregate_runs, fit_power_law, fit_power_law_range, find_plateau, purity_sweep, run_batch,
    saturated_level, spread, stream, trajectory_csv, write_atomic, Aggregate, EnsembleParams, PowerLawFit, RunSpec,
    Trajectory, TruthSpec,
};
use crate::measurements::NoiseModel;
use crate::priors::PriorKind;
use crate::{Result, TomographyError};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "aqst", version, about = "Adaptive Bayesian two-qubit tomography simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Run,
    SweepPurity,
    SweepNoise,
    Plateau,
    Rdd,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Independent runs per design class, with aggregate curves and power-law fits.
    Run(CommonArgs),
    /// Events needed to reach a distribution-size threshold, per purity layer.
    SweepPurity(CommonArgs),
    /// Spread over runs on one true state under wave-plate angle noise.
    SweepNoise(CommonArgs),
    /// Prior-induced convergence plateau on an eigenvalue-degenerate state.
    Plateau(CommonArgs),
    /// Ratio of distance-to-truth to distribution size.
    Rdd(CommonArgs),
}

impl Command {
    fn split(&self) -> (CommandKind, &CommonArgs) {
        match self {
            Command::Run(a) => (CommandKind::Run, a),
            Command::SweepPurity(a) => (CommandKind::SweepPurity, a),
            Command::SweepNoise(a) => (CommandKind::SweepNoise, a),
            Command::Plateau(a) => (CommandKind::Plateau, a),
            Command::Rdd(a) => (CommandKind::Rdd, a),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Master seed; overrides the config value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one config key, e.g. `n_total=10000` or `ensemble.size=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for independent runs [env: AQST_JOBS; default 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// The experiment config file. Unset keys take per-command defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub classes: Option<Vec<DesignClass>>,
    pub prior: Option<PriorKind>,
    /// Priors compared by `plateau`.
    pub priors: Option<Vec<PriorKind>>,
    pub truth: Option<TruthSpec>,
    pub n_total: Option<u64>,
    pub runs: Option<usize>,
    pub checkpoints_per_decade: Option<u32>,
    pub noise: Option<NoiseModel>,
    pub ensemble: Option<EnsembleParams>,
    pub optimizer: Option<OptimizerParams>,
    pub seed: Option<u64>,
    pub track_mle: Option<bool>,
    /// `[lo, hi]` event range for power-law fits; full range when unset.
    pub fit_range: Option<[f64; 2]>,
    pub purity_layers: Option<Vec<f64>>,
    pub purity_tolerance: Option<f64>,
    pub d_err_sq: Option<f64>,
    pub noise_levels_deg: Option<Vec<f64>>,
}

/// A fully resolved and validated invocation.
#[derive(Clone, Debug)]
pub struct CliConfig {
    pub command: CommandKind,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub overrides: Vec<String>,
    pub master_seed: u64,
    pub jobs: usize,
    pub experiment: Resolved,
}

/// Config with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub classes: Vec<DesignClass>,
    pub priors: Vec<PriorKind>,
    pub truth: TruthSpec,
    pub n_total: u64,
    pub runs: usize,
    pub checkpoints_per_decade: u32,
    pub noise: NoiseModel,
    pub ensemble: EnsembleParams,
    pub optimizer: OptimizerParams,
    pub seed: u64,
    pub track_mle: bool,
    pub fit_range: Option<[f64; 2]>,
    pub purity_layers: Vec<f64>,
    pub purity_tolerance: f64,
    pub d_err_sq: f64,
    pub noise_levels_deg: Vec<f64>,
}

impl Resolved {
    fn spec(&self, class: DesignClass, prior: PriorKind, run_index: usize) -> RunSpec {
        RunSpec {
            class,
            prior,
            truth: self.truth.clone(),
            n_total: self.n_total,
            checkpoints_per_decade: self.checkpoints_per_decade,
            noise: self.noise,
            ensemble: self.ensemble,
            optimizer: self.optimizer,
            seed: self.seed,
            run_index: run_index as u64,
            track_mle: self.track_mle,
        }
    }

    fn specs(&self, class: DesignClass, prior: PriorKind) -> Vec<RunSpec> {
        (0..self.runs).map(|k| self.spec(class, prior, k)).collect()
    }
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    fn runtime(e: TomographyError) -> Self {
        Self { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

/// Sets `path` (dot-separated) in a JSON object tree. Values parse as JSON when
/// they can, otherwise as strings.
pub fn apply_override(root: &mut Value, assignment: &str) -> std::result::Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::usage(format!("--set has an empty key in `{assignment}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("cannot set `{key}`: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| json!({}));
    }
    unreachable!()
}

fn defaults_for(command: CommandKind, file: ExperimentConfig, seed: Option<u64>) -> Resolved {
    let (classes, truth, track_mle, priors) = match command {
        CommandKind::Run => (DesignClass::ALL.to_vec(), TruthSpec::PureHaar, false, vec![PriorKind::Bures]),
        CommandKind::SweepPurity => (DesignClass::ALL.to_vec(), TruthSpec::BuresRandom, false, vec![PriorKind::Bures]),
        CommandKind::SweepNoise => (
            vec![DesignClass::FactorizedRandom, DesignClass::FactorizedAdaptive],
            TruthSpec::PureHaar,
            false,
            vec![PriorKind::Bures],
        ),
        CommandKind::Plateau => (
            vec![DesignClass::FactorizedAdaptive],
            TruthSpec::Diagonal { eigenvalues: vec![0.9925, 0.0025, 0.0025, 0.0025] },
            true,
            vec![PriorKind::Bures, PriorKind::SimplexUniform],
        ),
        CommandKind::Rdd => (
            vec![DesignClass::GeneralAdaptive, DesignClass::FactorizedAdaptive],
            TruthSpec::BuresRandom,
            false,
            vec![PriorKind::Bures],
        ),
    };
    let priors = match (command, file.priors, file.prior) {
        (CommandKind::Plateau, Some(p), _) => p,
        (_, _, Some(p)) => vec![p],
        _ => priors,
    };
    Resolved {
        classes: file.classes.unwrap_or(classes),
        priors,
        truth: file.truth.unwrap_or(truth),
        n_total: file.n_total.unwrap_or(10_000),
        runs: file.runs.unwrap_or(match command {
            CommandKind::SweepNoise | CommandKind::Plateau => 10,
            _ => 1,
        }),
        checkpoints_per_decade: file.checkpoints_per_decade.unwrap_or(20),
        noise: file.noise.unwrap_or_default(),
        ensemble: file.ensemble.unwrap_or_default(),
        optimizer: file.optimizer.unwrap_or_default(),
        seed: seed.or(file.seed).unwrap_or(0),
        track_mle: file.track_mle.unwrap_or(track_mle),
        fit_range: file.fit_range,
        purity_layers: file.purity_layers.unwrap_or_else(|| vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4]),
        purity_tolerance: file.purity_tolerance.unwrap_or(0.01),
        d_err_sq: file.d_err_sq.unwrap_or(5e-3),
        noise_levels_deg: file.noise_levels_deg.unwrap_or_else(|| vec![0.2, 3.0, 5.0]),
    }
}

fn validate(command: CommandKind, r: &Resolved) -> Result<()> {
    let bad = |m: &str| Err(TomographyError::InvalidConfig(m.into()));
    if r.classes.is_empty() || r.priors.is_empty() {
        return bad("classes and priors must be non-empty");
    }
    if r.runs < 1 {
        return bad("runs must be at least 1");
    }
    if let Some([lo, hi]) = r.fit_range {
        if !(lo > 0.0 && lo < hi) {
            return bad("fit_range must satisfy 0 < lo < hi");
        }
    }
    match command {
        CommandKind::SweepNoise => {
            if r.runs < 2 {
                return bad("sweep-noise needs at least 2 runs to measure a spread");
            }
            for &deg in &r.noise_levels_deg {
                NoiseModel::from_degrees(deg)?;
            }
            if let Some(c) = r.classes.iter().find(|c| !c.is_factorized()) {
                return Err(TomographyError::InvalidConfig(format!(
                    "angle noise applies to wave plates only; class {c} is not factorized"
                )));
            }
        }
        CommandKind::SweepPurity => {
            if !(r.d_err_sq > 0.0) {
                return bad("d_err_sq must be positive");
            }
            for &p in &r.purity_layers {
                TruthSpec::BuresPurity { purity: p, tolerance: r.purity_tolerance }.validate()?;
            }
        }
        _ => {}
    }
    for &class in &r.classes {
        for &prior in &r.priors {
            r.spec(class, prior, 0).validate()?;
        }
    }
    Ok(())
}

/// Parses arguments, reads the config, applies overrides and validates.
pub fn parse_and_validate<I, T>(argv: I) -> std::result::Result<CliConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError { code: 0, message: e.to_string() }
        }
        _ => CliError::usage(e.to_string()),
    })?;
    let (command, args) = cli.command.split();
    let mut value = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config file {}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| CliError::config(format!("{}: invalid JSON: {e}", path.display())))?
        }
        None => json!({}),
    };
    if !value.is_object() {
        return Err(CliError::config("the config must be a JSON object"));
    }
    for o in &args.overrides {
        apply_override(&mut value, o)?;
    }
    let file: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
    let experiment = defaults_for(command, file, args.seed);
    validate(command, &experiment).map_err(|e| CliError::config(e.to_string()))?;
    let jobs = match args.jobs {
        Some(j) => j,
        None => match std::env::var("AQST_JOBS") {
            Ok(v) => v.parse().map_err(|_| CliError::usage(format!("AQST_JOBS must be a positive integer, got `{v}`")))?,
            Err(_) => 1,
        },
    };
    if jobs < 1 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    Ok(CliConfig {
        command,
        config_path: args.config.clone(),
        out_dir: args.out.clone(),
        overrides: args.overrides.clone(),
        master_seed: experiment.seed,
        jobs,
        experiment,
    })
}

fn command_name(c: CommandKind) -> &'static str {
    match c {
        CommandKind::Run => "run",
        CommandKind::SweepPurity => "sweep-purity",
        CommandKind::SweepNoise => "sweep-noise",
        CommandKind::Plateau => "plateau",
        CommandKind::Rdd => "rdd",
    }
}

fn header(cfg: &CliConfig) -> String {
    format!(
        "aqst {} {}\nseed: {}\nconfig: {}",
        env!("CARGO_PKG_VERSION"),
        command_name(cfg.command),
        cfg.master_seed,
        serde_json::to_string(&cfg.experiment).expect("config serializes")
    )
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, contents.as_bytes())?;
        self.written.push(path);
        Ok(())
    }

    fn put_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.put(name, &s)
    }
}

fn fit_curve(agg: &Aggregate, metric: &str, range: Option<[f64; 2]>) -> Option<PowerLawFit> {
    let curve = agg.curve(metric)?;
    match range {
        Some([lo, hi]) => fit_power_law_range(&curve, lo, hi),
        None => fit_power_law(&curve),
    }
    .ok()
}

fn fit_json(cfg: &CliConfig, class: DesignClass, prior: PriorKind, metric: &str, fit: Option<PowerLawFit>, n_runs: usize) -> Value {
    json!({
        "class": class,
        "prior": prior,
        "metric": metric,
        "c": fit.map(|f| f.c),
        "a": fit.map(|f| f.a),
        "stderr_a": fit.map(|f| f.stderr_a),
        "n_runs": n_runs,
        "fit_range": cfg.experiment.fit_range,
        "seed": cfg.master_seed,
    })
}

fn fmt_a(fit: Option<PowerLawFit>) -> String {
    fit.map_or_else(|| "n/a".into(), |f| format!("{:.3} +- {:.3}", f.a, f.stderr_a))
}

/// Runs, per-run CSVs and the aggregate for one class/prior pair.
fn run_group(
    cfg: &CliConfig,
    w: &mut Writer,
    specs: &[RunSpec],
    stem: &str,
) -> Result<(Vec<Trajectory>, Aggregate)> {
    let runs = run_batch(specs, cfg.jobs)?;
    let head = header(cfg);
    for t in &runs {
        w.put(&format!("{stem}_run{}.csv", t.run_index), &trajectory_csv(t, &head))?;
    }
    let agg = aggregate_runs(&runs)?;
    w.put(&format!("{stem}_aggregate.csv"), &aggregate_csv(&agg, &head))?;
    Ok((runs, agg))
}

fn final_mean(agg: &Aggregate, metric: &str) -> f64 {
    agg.metric(metric).and_then(|m| m.mean.last().copied()).unwrap_or(f64::NAN)
}

fn exec_run(cfg: &CliConfig, w: &mut Writer, rdd: bool) -> Result<()> {
    let r = &cfg.experiment;
    let mut fits = Vec::new();
    for &prior in &r.priors {
        for &class in &r.classes {
            let stem = format!("{class}_{prior}");
            let (_, agg) = run_group(cfg, w, &r.specs(class, prior), &stem)?;
            let fit = fit_curve(&agg, "dist_size_bures", r.fit_range);
            fits.push(fit_json(cfg, class, prior, "dist_size_bures", fit, agg.n_runs));
            let mut line = format!(
                "{class} {prior}: final dist_size {:.4e}, a = {}",
                final_mean(&agg, "dist_size_bures"),
                fmt_a(fit)
            );
            if rdd {
                let m = agg.metric("rdd").expect("rdd is always aggregated");
                let mut csv = String::new();
                for l in header(cfg).lines() {
                    csv.push_str(&format!("# {l}\n"));
                }
                csv.push_str("N,rdd_mean,rdd_std\n");
                for (i, n) in agg.n.iter().enumerate() {
                    csv.push_str(&format!("{n},{},{}\n", m.mean[i], m.std[i]));
                }
                w.put(&format!("{stem}_rdd.csv"), &csv)?;
                let max = m.mean.iter().copied().fold(f64::MIN, f64::max);
                line.push_str(&format!(", max mean rdd {max:.3}"));
            }
            println!("{line}");
        }
    }
    w.put_json("fits.json", &json!({ "seed": cfg.master_seed, "config": r, "fits": fits }))
}

fn exec_sweep_purity(cfg: &CliConfig, w: &mut Writer) -> Result<()> {
    let r = &cfg.experiment;
    let mut csv = String::new();
    for l in header(cfg).lines() {
        csv.push_str(&format!("# {l}\n"));
    }
    csv.push_str("purity,class,mean_n,std_n,censored,runs\n");
    let mut all = Vec::new();
    for &prior in &r.priors {
        let template = r.spec(r.classes[0], prior, 0);
        let layers = purity_sweep(&template, &r.purity_layers, r.purity_tolerance, r.runs, r.d_err_sq, &r.classes, cfg.jobs)?;
        for layer in &layers {
            for c in &layer.classes {
                let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    layer.purity,
                    c.class,
                    opt(c.mean_n),
                    opt(c.std_n),
                    c.censored,
                    c.crossings.len()
                ));
                println!(
                    "purity {} {} {prior}: mean N {} ({} censored of {})",
                    layer.purity,
                    c.class,
                    c.mean_n.map_or("censored".into(), |v| format!("{v:.0}")),
                    c.censored,
                    c.crossings.len()
                );
            }
        }
        all.push(json!({ "prior": prior, "layers": layers }));
    }
    w.put("purity_sweep.csv", &csv)?;
    w.put_json("purity_sweep.json", &json!({ "seed": cfg.master_seed, "config": r, "results": all }))
}

fn exec_sweep_noise(cfg: &CliConfig, w: &mut Writer) -> Result<()> {
    let r = &cfg.experiment;
    // All runs of the sweep measure one and the same true state.
    let truth = r.truth.resolve(&mut stream(r.seed, 0, 0))?;
    let mut summary = Vec::new();
    for &deg in &r.noise_levels_deg {
        let noise = NoiseModel::from_degrees(deg)?;
        let mut csv = String::new();
        for l in header(cfg).lines() {
            csv.push_str(&format!("# {l}\n"));
        }
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        let mut n_axis = Vec::new();
        let mut levels = serde_json::Map::new();
        for &prior in &r.priors {
            for &class in &r.classes {
                let specs: Vec<RunSpec> = r
                    .specs(class, prior)
                    .into_iter()
                    .map(|s| RunSpec { truth: TruthSpec::Explicit { state: truth.clone() }, noise, ..s })
                    .collect();
                let runs = run_batch(&specs, cfg.jobs)?;
                let estimates: Vec<_> = runs.iter().map(|t| t.estimates.clone()).collect();
                let curve = spread(&estimates)?;
                n_axis = runs[0].records.iter().map(|rec| rec.n).collect();
                let sat = saturated_level(&n_axis, &curve);
                println!("noise {deg} deg {class} {prior}: saturated spread {sat:.4e}");
                levels.insert(format!("{class}_{prior}"), json!(sat));
                columns.push((format!("spread_{class}_{prior}"), curve));
            }
        }
        csv.push('N');
        for (name, _) in &columns {
            csv.push(',');
            csv.push_str(name);
        }
        csv.push('\n');
        for (i, n) in n_axis.iter().enumerate() {
            csv.push_str(&n.to_string());
            for (_, c) in &columns {
                csv.push_str(&format!(",{}", c[i]));
            }
            csv.push('\n');
        }
        w.put(&format!("spread_{deg}deg.csv"), &csv)?;
        summary.push(json!({ "delta_theta_max_deg": deg, "saturated_spread": levels }));
    }
    w.put_json(
        "noise_summary.json",
        &json!({ "seed": cfg.master_seed, "config": r, "truth": truth, "levels": summary }),
    )
}

fn exec_plateau(cfg: &CliConfig, w: &mut Writer) -> Result<()> {
    let r = &cfg.experiment;
    let mut results = Vec::new();
    for &prior in &r.priors {
        for &class in &r.classes {
            let stem = format!("plateau_{class}_{prior}");
            // The likelihood reference is computed on the simplex-prior measurement sets.
            let specs: Vec<RunSpec> = r
                .specs(class, prior)
                .into_iter()
                .map(|s| RunSpec { track_mle: s.track_mle && prior == PriorKind::SimplexUniform, ..s })
                .collect();
            let (_, agg) = run_group(cfg, w, &specs, &stem)?;
            let curve = agg.curve("dist_true_bures").expect("always aggregated");
            let window = find_plateau(&curve, 1.0, 0.1);
            let fit = fit_curve(&agg, "dist_true_bures", r.fit_range);
            let mle_final = agg.metric("mle_dist_true_bures").and_then(|m| m.mean.last().copied());
            println!(
                "{class} {prior}: final dist_true {:.4e}, a = {}, plateau {}",
                final_mean(&agg, "dist_true_bures"),
                fmt_a(fit),
                window.map_or("none".into(), |(a, b)| format!("[{a}, {b}]"))
            );
            results.push(json!({
                "class": class,
                "prior": prior,
                "n_runs": agg.n_runs,
                "plateau_window": window,
                "fit_dist_true": fit,
                "final_dist_true": final_mean(&agg, "dist_true_bures"),
                "final_mle_dist_true": mle_final,
            }));
        }
    }
    w.put_json("plateau.json", &json!({ "seed": cfg.master_seed, "config": r, "results": results }))
}

/// Runs a validated invocation; returns the written files.
pub fn execute(cfg: &CliConfig) -> std::result::Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::runtime(e.into()))?;
    let mut w = Writer { dir: &cfg.out_dir, written: Vec::new() };
    let result = match cfg.command {
        CommandKind::Run => exec_run(cfg, &mut w, false),
        CommandKind::Rdd => exec_run(cfg, &mut w, true),
        CommandKind::SweepPurity => exec_sweep_purity(cfg, &mut w),
        CommandKind::SweepNoise => exec_sweep_noise(cfg, &mut w),
        CommandKind::Plateau => exec_plateau(cfg, &mut w),
    };
    result.map(|_| w.written).map_err(|e| {
        let mut err = CliError::runtime(e);
        err.message = format!("{} (master seed {}; replay with --seed {})", err.message, cfg.master_seed, cfg.master_seed);
        err
    })
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_and_validate(argv).and_then(|cfg| execute(&cfg)) {
        Ok(_) => 0,
        Err(e) if e.code == 0 => {
            print!("{}", e.message);
            0
        }
        Err(e) => {
            eprintln!("aqst: {}", e.message.trim_end());
            e.code
        }
    }
}
