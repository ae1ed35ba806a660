//! The `btcgp` command line.
//!
//! Exit codes: 0 success, 1 usage or invalid parameters, 2 data, file or
//! configuration errors, 3 numerical failures such as lost positive
//! definiteness.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::Error;
use crate::eval::bench::{bench_scaling, write_bench_csv, BenchConfig};
use crate::eval::experiment::{run_experiment, ExperimentConfig};
use crate::eval::synth::{equispaced, sample_gp};
use crate::io::{read_dataset_csv, read_inputs_csv, write_dataset, ModelFile};
use crate::kernel::{
    theoretical_bandwidth, theoretical_bandwidth_with_branch, BandwidthBranch, Dataset1D,
    SeHyperParams,
};
use crate::model::{FittedModel, Mode};
use crate::train::{fit, BandwidthPolicy, InitParams, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Bandwidths above this trigger a note that the minimum spacing may be pessimistic.
const LARGE_BANDWIDTH: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "btcgp", version, about = "1-D GP regression with banded training covariance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train hyperparameters on a CSV dataset and save the model.
    Fit(FitArgs),
    /// Predict mean and variance at new inputs from a saved model.
    Predict(PredictArgs),
    /// Run a cross-validated experiment from a JSON config.
    Eval(EvalArgs),
    /// Print the closed-form bandwidth for the given hyperparameters.
    Bandwidth(BandwidthArgs),
    /// Write an equispaced synthetic GP series as CSV.
    Simulate(SimulateArgs),
    /// Time loss evaluation and fitting over a list of sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Btc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KPolicyArg {
    Theoretical,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, conflicts_with = "k_policy")]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub k_policy: Option<KPolicyArg>,
    /// `auto` or `signal_var,lengthscale,noise_var`.
    #[arg(long, default_value = "auto")]
    pub init: String,
    /// Use this quantile of the input gaps for the theoretical bandwidth.
    #[arg(long)]
    pub delta_quantile: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with an `x` column, or `start:stop:count`.
    #[arg(long)]
    pub at: String,
    #[arg(long)]
    pub with_noise: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct BandwidthArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub sigma2: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub lengthscale: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub noise: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub sigma2: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub lengthscale: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub noise: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    pub n_list: Vec<usize>,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 5.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lengthscale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.2)]
    pub delta: f64,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Also time the exact loss up to this size.
    #[arg(long, default_value_t = 0)]
    pub exact_max_n: usize,
    #[arg(long)]
    pub no_fit: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// A command failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotPositiveDefinite { .. } | Error::PdFailure { .. } | Error::NonFiniteLoss => {
            EXIT_NUMERICAL
        }
        Error::InvalidParams(_) | Error::AlreadyNoised | Error::BandwidthOutOfRange { .. } => {
            EXIT_USAGE
        }
        _ => EXIT_DATA,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{e}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a, out, err),
        Command::Predict(a) => cmd_predict(&a, out, err),
        Command::Eval(a) => cmd_eval(&a, out, err),
        Command::Bandwidth(a) => cmd_bandwidth(&a, out, err),
        Command::Simulate(a) => cmd_simulate(&a, out, err),
        Command::Bench(a) => cmd_bench(&a, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn echo_config<T: Serialize>(err: &mut dyn Write, config: &T) {
    if let Ok(s) = serde_json::to_string(config) {
        let _ = writeln!(err, "config: {s}");
    }
}

fn params_from_flags(sigma2: f64, lengthscale: f64, noise: f64) -> std::result::Result<SeHyperParams, Failure> {
    SeHyperParams::new(sigma2, lengthscale, noise).map_err(|e| Failure::usage(e.to_string()))
}

fn parse_init(s: &str) -> std::result::Result<InitParams, Failure> {
    if s == "auto" {
        return Ok(InitParams::Auto);
    }
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Failure::usage(format!("bad --init `{s}`: {e}")))?;
    if parts.len() != 3 {
        return Err(Failure::usage(format!(
            "--init expects `auto` or three comma-separated values, got `{s}`"
        )));
    }
    Ok(InitParams::Given(params_from_flags(parts[0], parts[1], parts[2])?))
}

fn io_err(e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    }
}

pub fn cmd_fit(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let mode = match a.mode {
        ModeArg::Exact => Mode::Exact,
        ModeArg::Btc => Mode::Btc,
    };
    let bandwidth_policy = match (mode, a.k, a.k_policy) {
        (Mode::Exact, None, None) => BandwidthPolicy::Theoretical,
        (Mode::Exact, _, _) => {
            return Err(Failure::usage("--k and --k-policy only apply to --mode btc"));
        }
        (Mode::Btc, Some(k), None) => BandwidthPolicy::Fixed(k),
        (Mode::Btc, None, Some(KPolicyArg::Theoretical)) => BandwidthPolicy::Theoretical,
        (Mode::Btc, _, _) => {
            return Err(Failure::usage("--mode btc needs exactly one of --k or --k-policy"));
        }
    };
    if let Some(q) = a.delta_quantile {
        if !(0.0..=1.0).contains(&q) {
            return Err(Failure::usage("--delta-quantile must lie in [0, 1]"));
        }
    }
    let config = TrainConfig {
        init: parse_init(&a.init)?,
        mode,
        bandwidth_policy,
        max_iters: a.max_iters,
        delta_quantile: a.delta_quantile,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    echo_config(err, &serde_json::json!({ "train": &config, "seed": a.seed, "data": &a.data }));

    let data = read_dataset_csv(&a.data)?;
    let result = fit(&data, &config)?;
    if result.bandwidth_clamped {
        let _ = writeln!(err, "note: bandwidth clamped to n - 1 = {}", result.bandwidth_used);
    }
    let model = FittedModel::fit(result.params, data, mode, result.bandwidth_used)?;
    let mut file = ModelFile::new(&model, result.loss_trace.clone());
    file.config = Some(config);
    file.save(&a.out)?;

    let p = result.params;
    writeln!(out, "mode: {mode}").map_err(io_err)?;
    writeln!(out, "k: {}", result.bandwidth_used).map_err(io_err)?;
    writeln!(out, "final_loss: {}", result.final_loss()).map_err(io_err)?;
    writeln!(
        out,
        "params: signal_var={} lengthscale={} noise_var={}",
        p.signal_var, p.lengthscale, p.noise_var
    )
    .map_err(io_err)?;
    writeln!(out, "iterations: {}", result.loss_trace.len() - 1).map_err(io_err)?;
    writeln!(out, "converged: {}", result.converged).map_err(io_err)?;
    writeln!(out, "theoretical_k_at_final: {}", result.final_bandwidth_check).map_err(io_err)?;
    writeln!(out, "pd_violations: {}", result.pd_violations.len()).map_err(io_err)?;
    if mode == Mode::Btc && result.bandwidth_warning {
        writeln!(
            out,
            "warning: theoretical bandwidth at the fitted parameters ({}) exceeds the bandwidth used ({})",
            result.final_bandwidth_check, result.bandwidth_used
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Parses `start:stop:count` into `count` evenly spaced points.
pub fn parse_range(s: &str) -> Option<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let start: f64 = parts[0].trim().parse().ok()?;
    let stop: f64 = parts[1].trim().parse().ok()?;
    let count: usize = parts[2].trim().parse().ok()?;
    Some(match count {
        0 => Vec::new(),
        1 => vec![start],
        c => (0..c)
            .map(|i| start + (stop - start) * i as f64 / (c - 1) as f64)
            .collect(),
    })
}

pub fn cmd_predict(a: &PredictArgs, _out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    echo_config(
        err,
        &serde_json::json!({ "model": &a.model, "at": &a.at, "with_noise": a.with_noise }),
    );
    let file = ModelFile::load(&a.model).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("cannot read model: {e}"),
    })?;
    let model = file.into_model().map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("cannot rebuild model: {e}"),
    })?;
    let xs = match parse_range(&a.at) {
        Some(xs) => xs,
        None => read_inputs_csv(std::path::Path::new(&a.at))?,
    };
    let mut dist = model.predict(&xs)?;
    if a.with_noise {
        dist = dist.add_observation_noise(model.params().noise_var)?;
    }
    let mut w = csv::Writer::from_path(&a.out).map_err(Error::from)?;
    w.write_record(["x", "mean", "variance"]).map_err(Error::from)?;
    for (i, x) in xs.iter().enumerate() {
        w.write_record([x.to_string(), dist.mean[i].to_string(), dist.cov[(i, i)].to_string()])
            .map_err(Error::from)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let text = std::fs::read_to_string(&a.config).map_err(io_err)?;
    let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("invalid config: {e}"),
    })?;
    config.validate().map_err(|e| Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    })?;
    echo_config(err, &config);
    let reports = run_experiment(&config)?;
    if let Some(path) = &config.output {
        let echo = path.with_extension("config.json");
        serde_json::to_writer_pretty(std::fs::File::create(&echo).map_err(io_err)?, &config)
            .map_err(Error::from)?;
    }
    for r in &reports {
        let fmt = |v: Option<f64>| v.map_or("null".to_string(), |v| format!("{v:.6}"));
        writeln!(
            out,
            "{} k={} pd_valid={}/{} nmse={} nlpd={} fit_s={:.3}",
            r.method,
            r.k.map_or("-".to_string(), |k| k.to_string()),
            r.folds.iter().filter(|f| f.pd_valid).count(),
            r.folds.len(),
            fmt(r.mean_nmse()),
            fmt(r.mean_nlpd()),
            r.total_fit_s(),
        )
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn cmd_bandwidth(a: &BandwidthArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let params = params_from_flags(a.sigma2, a.lengthscale, a.noise)?;
    if !(a.delta > 0.0 && a.delta.is_finite()) {
        return Err(Failure::usage(format!("--delta must be positive, got {}", a.delta)));
    }
    let (k, branch) = theoretical_bandwidth_with_branch(&params, a.delta);
    let ratio = 2.0 * params.signal_var * params.lengthscale.powi(2)
        / (3.0 * params.noise_var * a.delta * a.delta);
    writeln!(out, "k: {k}").map_err(io_err)?;
    match branch {
        BandwidthBranch::Formula => writeln!(out, "branch: formula (log argument {ratio:.6} > 1)"),
        BandwidthBranch::Floor => writeln!(out, "branch: floor (log argument {ratio:.6} <= 1)"),
    }
    .map_err(io_err)?;
    if k > LARGE_BANDWIDTH {
        let _ = writeln!(
            err,
            "warning: bandwidth {k} is very large; the minimum spacing may be pessimistic for irregular inputs"
        );
    }
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs, _out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let params = params_from_flags(a.sigma2, a.lengthscale, a.noise)?;
    if !(a.delta > 0.0 && a.delta.is_finite()) {
        return Err(Failure::usage(format!("--delta must be positive, got {}", a.delta)));
    }
    if a.n < 2 {
        return Err(Failure::usage("--n must be at least 2"));
    }
    echo_config(
        err,
        &serde_json::json!({ "params": params, "delta": a.delta, "n": a.n, "seed": a.seed }),
    );
    let x = equispaced(a.n, a.delta);
    let y = sample_gp(&x, &params, a.seed)?;
    let data = Dataset1D::new(x, y)?;
    let f = std::fs::File::create(&a.out).map_err(io_err)?;
    write_dataset(std::io::BufWriter::new(f), &data)?;
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if a.n_list.is_empty() {
        return Err(Failure::usage("--n-list must not be empty"));
    }
    if a.k < 1 {
        return Err(Failure::usage("--k must be at least 1"));
    }
    let params = params_from_flags(a.sigma2, a.lengthscale, a.noise)?;
    let mut config = BenchConfig::new(a.n_list.clone(), a.k, params, a.seed);
    config.delta = a.delta;
    config.repeats = a.repeats;
    config.exact_max_n = a.exact_max_n;
    config.include_fit = !a.no_fit;
    echo_config(err, &config);
    let rows = bench_scaling(&config).map_err(|e| match e {
        Error::InvalidConfig(m) => Failure::usage(m),
        other => other.into(),
    })?;
    let f = std::fs::File::create(&a.out).map_err(io_err)?;
    write_bench_csv(f, &rows)?;
    for r in &rows {
        writeln!(out, "n={} loss_eval_s={:.6e}", r.n, r.loss_eval_s).map_err(io_err)?;
    }
    let theo = theoretical_bandwidth(&params, a.delta);
    if a.k < theo {
        let _ = writeln!(err, "note: k={} is below the theoretical bandwidth {theo} for these parameters", a.k);
    }
    Ok(())
}
