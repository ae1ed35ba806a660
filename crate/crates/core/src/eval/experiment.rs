//! Cross-validated comparison of exact and banded GPs over a bandwidth sweep.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::kfold_split;
use super::metrics::{nlpd, nlpd_mean, nmse};
use super::synth::{equispaced, sample_gp};
use crate::error::{Error, Result};
use crate::io::read_dataset_csv;
use crate::kernel::{Dataset1D, SeHyperParams};
use crate::model::{FittedModel, Mode};
use crate::train::{fit, BandwidthPolicy, InitParams, PdFailurePolicy, TrainConfig};

/// Environment variable capping worker threads for experiments.
pub const THREADS_ENV: &str = "BTCGP_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Csv(PathBuf),
    /// Equispaced inputs `0, delta, 2 delta, ...` with a GP draw seeded by the
    /// experiment seed.
    Synthetic {
        params: SeHyperParams,
        delta: f64,
        n: usize,
    },
}

impl DatasetSource {
    pub fn load(&self, seed: u64) -> Result<Dataset1D> {
        match self {
            DatasetSource::Csv(path) => read_dataset_csv(path),
            DatasetSource::Synthetic { params, delta, n } => {
                if *n < 2 || !(*delta > 0.0) {
                    return Err(Error::InvalidConfig(
                        "synthetic data needs n >= 2 and delta > 0".into(),
                    ));
                }
                let x = equispaced(*n, *delta);
                let y = sample_gp(&x, params, seed)?;
                Dataset1D::new(x, y)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Exact,
    Btc { k: Vec<usize> },
    /// BTC with the closed-form bandwidth at the initial parameters of each fold.
    BtcTheoretical,
}

fn default_folds() -> usize {
    5
}

fn default_max_iters() -> usize {
    TrainConfig::default().max_iters
}

fn default_grad_tol() -> f64 {
    TrainConfig::default().grad_tol
}

fn default_policy() -> PdFailurePolicy {
    PdFailurePolicy::BacktrackStep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub seed: u64,
    /// Report path; the JSON goes here and a CSV with the same stem next to it.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub init: Option<SeHyperParams>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_policy")]
    pub pd_failure_policy: PdFailurePolicy,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource, methods: Vec<MethodSpec>, seed: u64) -> Self {
        Self {
            dataset,
            methods,
            folds: default_folds(),
            seed,
            output: None,
            init: None,
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            pd_failure_policy: default_policy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig("folds must be at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods given".into()));
        }
        for m in &self.methods {
            if let MethodSpec::Btc { k } = m {
                if k.is_empty() || k.contains(&0) {
                    return Err(Error::InvalidConfig(
                        "btc bandwidth lists must be non-empty with entries >= 1".into(),
                    ));
                }
            }
        }
        if let Some(p) = &self.init {
            p.validate()?;
        }
        Ok(())
    }

    /// Seed for the fold shuffle, kept distinct from the data-sampling seed.
    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
    }
}

/// Outcome of one method on one fold. Metrics are `None` when the banded
/// covariance lost positive definiteness or the fold failed otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub k_used: Option<usize>,
    pub nmse: Option<f64>,
    pub nlpd: Option<f64>,
    pub nlpd_mean: Option<f64>,
    pub fit_s: f64,
    pub predict_s: f64,
    pub pd_valid: bool,
    pub pd_violations: usize,
    pub params: Option<SeHyperParams>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Requested bandwidth; `None` for the exact GP and the theoretical policy.
    pub k: Option<usize>,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

impl EvalReport {
    pub fn all_pd_valid(&self) -> bool {
        self.folds.iter().all(|f| f.pd_valid)
    }

    /// Mean NMSE over folds that produced metrics.
    pub fn mean_nmse(&self) -> Option<f64> {
        mean_of(self.folds.iter().map(|f| f.nmse))
    }

    pub fn mean_nlpd(&self) -> Option<f64> {
        mean_of(self.folds.iter().map(|f| f.nlpd))
    }

    pub fn mean_nlpd_mean(&self) -> Option<f64> {
        mean_of(self.folds.iter().map(|f| f.nlpd_mean))
    }

    pub fn total_fit_s(&self) -> f64 {
        self.folds.iter().map(|f| f.fit_s).sum()
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.folds
            .iter()
            .map(|f| ReportRow {
                method: self.method.clone(),
                k: self.k.or(f.k_used),
                fold: f.fold,
                nmse: f.nmse,
                nlpd: f.nlpd,
                nlpd_mean: f.nlpd_mean,
                fit_s: f.fit_s,
                predict_s: f.predict_s,
                pd_valid: f.pd_valid,
                seed: self.seed,
            })
            .collect()
    }
}

/// One line of the flat JSON/CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub k: Option<usize>,
    pub fold: usize,
    pub nmse: Option<f64>,
    pub nlpd: Option<f64>,
    pub nlpd_mean: Option<f64>,
    pub fit_s: f64,
    pub predict_s: f64,
    pub pd_valid: bool,
    pub seed: u64,
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "method", "k", "fold", "nmse", "nlpd", "nlpd_mean", "fit_s", "predict_s", "pd_valid", "seed",
];

#[derive(Debug, Clone, Copy)]
struct Job {
    method: usize,
    k: Option<usize>,
    fold: usize,
}

fn run_fold(
    data: &Dataset1D,
    train_idx: &[usize],
    test_idx: &[usize],
    mode: Mode,
    policy: BandwidthPolicy,
    config: &ExperimentConfig,
    fold: usize,
) -> FoldResult {
    let mut out = FoldResult {
        fold,
        k_used: None,
        nmse: None,
        nlpd: None,
        nlpd_mean: None,
        fit_s: 0.0,
        predict_s: 0.0,
        pd_valid: true,
        pd_violations: 0,
        params: None,
        final_loss: None,
        error: None,
    };
    let train = match data.subset(train_idx) {
        Ok(t) => t,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let x_test: Vec<f64> = test_idx.iter().map(|&i| data.x()[i]).collect();
    let y_test: Vec<f64> = test_idx.iter().map(|&i| data.y()[i]).collect();

    let tc = TrainConfig {
        init: config.init.map_or(InitParams::Auto, InitParams::Given),
        mode,
        bandwidth_policy: policy,
        max_iters: config.max_iters,
        grad_tol: config.grad_tol,
        pd_failure_policy: config.pd_failure_policy,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let result = fit(&train, &tc);
    out.fit_s = t0.elapsed().as_secs_f64();
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            if matches!(e, Error::PdFailure { .. } | Error::NotPositiveDefinite { .. }) {
                out.pd_valid = false;
            }
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.k_used = Some(result.bandwidth_used);
    out.pd_violations = result.pd_violations.len();
    out.params = Some(result.params);
    out.final_loss = Some(result.final_loss());

    let t1 = Instant::now();
    let predicted = FittedModel::fit(result.params, train, mode, result.bandwidth_used)
        .and_then(|m| m.predict(&x_test));
    let dist = match predicted {
        Ok(d) => d,
        Err(e) => {
            out.pd_valid = !matches!(e, Error::NotPositiveDefinite { .. });
            out.predict_s = t1.elapsed().as_secs_f64();
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.predict_s = t1.elapsed().as_secs_f64();
    out.nmse = nmse(&y_test, dist.mean.as_slice()).ok();
    match dist.add_observation_noise(result.params.noise_var) {
        Ok(noisy) => match nlpd(&noisy, &y_test) {
            Ok(v) => {
                out.nlpd = Some(v);
                out.nlpd_mean = nlpd_mean(&noisy, &y_test).ok();
            }
            Err(e) => out.error = Some(format!("nlpd: {e}")),
        },
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Worker count from [`THREADS_ENV`], defaulting to the machine's parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every method on every fold of an already loaded dataset.
pub fn run_on_dataset(config: &ExperimentConfig, data: &Dataset1D) -> Result<Vec<EvalReport>> {
    config.validate()?;
    let splits = kfold_split(data.len(), config.folds, config.split_seed())?;

    let mut jobs = Vec::new();
    let mut reports = Vec::new();
    for (mi, m) in config.methods.iter().enumerate() {
        let ks: Vec<Option<usize>> = match m {
            MethodSpec::Btc { k } => k.iter().copied().map(Some).collect(),
            _ => vec![None],
        };
        for k in ks {
            reports.push((mi, k));
            for fold in 0..config.folds {
                jobs.push(Job { method: mi, k, fold });
            }
        }
    }

    let run = |job: &Job| {
        let (mode, policy) = match (&config.methods[job.method], job.k) {
            (MethodSpec::Exact, _) => (Mode::Exact, BandwidthPolicy::Theoretical),
            (MethodSpec::Btc { .. }, Some(k)) => (Mode::Btc, BandwidthPolicy::Fixed(k)),
            _ => (Mode::Btc, BandwidthPolicy::Theoretical),
        };
        let split = &splits[job.fold];
        run_fold(data, &split.train, &split.test, mode, policy, config, job.fold)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<FoldResult> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut it = results.into_iter();
    Ok(reports
        .into_iter()
        .map(|(mi, k)| {
            let method = match &config.methods[mi] {
                MethodSpec::Exact => "exact",
                MethodSpec::Btc { .. } => "btc",
                MethodSpec::BtcTheoretical => "btc_theoretical",
            };
            EvalReport {
                method: method.to_string(),
                k,
                seed: config.seed,
                folds: it.by_ref().take(config.folds).collect(),
            }
        })
        .collect())
}

/// Loads the configured dataset, runs all methods and, when an output path is
/// configured, writes the JSON and CSV reports.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    config.validate()?;
    let data = config.dataset.load(config.seed)?;
    let reports = run_on_dataset(config, &data)?;
    if let Some(path) = &config.output {
        write_reports(path, &reports)?;
    }
    Ok(reports)
}

pub fn csv_path_for(json_path: &Path) -> PathBuf {
    json_path.with_extension("csv")
}

pub fn write_reports(json_path: &Path, reports: &[EvalReport]) -> Result<()> {
    let rows: Vec<ReportRow> = reports.iter().flat_map(EvalReport::rows).collect();
    serde_json::to_writer_pretty(std::fs::File::create(json_path)?, &rows)?;
    let mut w = csv::Writer::from_path(csv_path_for(json_path))?;
    if rows.is_empty() {
        w.write_record(REPORT_COLUMNS)?;
    }
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
