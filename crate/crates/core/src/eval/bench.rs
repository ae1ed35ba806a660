//! Runtime scaling of the banded loss against the exact loss.
//!
//! Measurements run strictly serially on the calling thread.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::synth::{equispaced, sample_btc_prior};
use crate::error::{Error, Result};
use crate::kernel::{Dataset1D, SeHyperParams};
use crate::model::{nll_btc, nll_exact};
use crate::train::{fit, BandwidthPolicy, TrainConfig};

/// Each timing sample repeats the operation until at least this much time has passed.
const MIN_SAMPLE: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n_list: Vec<usize>,
    pub k: usize,
    pub params: SeHyperParams,
    /// Input spacing of the synthetic series.
    pub delta: f64,
    pub seed: u64,
    /// Timing samples per measurement; the median is reported.
    pub repeats: usize,
    /// Also time the exact loss for `n` up to this size.
    pub exact_max_n: usize,
    /// Also time a full BTC fit.
    pub include_fit: bool,
}

impl BenchConfig {
    pub fn new(n_list: Vec<usize>, k: usize, params: SeHyperParams, seed: u64) -> Self {
        Self {
            n_list,
            k,
            params,
            delta: 0.2,
            seed,
            repeats: 5,
            exact_max_n: 0,
            include_fit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub loss_eval_s: f64,
    pub fit_s: Option<f64>,
    pub exact_loss_eval_s: Option<f64>,
}

pub const BENCH_COLUMNS: [&str; 5] = ["n", "k", "loss_eval_s", "fit_s", "exact_loss_eval_s"];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Median over `repeats` samples of the per-call time of `op`.
fn time_median(repeats: usize, mut op: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let mut calls = 0u32;
        loop {
            op()?;
            calls += 1;
            if start.elapsed() >= MIN_SAMPLE {
                break;
            }
        }
        samples.push(start.elapsed().as_secs_f64() / f64::from(calls));
    }
    Ok(median(samples))
}

fn synthetic(n: usize, config: &BenchConfig) -> Result<Dataset1D> {
    let x = equispaced(n, config.delta);
    let y = sample_btc_prior(&x, &config.params, config.delta, config.seed)?;
    Dataset1D::new(x, y)
}

pub fn bench_scaling(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.n_list.is_empty() {
        return Err(Error::InvalidConfig("empty n list".into()));
    }
    if config.k < 1 {
        return Err(Error::InvalidConfig("bandwidth must be at least 1".into()));
    }
    config.params.validate()?;
    let mut rows = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("n must be at least 2, got {n}")));
        }
        let data = synthetic(n, config)?;
        let p = config.params;
        let k = config.k.min(n - 1);
        let loss_eval_s = time_median(config.repeats, || nll_btc(&p, &data, k).map(|_| ()))?;
        let fit_s = if config.include_fit {
            let tc = TrainConfig {
                bandwidth_policy: BandwidthPolicy::Fixed(k),
                ..TrainConfig::default()
            };
            let mut samples = Vec::with_capacity(config.repeats);
            for _ in 0..config.repeats.max(1) {
                let start = Instant::now();
                let ok = fit(&data, &tc).is_ok();
                samples.push(if ok { start.elapsed().as_secs_f64() } else { f64::NAN });
            }
            let m = median(samples);
            m.is_finite().then_some(m)
        } else {
            None
        };
        let exact_loss_eval_s = if n <= config.exact_max_n {
            Some(time_median(config.repeats.min(3), || nll_exact(&p, &data).map(|_| ()))?)
        } else {
            None
        };
        rows.push(BenchRow {
            n,
            k,
            loss_eval_s,
            fit_s,
            exact_loss_eval_s,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(writer: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(BENCH_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
