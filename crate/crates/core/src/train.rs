//! Hyperparameter training by minimising the exact or banded negative log
//! likelihood over `(ln sigma^2, ln l, ln sigma_n^2)`.
//!
//! Gradients are central finite differences in log space and the search
//! direction comes from a BFGS inverse-Hessian estimate with a backtracking
//! Armijo line search. The bandwidth is chosen once, before the first
//! iteration, and stays fixed for the whole run.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    clamp_bandwidth, quantile_spacing, theoretical_bandwidth, Dataset1D, SeHyperParams,
};
use crate::model::{nll_btc, Mode};

/// Largest change of any log-parameter in a single step.
const MAX_LOG_STEP: f64 = 2.0;
const MAX_HALVINGS: usize = 30;
const ARMIJO_C1: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitParams {
    Auto,
    Given(SeHyperParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthPolicy {
    /// Closed-form bandwidth evaluated at the initial hyperparameters.
    Theoretical,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdFailurePolicy {
    Abort,
    BacktrackStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub init: InitParams,
    pub mode: Mode,
    pub bandwidth_policy: BandwidthPolicy,
    /// Budget of loss-trace entries, the initial point included.
    pub max_iters: usize,
    /// Stop once the log-space gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Central-difference step in log space.
    pub fd_step: f64,
    pub pd_failure_policy: PdFailurePolicy,
    /// Use this quantile of the adjacent gaps instead of the minimum gap when
    /// computing the theoretical bandwidth. Off by default.
    pub delta_quantile: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init: InitParams::Auto,
            mode: Mode::Btc,
            bandwidth_policy: BandwidthPolicy::Theoretical,
            max_iters: 200,
            grad_tol: 1e-5,
            fd_step: 1e-4,
            pd_failure_policy: PdFailurePolicy::BacktrackStep,
            delta_quantile: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) || !(self.fd_step > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if let InitParams::Given(p) = &self.init {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdViolation {
    pub iteration: usize,
    pub pivot_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub params: SeHyperParams,
    pub init_params: SeHyperParams,
    pub bandwidth_used: usize,
    /// The requested bandwidth exceeded `n - 1` and was clamped.
    pub bandwidth_clamped: bool,
    pub loss_trace: Vec<(usize, f64)>,
    pub pd_violations: Vec<PdViolation>,
    pub wall_time_s: f64,
    pub converged: bool,
    /// Closed-form bandwidth at the final parameters.
    pub final_bandwidth_check: usize,
    /// `final_bandwidth_check > bandwidth_used`.
    pub bandwidth_warning: bool,
}

impl TrainResult {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().map(|&(_, l)| l).unwrap_or(f64::NAN)
    }
}

fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Conservative starting point: short lengthscale, generous noise.
///
/// `sigma^2 = var(y)`, `l = 5 delta`, `sigma_n^2 = var(y) / 2`.
pub fn init_hyperparams(data: &Dataset1D) -> Result<SeHyperParams> {
    if data.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: data.len(),
        });
    }
    let var = sample_variance(data.y());
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    SeHyperParams::new(var, 5.0 * data.delta(), 0.5 * var)
}

/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` in each coordinate.
pub fn loss_gradient_fd<F>(mut loss: F, log_params: &[f64; 3], h: f64) -> Result<[f64; 3]>
where
    F: FnMut(&[f64; 3]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParams(format!("step must be positive, got {h}")));
    }
    let mut g = [0.0; 3];
    for i in 0..3 {
        let mut plus = *log_params;
        let mut minus = *log_params;
        plus[i] += h;
        minus[i] -= h;
        let fp = loss(&plus)?;
        let fm = loss(&minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Resolves the bandwidth a configuration will train with, before clamping.
pub fn requested_bandwidth(data: &Dataset1D, config: &TrainConfig, init: &SeHyperParams) -> Result<usize> {
    Ok(match (config.mode, config.bandwidth_policy) {
        (Mode::Exact, _) => data.len() - 1,
        (Mode::Btc, BandwidthPolicy::Fixed(k)) => k,
        (Mode::Btc, BandwidthPolicy::Theoretical) => {
            let delta = match config.delta_quantile {
                Some(q) => quantile_spacing(data.x(), q)?,
                None => data.delta(),
            };
            theoretical_bandwidth(init, delta)
        }
    })
}

struct Objective<'a> {
    data: &'a Dataset1D,
    k: usize,
    policy: PdFailurePolicy,
    violations: Vec<PdViolation>,
}

enum Probe {
    Value(f64),
    NotPd,
}

impl Objective<'_> {
    fn eval(&mut self, log_p: &[f64; 3], iteration: usize) -> Result<Probe> {
        let params = match SeHyperParams::from_log(log_p) {
            Ok(p) => p,
            Err(_) => return Ok(Probe::Value(f64::INFINITY)),
        };
        match nll_btc(&params, self.data, self.k) {
            Ok(v) => Ok(Probe::Value(v)),
            Err(Error::NotPositiveDefinite { pivot_index }) => {
                self.violations.push(PdViolation {
                    iteration,
                    pivot_index,
                });
                if self.policy == PdFailurePolicy::Abort {
                    return Err(Error::PdFailure {
                        iteration,
                        pivot_index,
                    });
                }
                Ok(Probe::NotPd)
            }
            Err(e) => Err(e),
        }
    }

    /// Central differences, falling back to a one-sided difference when a
    /// probe leaves the positive-definite region.
    fn gradient(&mut self, x: &[f64; 3], fx: f64, h: f64, iteration: usize) -> Result<[f64; 3]> {
        let mut g = [0.0; 3];
        for i in 0..3 {
            let mut plus = *x;
            let mut minus = *x;
            plus[i] += h;
            minus[i] -= h;
            let fp = self.eval(&plus, iteration)?;
            let fm = self.eval(&minus, iteration)?;
            g[i] = match (fp, fm) {
                (Probe::Value(a), Probe::Value(b)) => (a - b) / (2.0 * h),
                (Probe::Value(a), Probe::NotPd) => (a - fx) / h,
                (Probe::NotPd, Probe::Value(b)) => (fx - b) / h,
                (Probe::NotPd, Probe::NotPd) => {
                    let pivot_index = self.violations.last().map_or(0, |v| v.pivot_index);
                    return Err(Error::PdFailure {
                        iteration,
                        pivot_index,
                    });
                }
            };
            if !g[i].is_finite() {
                return Err(Error::NonFiniteLoss);
            }
        }
        Ok(g)
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

fn identity() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// BFGS update of the inverse Hessian estimate.
fn bfgs_update(h: &mut [[f64; 3]; 3], s: &[f64; 3], y: &[f64; 3]) {
    let sy = dot(s, y);
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Trains hyperparameters on `data` according to `config`.
pub fn fit(data: &Dataset1D, config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    let start = Instant::now();
    let init = match config.init {
        InitParams::Auto => init_hyperparams(data)?,
        InitParams::Given(p) => p,
    };
    let requested = requested_bandwidth(data, config, &init)?;
    let (k, clamped) = clamp_bandwidth(requested, data.len());

    let mut obj = Objective {
        data,
        k,
        policy: config.pd_failure_policy,
        violations: Vec::new(),
    };

    let mut x = init.to_log();
    let mut fx = match obj.eval(&x, 0)? {
        Probe::Value(v) if v.is_finite() => v,
        Probe::Value(_) => return Err(Error::NonFiniteLoss),
        Probe::NotPd => {
            let pivot_index = obj.violations.last().map_or(0, |v| v.pivot_index);
            return Err(Error::PdFailure {
                iteration: 0,
                pivot_index,
            });
        }
    };
    let mut trace = vec![(0usize, fx)];
    let mut converged = false;
    let mut hinv = identity();
    let mut first_step = true;

    if config.max_iters > 1 {
        let mut g = obj.gradient(&x, fx, config.fd_step, 0)?;
        for iteration in 1..config.max_iters {
            if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < config.grad_tol {
                converged = true;
                break;
            }
            let mut d = mat_vec(&hinv, &g).map(|v| -v);
            if !(dot(&d, &g) < 0.0) {
                hinv = identity();
                d = g.map(|v| -v);
            }
            let longest = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if longest > MAX_LOG_STEP {
                d = d.map(|v| v * MAX_LOG_STEP / longest);
            }
            let slope = dot(&d, &g);

            let mut t = 1.0;
            let mut accepted = None;
            let mut all_not_pd = true;
            for _ in 0..=MAX_HALVINGS {
                let trial = [x[0] + t * d[0], x[1] + t * d[1], x[2] + t * d[2]];
                match obj.eval(&trial, iteration)? {
                    Probe::Value(ft) => {
                        all_not_pd = false;
                        if ft.is_finite() && ft < fx && ft <= fx + ARMIJO_C1 * t * slope {
                            accepted = Some((trial, ft));
                            break;
                        }
                    }
                    Probe::NotPd => {}
                }
                t *= 0.5;
            }
            let Some((x_new, f_new)) = accepted else {
                if all_not_pd {
                    let pivot_index = obj.violations.last().map_or(0, |v| v.pivot_index);
                    return Err(Error::PdFailure {
                        iteration,
                        pivot_index,
                    });
                }
                // No further decrease along this direction.
                break;
            };

            let g_new = obj.gradient(&x_new, f_new, config.fd_step, iteration)?;
            let s = [x_new[0] - x[0], x_new[1] - x[1], x_new[2] - x[2]];
            let y = [g_new[0] - g[0], g_new[1] - g[1], g_new[2] - g[2]];
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if first_step {
                    let scale = sy / dot(&y, &y);
                    hinv = identity().map(|row| row.map(|v| v * scale));
                    first_step = false;
                }
                bfgs_update(&mut hinv, &s, &y);
            }
            x = x_new;
            fx = f_new;
            g = g_new;
            trace.push((iteration, fx));
        }
    }

    // Without an accepted step, hand back the initial point exactly rather
    // than its exp(ln(.)) round trip.
    let params = if trace.len() == 1 { init } else { SeHyperParams::from_log(&x)? };
    let final_bandwidth_check = theoretical_bandwidth(&params, data.delta());
    Ok(TrainResult {
        params,
        init_params: init,
        bandwidth_used: k,
        bandwidth_clamped: clamped,
        loss_trace: trace,
        pd_violations: obj.violations,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged,
        final_bandwidth_check,
        bandwidth_warning: final_bandwidth_check > k,
    })
}
