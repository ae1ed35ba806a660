use btcgp::eval::{equispaced, sample_gp};
use btcgp::kernel::theoretical_bandwidth;
use btcgp::model::nll_exact;
use btcgp::train::{fit, init_hyperparams, BandwidthPolicy, InitParams, TrainConfig};
use btcgp::{Dataset1D, Mode, SeHyperParams};

fn case_a(seed: u64) -> (SeHyperParams, Dataset1D) {
    let truth = SeHyperParams::new(5.0, 1.0, 0.10).unwrap();
    let x = equispaced(2000, 0.2);
    let y = sample_gp(&x, &truth, seed).unwrap();
    (truth, Dataset1D::new(x, y).unwrap())
}

/// Closed-form bandwidth written out independently of the library.
fn bandwidth_oracle(s2: f64, l: f64, n2: f64, d: f64) -> usize {
    let ratio = 2.0 * s2 * l * l / (3.0 * n2 * d * d);
    if ratio <= 1.0 {
        return 2;
    }
    ((1.5 + 2.0 * l * l / (d * d) * ratio.ln()).sqrt().ceil() as usize).max(2)
}

#[test]
fn auto_init_bandwidth_on_case_a() {
    let (truth, data) = case_a(11);
    let init = init_hyperparams(&data).unwrap();
    let at_init = theoretical_bandwidth(&init, data.delta());
    let at_truth = theoretical_bandwidth(&truth, data.delta());
    assert_eq!(at_truth, 19);
    assert_eq!(
        at_init,
        bandwidth_oracle(init.signal_var, init.lengthscale, init.noise_var, data.delta())
    );
    // The starting noise is var(y)/2, far above the true 0.1, so the closed
    // form at the initial point is smaller than at the truth.
    assert!(at_init < at_truth, "{at_init} vs {at_truth}");
}

#[test]
fn btc_final_loss_tracks_exact() {
    let (truth, data) = case_a(12);
    let btc = fit(
        &data,
        &TrainConfig {
            bandwidth_policy: BandwidthPolicy::Fixed(theoretical_bandwidth(&truth, data.delta())),
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let exact = fit(
        &data,
        &TrainConfig {
            mode: Mode::Exact,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let (a, b) = (btc.final_loss(), exact.final_loss());
    assert!((a - b).abs() <= 0.01 * b.abs(), "btc {a} exact {b}");
    // The exact loss at the BTC optimum is close to the exact optimum too.
    let cross = nll_exact(&btc.params, &data).unwrap();
    assert!(cross >= b - 1e-6 * b.abs());
    assert!((cross - b).abs() <= 0.01 * b.abs());
}

#[test]
fn given_init_with_theoretical_policy_uses_that_point() {
    let (truth, data) = case_a(13);
    let r = fit(
        &data,
        &TrainConfig {
            init: InitParams::Given(truth),
            max_iters: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(r.bandwidth_used, 19);
    assert_eq!(r.params, truth);
    assert!(!r.converged);
}
