//! Evaluation: metrics, cross-validation splits, synthetic GP data, the
//! bandwidth-sweep experiment runner and runtime scaling benchmarks.

pub mod bench;
pub mod cv;
pub mod experiment;
pub mod metrics;
pub mod synth;

pub use bench::{bench_scaling, BenchConfig, BenchRow};
pub use cv::{kfold_split, Fold};
pub use experiment::{
    run_experiment, run_on_dataset, DatasetSource, EvalReport, ExperimentConfig, FoldResult,
    MethodSpec, ReportRow,
};
pub use metrics::{nlpd, nlpd_mean, nmse};
pub use synth::{equispaced, sample_btc_prior, sample_gp};
