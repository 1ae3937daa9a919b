//! Experiment harness: synthetic generators, the baseline roster, metrics
//! and Monte-Carlo subsampling.

pub mod experiment;
pub mod generators;
pub mod methods;
pub mod metrics;
pub mod rng;
pub mod temporal;

pub use experiment::{
    run_subsample_experiment, run_toy_experiment, ExperimentConfig, ExperimentReport, ReportRow,
};
pub use generators::{
    gen_gp_grid, gen_transfer_scene, GpGridSampler, GpGridSpec, TransferSceneSpec,
};
pub use methods::Method;
pub use metrics::{mae, rmse};
pub use temporal::{month_splits, run_temporal_experiment, MonthlyArea};
