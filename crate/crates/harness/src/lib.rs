//! Desk-scale experiments around the SCSA modules: a synthetic dataset, a
//! small residual classifier, its trainer, the gradient-check suite and the
//! forward-pass benchmark.

pub mod backbone;
pub mod bench;
pub mod dataset;
pub mod suite;
pub mod train;

pub use backbone::{Attention, Backbone, BackboneSpec};
pub use bench::{bench, parse_sweep, sweep_points, to_csv, BenchOptions, BenchPoint, BenchRow};
pub use dataset::{generate_dataset, Dataset, DatasetSpec, Split};
pub use suite::{check_scsa_config, run_gradcheck_suite, CheckResult, SuiteOptions, SuiteReport};
pub use train::{evaluate, train, train_with, EpochRecord, Sgd, TrainOutcome, TrainSpec};
