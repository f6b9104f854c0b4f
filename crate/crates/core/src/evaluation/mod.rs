//! Metrics, cross-validation and sub-cohort analysis.

pub mod cv;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod subcohort;
pub mod sweep;

pub use cv::{
    cross_validate, stratified_kfold, FoldResult, FoldRun, RunManifest, SampleRecord, SplitKind,
};
pub use metrics::{balanced_accuracy, f1_score, threshold_labels, Confusion};
pub use report::{build_report, EvaluationReport};
pub use stats::{mann_whitney_u, MannWhitney};
pub use subcohort::{factor_subcohort_table, median_split_gap, MedianSplit, SubcohortReport};
pub use sweep::{sweep, SweepCell, DEFAULT_C_GRID, DEFAULT_K_GRID};
