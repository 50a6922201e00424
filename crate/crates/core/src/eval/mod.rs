//! The evaluation protocol: IoU/Dice with multi-threshold averaging, signed
//! CNR, rank-based AUROC, percentile-bootstrap confidence intervals, and the
//! per-pathology report assembly.

mod bootstrap;
mod metrics;
mod protocol;
mod report;

pub use bootstrap::{bootstrap_ci, bootstrap_replicate_means, percentile};
pub use metrics::{auroc, cnr, dice, iou, multi_threshold_mean};
pub use protocol::{
    classification_report_from_scores, evaluate_classification, evaluate_localization,
    evaluate_localization_with, optimal_threshold, LocalizationProtocol, PromptMode,
    DEFAULT_BOOTSTRAP_REPS, DEFAULT_THRESHOLDS,
};
pub use report::{MetricReport, MetricRow};
