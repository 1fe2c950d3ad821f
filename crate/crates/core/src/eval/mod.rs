//! Metrics, threshold calibration, evaluation protocols and report rendering.

mod calibrate;
mod metrics;
mod protocol;
mod report;

pub use calibrate::{calibrate_threshold, candidate_thresholds, split_validation, Calibration, ValidationSplit};
pub use metrics::{
    accuracy, average_ranks, cohens_kappa, observed_agreement, rater_agreement, roc_auc, roc_curve,
    RaterAgreement, RocCurve,
};
pub use protocol::{
    check_generated_disjoint, eval_generated, eval_generated_calibrated, generated_scores, leave_one_topic_out,
    leave_one_topic_out_with, summarize_calibrated, summarize_generated, LotoOptions, RunLabel, DEFAULT_THRESHOLD,
    VALIDATION_FRACTION,
};
pub use report::{
    render_calibrated_table, render_generated_table, render_reports, render_topic_table, EvalCell, EvalReport,
    InputChecksum, Protocol, ScorerKind, SplitAudit,
};
