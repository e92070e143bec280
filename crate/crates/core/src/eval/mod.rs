//! Accuracy, head/tail split accuracy and the explainability diagnostics
//! (average importance, confidence improvement, consensus score).
//!
//! Every metric reads the plain VQA head only.

mod accuracy;
mod diagnostics;
mod report;

pub use accuracy::{
    accuracy, head_tail_from, head_tail_metrics, predictions, score_predictions, tail_flags, train_answer_frequencies,
    Accuracy, HeadTail,
};
pub use diagnostics::{
    ai_score, ai_scores, all_correct_fraction, ci_from_outcomes, ci_score, consensus, consensus_counts, cs_k, top_k_importance,
    without_critical_word,
};
pub use report::{evaluate, EvalConfig, MetricsReport, AI_KS, CS_KS, METRICS_SCHEMA_VERSION};
