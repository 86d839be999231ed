//! Score predicted dialogue states against gold annotations.
//!
//! Joint goal accuracy counts a turn as correct only when every schema
//! slot matches; average goal accuracy scores just the active slots (newly
//! set or changed at that turn). An error taxonomy splits every mismatch into
//! missed / hallucinated / dontcare-confusion / wrong-value, and a
//! sensitivity helper summarizes accuracy spread across prompt variants.

mod normalize;
mod predset;
mod report;

pub use normalize::{normalize_value, values_match, MatchPolicy};
pub use predset::{PredictionSet, PredictionRecord};
pub use report::{
    active_slots, aga, error_report, evaluate, jga, per_turn_jga, prompt_sensitivity, AgaMode,
    ErrorCategory, ErrorTaxonomy, EvalReport, MetricsError, PerTurnEntry, SensitivitySummary,
};
