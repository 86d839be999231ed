use std::collections::BTreeMap;

use ldst_corpus::{Dialogue, Schema, SlotValue};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{values_match, MatchPolicy};
use crate::predset::PredictionSet;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("turn index {turn} out of range for dialogue `{dialogue}` with {n_turns} turns")]
    TurnOutOfRange {
        dialogue: String,
        turn: usize,
        n_turns: usize,
    },

    #[error("no active slot instances anywhere in the corpus; active-slot accuracy is undefined")]
    NoActiveSlots,

    #[error("prompt sensitivity needs at least 2 reports, got {0}")]
    TooFewReports(usize),
}

/// How active-slot accuracy aggregates.
///
/// `Micro` averages over all active slot instances; `PerTurnMacro` averages
/// per-turn accuracies over turns that have at least one active slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgaMode {
    #[default]
    Micro,
    PerTurnMacro,
}

/// Mutually exclusive mismatch classes covering every wrong prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    /// Gold has a literal value, prediction says NONE.
    Missed,
    /// Gold is NONE, prediction invents a literal value.
    Hallucinated,
    /// One side is NONE, the other DONTCARE.
    DontcareConfusion,
    /// Both sides are set but disagree.
    WrongValue,
}

impl ErrorCategory {
    /// Classify a mismatching (pred, gold) pair. Callers must only pass
    /// pairs that already failed [`values_match`].
    pub fn classify(pred: &SlotValue, gold: &SlotValue) -> ErrorCategory {
        use SlotValue::*;
        match (pred, gold) {
            (None, DontCare) | (DontCare, None) => ErrorCategory::DontcareConfusion,
            (None, Literal(_)) => ErrorCategory::Missed,
            (Literal(_), None) => ErrorCategory::Hallucinated,
            _ => ErrorCategory::WrongValue,
        }
    }
}

/// Counts per error category.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTaxonomy {
    pub missed: usize,
    pub hallucinated: usize,
    pub dontcare_confusion: usize,
    pub wrong_value: usize,
}

impl ErrorTaxonomy {
    pub fn total(&self) -> usize {
        self.missed + self.hallucinated + self.dontcare_confusion + self.wrong_value
    }

    fn bump(&mut self, category: ErrorCategory) {
        match category {
            ErrorCategory::Missed => self.missed += 1,
            ErrorCategory::Hallucinated => self.hallucinated += 1,
            ErrorCategory::DontcareConfusion => self.dontcare_confusion += 1,
            ErrorCategory::WrongValue => self.wrong_value += 1,
        }
    }
}

/// JGA at one turn position across the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerTurnEntry {
    pub turn: usize,
    pub jga: f64,
    pub n: usize,
}

/// The full scoring output for one prediction set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: String,
    pub policy: MatchPolicy,
    pub aga_mode: AgaMode,
    pub jga: f64,
    pub aga: f64,
    pub per_turn_jga: Vec<PerTurnEntry>,
    pub n_turns: usize,
    pub n_active_slot_instances: usize,
    /// Lookups that fell through to the NONE default; nonzero values
    /// usually mean an incomplete prediction file.
    pub n_missing_predictions: usize,
    pub error_taxonomy: ErrorTaxonomy,
    /// (slot id, error count), descending by count, ties by slot id.
    pub per_slot_errors: Vec<(String, usize)>,
}

fn predicted<'p>(
    preds: &'p PredictionSet,
    dialogue: &Dialogue,
    turn: usize,
    slot_id: &str,
    missing: &mut usize,
) -> &'p SlotValue {
    match preds.get(&dialogue.id, turn, slot_id) {
        Some(value) => value,
        None => {
            *missing += 1;
            &SlotValue::None
        }
    }
}

/// Joint goal accuracy: the fraction of turns whose entire predicted state
/// matches gold across all schema slots.
pub fn jga(preds: &PredictionSet, gold: &[Dialogue], schema: &Schema, policy: MatchPolicy) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut missing = 0usize;
    for dialogue in gold {
        for turn in 1..=dialogue.n_turns() {
            total += 1;
            let state = &dialogue.gold_states[turn - 1];
            let all_match = schema.slots().iter().all(|slot| {
                let slot_id = slot.slot_id();
                let pred = predicted(preds, dialogue, turn, &slot_id, &mut missing);
                values_match(pred, state.get(&slot_id), policy)
            });
            if all_match {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return 0.0;
    }
    correct as f64 / total as f64
}

/// Slots newly set or changed at 1-based turn `t` (turn 0 is all-NONE).
/// A slot inherited unchanged from the previous turn is not active.
pub fn active_slots(gold: &Dialogue, t: usize) -> Result<Vec<String>, MetricsError> {
    if t == 0 || t > gold.n_turns() {
        return Err(MetricsError::TurnOutOfRange {
            dialogue: gold.id.clone(),
            turn: t,
            n_turns: gold.n_turns(),
        });
    }
    let current = &gold.gold_states[t - 1];
    let empty = ldst_corpus::DialogueState::new();
    let previous = if t == 1 { &empty } else { &gold.gold_states[t - 2] };
    Ok(current
        .set_slots()
        .filter(|(slot_id, value)| previous.get(slot_id) != *value && value.is_set())
        .map(|(slot_id, _)| slot_id.to_string())
        .collect())
}

/// Average goal accuracy over active slots.
pub fn aga(
    preds: &PredictionSet,
    gold: &[Dialogue],
    policy: MatchPolicy,
    mode: AgaMode,
) -> Result<f64, MetricsError> {
    let mut instance_correct = 0usize;
    let mut instance_total = 0usize;
    let mut turn_accuracies: Vec<f64> = Vec::new();
    let mut missing = 0usize;
    for dialogue in gold {
        for turn in 1..=dialogue.n_turns() {
            let active = active_slots(dialogue, turn).expect("turn index in range");
            if active.is_empty() {
                continue;
            }
            let state = &dialogue.gold_states[turn - 1];
            let correct = active
                .iter()
                .filter(|slot_id| {
                    let pred = predicted(preds, dialogue, turn, slot_id, &mut missing);
                    values_match(pred, state.get(slot_id), policy)
                })
                .count();
            instance_correct += correct;
            instance_total += active.len();
            turn_accuracies.push(correct as f64 / active.len() as f64);
        }
    }
    if instance_total == 0 {
        return Err(MetricsError::NoActiveSlots);
    }
    Ok(match mode {
        AgaMode::Micro => instance_correct as f64 / instance_total as f64,
        AgaMode::PerTurnMacro => {
            turn_accuracies.iter().sum::<f64>() / turn_accuracies.len() as f64
        }
    })
}

/// JGA grouped by 1-based turn position across dialogues.
pub fn per_turn_jga(
    preds: &PredictionSet,
    gold: &[Dialogue],
    schema: &Schema,
    policy: MatchPolicy,
) -> Vec<PerTurnEntry> {
    let mut correct: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total: BTreeMap<usize, usize> = BTreeMap::new();
    let mut missing = 0usize;
    for dialogue in gold {
        for turn in 1..=dialogue.n_turns() {
            *total.entry(turn).or_default() += 1;
            let state = &dialogue.gold_states[turn - 1];
            let all_match = schema.slots().iter().all(|slot| {
                let slot_id = slot.slot_id();
                let pred = predicted(preds, dialogue, turn, &slot_id, &mut missing);
                values_match(pred, state.get(&slot_id), policy)
            });
            if all_match {
                *correct.entry(turn).or_default() += 1;
            }
        }
    }
    total
        .into_iter()
        .map(|(turn, n)| PerTurnEntry {
            turn,
            jga: correct.get(&turn).copied().unwrap_or(0) as f64 / n as f64,
            n,
        })
        .collect()
}

/// Classify every mismatching (pred, gold) pair and rank slots by error
/// count (descending, ties by slot id). `top_k` limits the ranking length.
pub fn error_report(
    preds: &PredictionSet,
    gold: &[Dialogue],
    schema: &Schema,
    policy: MatchPolicy,
    top_k: usize,
) -> (ErrorTaxonomy, Vec<(String, usize)>) {
    let mut taxonomy = ErrorTaxonomy::default();
    let mut per_slot: BTreeMap<String, usize> = BTreeMap::new();
    let mut missing = 0usize;
    for dialogue in gold {
        for turn in 1..=dialogue.n_turns() {
            let state = &dialogue.gold_states[turn - 1];
            for slot in schema.slots() {
                let slot_id = slot.slot_id();
                let pred = predicted(preds, dialogue, turn, &slot_id, &mut missing);
                let gold_value = state.get(&slot_id);
                if !values_match(pred, gold_value, policy) {
                    taxonomy.bump(ErrorCategory::classify(pred, gold_value));
                    *per_slot.entry(slot_id).or_default() += 1;
                }
            }
        }
    }
    let mut ranking: Vec<(String, usize)> = per_slot.into_iter().collect();
    ranking.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranking.truncate(top_k);
    (taxonomy, ranking)
}

/// Run the full scoring pass and bundle everything into one report.
pub fn evaluate(
    preds: &PredictionSet,
    gold: &[Dialogue],
    schema: &Schema,
    policy: MatchPolicy,
    aga_mode: AgaMode,
) -> Result<EvalReport, MetricsError> {
    let mut n_missing = 0usize;
    let mut n_turns = 0usize;
    let mut n_active = 0usize;
    for dialogue in gold {
        n_turns += dialogue.n_turns();
        for turn in 1..=dialogue.n_turns() {
            n_active += active_slots(dialogue, turn)?.len();
            for slot in schema.slots() {
                if preds.get(&dialogue.id, turn, &slot.slot_id()).is_none() {
                    n_missing += 1;
                }
            }
        }
    }
    let (error_taxonomy, per_slot_errors) =
        error_report(preds, gold, schema, policy, schema.len());
    Ok(EvalReport {
        provenance: preds.provenance.clone(),
        policy,
        aga_mode,
        jga: jga(preds, gold, schema, policy),
        aga: aga(preds, gold, policy, aga_mode)?,
        per_turn_jga: per_turn_jga(preds, gold, schema, policy),
        n_turns,
        n_active_slot_instances: n_active,
        n_missing_predictions: n_missing,
        error_taxonomy,
        per_slot_errors,
    })
}

/// Mean and population variance of a set of reports' JGA values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

pub fn prompt_sensitivity(reports: &[EvalReport]) -> Result<SensitivitySummary, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewReports(reports.len()));
    }
    let n = reports.len() as f64;
    let mean = reports.iter().map(|r| r.jga).sum::<f64>() / n;
    let variance = reports.iter().map(|r| (r.jga - mean).powi(2)).sum::<f64>() / n;
    Ok(SensitivitySummary {
        n: reports.len(),
        mean,
        variance,
    })
}
