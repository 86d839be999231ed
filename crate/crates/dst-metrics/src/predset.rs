use std::collections::BTreeMap;

use ldst_corpus::SlotValue;
use serde::{Deserialize, Serialize};

/// One prediction file line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub slot: String,
    pub value: String,
}

/// Predicted values keyed by (dialogue id, 1-based turn, slot id).
///
/// Missing entries score as NONE; the evaluator reports how many lookups
/// fell through so harness bugs are distinguishable from model abstention.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    entries: BTreeMap<(String, usize, String), SlotValue>,
    pub provenance: String,
}

impl PredictionSet {
    pub fn new(provenance: impl Into<String>) -> Self {
        PredictionSet {
            entries: BTreeMap::new(),
            provenance: provenance.into(),
        }
    }

    pub fn insert(&mut self, dialogue_id: &str, turn: usize, slot: &str, value: SlotValue) {
        self.entries
            .insert((dialogue_id.to_string(), turn, slot.to_string()), value);
    }

    /// Look up a prediction; `None` means the entry is missing entirely
    /// (distinct from a present `SlotValue::None`).
    pub fn get(&self, dialogue_id: &str, turn: usize, slot: &str) -> Option<&SlotValue> {
        self.entries
            .get(&(dialogue_id.to_string(), turn, slot.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse the line-delimited predictions format. Value strings pass
    /// through the same canonicalization as gold annotations.
    pub fn from_jsonl(text: &str, provenance: impl Into<String>) -> Result<Self, serde_json::Error> {
        let mut set = PredictionSet::new(provenance);
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let record: PredictionRecord = serde_json::from_str(line)?;
            set.insert(
                &record.dialogue_id,
                record.turn,
                &record.slot,
                SlotValue::from_raw(&record.value),
            );
        }
        Ok(set)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ((dialogue_id, turn, slot), value) in &self.entries {
            let record = PredictionRecord {
                dialogue_id: dialogue_id.clone(),
                turn: *turn,
                slot: slot.clone(),
                value: value.render().to_string(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serialization"));
            out.push('\n');
        }
        out
    }
}
