use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::CorpusError;
use crate::schema::Schema;
use crate::value::SlotValue;
use crate::Warning;

/// One system/user exchange. The system utterance may be empty on turn 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "system")]
    pub system_utterance: String,
    #[serde(rename = "user")]
    pub user_utterance: String,
}

/// A total slot → value map for one turn.
///
/// Only set slots are stored; lookups for absent slots answer
/// [`SlotValue::None`], which makes NONE-fill idempotent by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    values: BTreeMap<String, SlotValue>,
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Look up a slot; absent slots are `None` by the totality convention.
    pub fn get(&self, slot_id: &str) -> &SlotValue {
        self.values.get(slot_id).unwrap_or(&SlotValue::None)
    }

    /// Set a slot value. Storing `None` removes the entry, keeping the
    /// sparse representation canonical.
    pub fn set(&mut self, slot_id: &str, value: SlotValue) {
        if value.is_none() {
            self.values.remove(slot_id);
        } else {
            self.values.insert(slot_id.to_string(), value);
        }
    }

    /// The stored (set) entries in sorted slot-id order.
    pub fn set_slots(&self) -> impl Iterator<Item = (&str, &SlotValue)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn n_set(&self) -> usize {
        self.values.len()
    }

    /// Domains (lowercased prefix of the slot id) with at least one set slot.
    pub fn domains(&self) -> BTreeSet<String> {
        self.values
            .keys()
            .filter_map(|id| id.split('-').next())
            .map(str::to_string)
            .collect()
    }
}

/// A multi-turn dialogue with one gold state per turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    pub gold_states: Vec<DialogueState>,
    /// Domains with any set gold value at any turn. Derived at validation.
    #[serde(default, skip_serializing)]
    pub domains_touched: BTreeSet<String>,
}

impl Dialogue {
    /// Validate turn/state alignment against a schema and derive
    /// `domains_touched`. `strict` controls whether categorical values
    /// outside the possible-value list are errors or warnings.
    pub fn validate(
        id: String,
        turns: Vec<Turn>,
        gold_states: Vec<DialogueState>,
        schema: &Schema,
        strict: bool,
        warnings: &mut Vec<Warning>,
    ) -> Result<Self, CorpusError> {
        if turns.is_empty() {
            return Err(CorpusError::EmptyDialogue(id));
        }
        if turns.len() != gold_states.len() {
            return Err(CorpusError::TurnStateMismatch {
                dialogue: id,
                turns: turns.len(),
                states: gold_states.len(),
            });
        }
        for (i, turn) in turns.iter().enumerate() {
            if turn.user_utterance.trim().is_empty() {
                return Err(CorpusError::EmptyUserUtterance {
                    dialogue: id,
                    turn: i + 1,
                });
            }
        }
        let mut domains_touched = BTreeSet::new();
        for (i, state) in gold_states.iter().enumerate() {
            for (slot_id, value) in state.set_slots() {
                let spec = schema.slot(slot_id).ok_or_else(|| CorpusError::UnknownSlot {
                    dialogue: id.clone(),
                    slot: slot_id.to_string(),
                })?;
                if spec.is_categorical {
                    if let SlotValue::Literal(text) = value {
                        let known = spec
                            .possible_values
                            .iter()
                            .any(|v| v.eq_ignore_ascii_case(text));
                        if !known {
                            if strict {
                                return Err(CorpusError::ValueOutsidePvl {
                                    dialogue: id,
                                    turn: i + 1,
                                    slot: slot_id.to_string(),
                                    value: text.clone(),
                                });
                            }
                            warnings.push(format!(
                                "dialogue `{id}` turn {}: value `{text}` for categorical slot `{slot_id}` is outside its possible-value list; kept as literal",
                                i + 1
                            ));
                        }
                    }
                }
                domains_touched.insert(
                    slot_id.split('-').next().unwrap_or(slot_id).to_string(),
                );
            }
        }
        Ok(Dialogue {
            id,
            turns,
            gold_states,
            domains_touched,
        })
    }

    /// Number of turns (`T`).
    pub fn n_turns(&self) -> usize {
        self.turns.len()
    }

    /// Gold state at a 1-based turn index.
    pub fn state_at(&self, turn_index: usize) -> Option<&DialogueState> {
        if turn_index == 0 {
            return None;
        }
        self.gold_states.get(turn_index - 1)
    }

    pub fn touches(&self, domain: &str) -> bool {
        self.domains_touched.contains(&domain.to_lowercase())
    }
}

#[derive(Debug, Deserialize)]
struct DialogueRecord {
    id: String,
    turns: Vec<Turn>,
    states: Vec<BTreeMap<String, String>>,
}

#[derive(Serialize)]
struct DialogueRecordOut<'a> {
    id: &'a str,
    turns: &'a [Turn],
    states: Vec<BTreeMap<&'a str, &'a str>>,
}

/// Result of loading a dialogue file: the validated dialogues plus any
/// non-fatal warnings collected along the way.
#[derive(Debug)]
pub struct DialogueLoad {
    pub dialogues: Vec<Dialogue>,
    pub warnings: Vec<Warning>,
}

/// Parse a line-delimited dialogue document and validate every record
/// against the schema. States are totalized with NONE fill; special value
/// spellings are canonicalized on the way in.
pub fn load_dialogues(
    document: &str,
    schema: &Schema,
    strict: bool,
) -> Result<DialogueLoad, CorpusError> {
    let mut dialogues = Vec::new();
    let mut warnings = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (line_no, line) in document.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord = serde_json::from_str(line).map_err(|e| {
            CorpusError::Malformed(format!("line {}: {}", line_no + 1, e))
        })?;
        if !seen_ids.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateDialogue(record.id));
        }
        let states = record
            .states
            .into_iter()
            .map(|raw| {
                let mut state = DialogueState::new();
                for (slot_id, value) in raw {
                    state.set(&slot_id.to_lowercase(), SlotValue::from_raw(&value));
                }
                state
            })
            .collect();
        dialogues.push(Dialogue::validate(
            record.id,
            record.turns,
            states,
            schema,
            strict,
            &mut warnings,
        )?);
    }
    Ok(DialogueLoad {
        dialogues,
        warnings,
    })
}

/// Serialize dialogues to the canonical line-delimited document.
pub fn dialogues_to_document(dialogues: &[Dialogue]) -> String {
    let mut out = String::new();
    for dialogue in dialogues {
        let states = dialogue
            .gold_states
            .iter()
            .map(|state| {
                state
                    .set_slots()
                    .map(|(id, value)| (id, value.render()))
                    .collect()
            })
            .collect();
        let record = DialogueRecordOut {
            id: &dialogue.id,
            turns: &dialogue.turns,
            states,
        };
        out.push_str(&serde_json::to_string(&record).expect("dialogue serialization is infallible"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::SlotSpec;

    fn schema_49() -> Schema {
        let mut slots: Vec<SlotSpec> = (0..48)
            .map(|i| SlotSpec {
                domain: "hotel".into(),
                name: format!("slot{i}"),
                description: String::new(),
                is_categorical: false,
                possible_values: vec![],
            })
            .collect();
        slots.push(SlotSpec {
            domain: "restaurant".into(),
            name: "area".into(),
            description: "area or place of the restaurant".into(),
            is_categorical: true,
            possible_values: ["centre", "east", "north", "south", "west"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        });
        Schema::new(slots).unwrap()
    }

    fn record(id: &str, n_turns: usize, state_json: &str) -> String {
        let turn = r#"{"system": "ok", "user": "hi there"}"#;
        let turns = vec![turn; n_turns].join(",");
        let states = vec![state_json.to_string(); n_turns].join(",");
        format!(r#"{{"id": "{id}", "turns": [{turns}], "states": [{states}]}}"#)
    }

    #[test]
    fn six_turn_dialogue_loads_under_49_slot_schema() {
        let schema = schema_49();
        let doc = record("PMUL4398", 6, r#"{"restaurant-area": "centre"}"#);
        let load = load_dialogues(&doc, &schema, true).unwrap();
        assert_eq!(load.dialogues.len(), 1);
        assert_eq!(load.dialogues[0].n_turns(), 6);
        assert!(load.warnings.is_empty());
    }

    #[test]
    fn states_totalize_with_none_fill() {
        let schema = schema_49();
        let doc = record("d1", 1, r#"{"restaurant-area": "centre"}"#);
        let load = load_dialogues(&doc, &schema, true).unwrap();
        let state = &load.dialogues[0].gold_states[0];
        assert_eq!(
            state.get("restaurant-area"),
            &SlotValue::Literal("centre".into())
        );
        assert_eq!(state.get("hotel-slot0"), &SlotValue::None);
        assert_eq!(state.n_set(), 1);
    }

    #[test]
    fn unknown_slot_is_always_an_error() {
        let schema = schema_49();
        let doc = record("d1", 1, r#"{"spaceship-fuel": "full"}"#);
        let err = load_dialogues(&doc, &schema, false).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownSlot { .. }));
    }

    #[test]
    fn categorical_violation_strictness() {
        let schema = schema_49();
        let doc = record("d1", 1, r#"{"restaurant-area": "uptown"}"#);
        assert!(matches!(
            load_dialogues(&doc, &schema, true),
            Err(CorpusError::ValueOutsidePvl { .. })
        ));
        let load = load_dialogues(&doc, &schema, false).unwrap();
        assert_eq!(load.warnings.len(), 1);
        assert_eq!(
            load.dialogues[0].gold_states[0].get("restaurant-area"),
            &SlotValue::Literal("uptown".into())
        );
    }

    #[test]
    fn turn_state_mismatch_rejected() {
        let schema = schema_49();
        let doc = r#"{"id": "d1", "turns": [{"system": "", "user": "hi"}], "states": [{}, {}]}"#;
        assert!(matches!(
            load_dialogues(doc, &schema, true),
            Err(CorpusError::TurnStateMismatch { .. })
        ));
    }

    #[test]
    fn special_values_canonicalized_at_load() {
        let schema = schema_49();
        let doc = record(
            "d1",
            1,
            r#"{"hotel-slot0": "not mentioned", "hotel-slot1": "dontcare"}"#,
        );
        let load = load_dialogues(&doc, &schema, true).unwrap();
        let state = &load.dialogues[0].gold_states[0];
        assert_eq!(state.get("hotel-slot0"), &SlotValue::None);
        assert_eq!(state.get("hotel-slot1"), &SlotValue::DontCare);
        assert_eq!(state.n_set(), 1);
    }

    #[test]
    fn document_round_trip() {
        let schema = schema_49();
        let doc = record("d1", 2, r#"{"restaurant-area": "north"}"#);
        let load = load_dialogues(&doc, &schema, true).unwrap();
        let serialized = dialogues_to_document(&load.dialogues);
        let reloaded = load_dialogues(&serialized, &schema, true).unwrap();
        assert_eq!(load.dialogues, reloaded.dialogues);
    }
}
