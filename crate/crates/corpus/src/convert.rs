use std::collections::BTreeMap;

use serde::Deserialize;

use crate::dialogue::{Dialogue, DialogueLoad, DialogueState, Turn};
use crate::error::CorpusError;
use crate::schema::{Schema, SlotSpec};
use crate::value::SlotValue;

// Both SGD and MultiWOZ 2.2 ship schemas as a top-level array of service
// objects; the canonical format wraps the same shape in {"services": [...]}.

#[derive(Debug, Deserialize)]
struct NativeService {
    service_name: String,
    #[serde(default)]
    slots: Vec<NativeSlot>,
}

#[derive(Debug, Deserialize)]
struct NativeSlot {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    is_categorical: bool,
    #[serde(default)]
    possible_values: Vec<String>,
}

/// Convert a native SGD/MultiWOZ `schema.json` (array of services) into the
/// canonical [`Schema`].
pub fn convert_sgd_schema(document: &str) -> Result<Schema, CorpusError> {
    let services: Vec<NativeService> =
        serde_json::from_str(document).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    let mut slots = Vec::new();
    for service in services {
        for slot in service.slots {
            // MultiWOZ 2.2 qualifies slot names with the domain already
            // ("hotel-pricerange"); SGD leaves them bare. Strip a matching
            // prefix so the canonical id never doubles the domain.
            let name = slot
                .name
                .strip_prefix(&format!("{}-", service.service_name.to_lowercase()))
                .unwrap_or(&slot.name)
                .to_string();
            slots.push(SlotSpec {
                domain: service.service_name.clone(),
                name,
                description: slot.description,
                is_categorical: slot.is_categorical,
                possible_values: slot.possible_values,
            });
        }
    }
    Schema::new(slots)
}

#[derive(Debug, Deserialize)]
struct NativeDialogueFile(Vec<NativeDialogue>);

#[derive(Debug, Deserialize)]
struct NativeDialogue {
    dialogue_id: String,
    turns: Vec<NativeTurn>,
}

#[derive(Debug, Deserialize)]
struct NativeTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    frames: Vec<NativeFrame>,
}

#[derive(Debug, Deserialize)]
struct NativeFrame {
    #[serde(default)]
    service: String,
    #[serde(default)]
    state: Option<NativeFrameState>,
}

#[derive(Debug, Deserialize)]
struct NativeFrameState {
    #[serde(default)]
    slot_values: BTreeMap<String, serde_json::Value>,
}

fn first_value(raw: &serde_json::Value) -> Option<String> {
    match raw {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(items) => items.first().and_then(first_value),
        other => Some(other.to_string()),
    }
}

fn convert_native_dialogues(
    document: &str,
    schema: &Schema,
    strict: bool,
    qualify_with_service: bool,
) -> Result<DialogueLoad, CorpusError> {
    let file: NativeDialogueFile =
        serde_json::from_str(document).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    let mut dialogues = Vec::new();
    let mut warnings = Vec::new();
    for native in file.0 {
        let mut turns: Vec<Turn> = Vec::new();
        let mut states: Vec<DialogueState> = Vec::new();
        // Per-service cumulative substates; each user-turn frame carries the
        // full state of its service at that point.
        let mut per_service: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut pending_system = String::new();
        for turn in native.turns {
            match turn.speaker.to_uppercase().as_str() {
                "SYSTEM" => pending_system = turn.utterance,
                "USER" => {
                    for frame in &turn.frames {
                        if let Some(state) = &frame.state {
                            let service = frame.service.to_lowercase();
                            let substate = per_service.entry(service.clone()).or_default();
                            substate.clear();
                            for (slot, raw) in &state.slot_values {
                                let slot_id = if qualify_with_service && !slot.contains('-') {
                                    format!("{}-{}", service, slot.to_lowercase())
                                } else {
                                    slot.to_lowercase()
                                };
                                if let Some(value) = first_value(raw) {
                                    substate.insert(slot_id, value);
                                }
                            }
                        }
                    }
                    let mut state = DialogueState::new();
                    for substate in per_service.values() {
                        for (slot_id, value) in substate {
                            state.set(slot_id, SlotValue::from_raw(value));
                        }
                    }
                    turns.push(Turn {
                        system_utterance: std::mem::take(&mut pending_system),
                        user_utterance: turn.utterance,
                    });
                    states.push(state);
                }
                other => {
                    warnings.push(format!(
                        "dialogue `{}`: skipping turn with speaker `{other}`",
                        native.dialogue_id
                    ));
                }
            }
        }
        dialogues.push(Dialogue::validate(
            native.dialogue_id,
            turns,
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

/// Convert native SGD dialogues (bare slot names, qualified on conversion).
pub fn convert_sgd_dialogues(
    document: &str,
    schema: &Schema,
    strict: bool,
) -> Result<DialogueLoad, CorpusError> {
    convert_native_dialogues(document, schema, strict, true)
}

/// Convert MultiWOZ 2.2-style dialogues (slot names already domain-qualified).
pub fn convert_multiwoz_dialogues(
    document: &str,
    schema: &Schema,
    strict: bool,
) -> Result<DialogueLoad, CorpusError> {
    convert_native_dialogues(document, schema, strict, false)
}
