use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{Dialogue, DialogueState, Turn};
use crate::error::CorpusError;
use crate::schema::{Schema, SlotSpec};
use crate::value::SlotValue;

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_dialogues: usize,
    pub n_domains: usize,
    pub slots_per_domain: usize,
    pub max_turns: usize,
    /// Fraction of each domain's slots that are categorical.
    pub categorical_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_dialogues: 200,
            n_domains: 3,
            slots_per_domain: 4,
            max_turns: 6,
            categorical_ratio: 0.5,
        }
    }
}

const DOMAINS: &[&str] = &[
    "hotel",
    "restaurant",
    "train",
    "taxi",
    "museum",
    "cinema",
    "salon",
    "clinic",
    "library",
    "market",
];

struct SlotKind {
    name: &'static str,
    categorical: bool,
    values: &'static [&'static str],
}

const SLOT_KINDS: &[SlotKind] = &[
    SlotKind {
        name: "area",
        categorical: true,
        values: &["north", "south", "east", "west", "centre"],
    },
    SlotKind {
        name: "pricerange",
        categorical: true,
        values: &["cheap", "moderate", "expensive"],
    },
    SlotKind {
        name: "day",
        categorical: true,
        values: &[
            "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
        ],
    },
    SlotKind {
        name: "people",
        categorical: true,
        values: &["1", "2", "3", "4", "5", "6", "7", "8"],
    },
    SlotKind {
        name: "stars",
        categorical: true,
        values: &["1", "2", "3", "4", "5"],
    },
    SlotKind {
        name: "name",
        categorical: false,
        values: &[
            "alpha", "bravo", "carlton", "delta", "eagle", "fenway", "grandview", "horizon",
        ],
    },
    SlotKind {
        name: "food",
        categorical: false,
        values: &[
            "italian", "chinese", "indian", "british", "thai", "french", "mexican", "greek",
        ],
    },
    SlotKind {
        name: "time",
        categorical: false,
        values: &["08:15", "09:30", "11:45", "13:00", "14:30", "17:15", "19:00", "21:30"],
    },
    SlotKind {
        name: "destination",
        categorical: false,
        values: &[
            "cambridge", "norwich", "london", "oxford", "leeds", "bristol", "york", "dover",
        ],
    },
    SlotKind {
        name: "duration",
        categorical: true,
        values: &["short", "medium", "long"],
    },
];

fn domain_name(index: usize) -> String {
    let base = DOMAINS[index % DOMAINS.len()];
    if index < DOMAINS.len() {
        base.to_string()
    } else {
        format!("{base}{}", index / DOMAINS.len() + 1)
    }
}

fn build_schema(config: &SynthConfig) -> Result<Schema, CorpusError> {
    let categorical: Vec<&SlotKind> = SLOT_KINDS.iter().filter(|k| k.categorical).collect();
    let freeform: Vec<&SlotKind> = SLOT_KINDS.iter().filter(|k| !k.categorical).collect();
    let mut slots = Vec::new();
    for d in 0..config.n_domains {
        let domain = domain_name(d);
        let mut n_cat = 0usize;
        let mut n_free = 0usize;
        for i in 0..config.slots_per_domain {
            // Interleave the two pools toward the requested categorical ratio.
            let target = (config.categorical_ratio * (i + 1) as f64).round() as usize;
            let pick_cat = n_cat < target || n_free >= freeform.len();
            let kind = if pick_cat {
                let k = categorical[n_cat % categorical.len()];
                n_cat += 1;
                k
            } else {
                let k = freeform[n_free % freeform.len()];
                n_free += 1;
                k
            };
            let suffix_round = if kind.categorical {
                (n_cat - 1) / categorical.len()
            } else {
                (n_free - 1) / freeform.len()
            };
            let name = if suffix_round == 0 {
                kind.name.to_string()
            } else {
                format!("{}{}", kind.name, suffix_round + 1)
            };
            slots.push(SlotSpec {
                domain: domain.clone(),
                name,
                description: format!("the {} of the {}", kind.name, domain),
                is_categorical: kind.categorical,
                possible_values: if kind.categorical {
                    kind.values.iter().map(|v| v.to_string()).collect()
                } else {
                    vec![]
                },
            });
        }
    }
    Schema::new(slots)
}

fn kind_values(slot: &SlotSpec) -> &'static [&'static str] {
    let base = slot.name.trim_end_matches(|c: char| c.is_ascii_digit());
    SLOT_KINDS
        .iter()
        .find(|k| k.name == base)
        .map(|k| k.values)
        .unwrap_or(&["thing"])
}

/// Generate a deterministic synthetic corpus.
///
/// Every introduced value is mentioned verbatim in that turn's user
/// utterance, gold states persist once set (except through explicit update
/// utterances), and the whole corpus is a pure function of `(config, seed)`.
pub fn synth_corpus(
    config: &SynthConfig,
    seed: u64,
) -> Result<(Schema, Vec<Dialogue>), CorpusError> {
    if config.n_dialogues == 0
        || config.n_domains == 0
        || config.slots_per_domain == 0
        || config.max_turns == 0
    {
        return Err(CorpusError::InvalidConfig(
            "all counts must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.categorical_ratio) {
        return Err(CorpusError::InvalidConfig(
            "categorical_ratio must lie in [0, 1]".into(),
        ));
    }
    let schema = build_schema(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialogues = Vec::with_capacity(config.n_dialogues);
    for i in 0..config.n_dialogues {
        dialogues.push(synth_dialogue(&schema, config, &mut rng, i));
    }
    Ok((schema, dialogues))
}

fn synth_dialogue(
    schema: &Schema,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    index: usize,
) -> Dialogue {
    let domains: Vec<String> = schema.domains().into_iter().collect();
    let mut active: Vec<String> = Vec::new();
    let first = domains[rng.random_range(0..domains.len())].clone();
    active.push(first);
    if domains.len() > 1 && rng.random_bool(0.35) {
        loop {
            let extra = domains[rng.random_range(0..domains.len())].clone();
            if !active.contains(&extra) {
                active.push(extra);
                break;
            }
        }
    }

    let n_turns = rng.random_range(1..=config.max_turns);
    let mut state = DialogueState::new();
    let mut turns = Vec::with_capacity(n_turns);
    let mut gold_states = Vec::with_capacity(n_turns);

    for t in 1..=n_turns {
        let system_utterance = if t == 1 {
            if rng.random_bool(0.5) {
                String::new()
            } else {
                "hello what can i do".to_string()
            }
        } else if rng.random_bool(0.4) {
            match pick_unset(schema, &active, &state, rng) {
                Some(slot) => format!("what {} for the {}", slot.name, slot.domain),
                None => "ok noted".to_string(),
            }
        } else {
            "ok noted".to_string()
        };

        let mut clauses: Vec<String> = Vec::new();
        // Turn 1 always introduces at least one fact so no turn has an
        // all-NONE gold state.
        let n_facts = if t == 1 {
            1 + usize::from(rng.random_bool(0.25))
        } else {
            match rng.random_range(0..10) {
                0..=6 => 1,
                7..=8 => 2,
                _ => 0,
            }
        };
        for _ in 0..n_facts {
            match pick_unset(schema, &active, &state, rng) {
                Some(slot) => {
                    let slot_id = slot.slot_id();
                    if rng.random_bool(0.08) {
                        clauses.push(format!("any {} {} is fine", slot.domain, slot.name));
                        state.set(&slot_id, SlotValue::DontCare);
                    } else {
                        let values = kind_values(slot);
                        let value = values.choose(rng).unwrap().to_string();
                        clauses.push(render_fact(rng, &slot.domain, &slot.name, &value));
                        state.set(&slot_id, SlotValue::Literal(value));
                    }
                }
                None => break,
            }
        }
        // Occasional update of an already-set slot.
        if t > 1 && rng.random_bool(0.10) {
            let set_ids: Vec<String> = state.set_slots().map(|(id, _)| id.to_string()).collect();
            if let Some(slot_id) = set_ids.choose(rng) {
                if let Some(slot) = schema.slot(slot_id) {
                    let values = kind_values(slot);
                    let current = state.get(slot_id).render().to_string();
                    let fresh: Vec<&&str> = values.iter().filter(|v| **v != current).collect();
                    if let Some(value) = fresh.choose(rng) {
                        clauses.push(format!(
                            "change the {} {} to {}",
                            slot.domain, slot.name, value
                        ));
                        state.set(slot_id, SlotValue::Literal(value.to_string()));
                    }
                }
            }
        }
        let user_utterance = if clauses.is_empty() {
            "that is all thanks".to_string()
        } else {
            clauses.join(" . ")
        };

        turns.push(Turn {
            system_utterance,
            user_utterance,
        });
        gold_states.push(state.clone());
    }

    let mut warnings = Vec::new();
    Dialogue::validate(
        format!("syn-{index:04}"),
        turns,
        gold_states,
        schema,
        true,
        &mut warnings,
    )
    .expect("synthetic dialogues are valid by construction")
}

fn render_fact(rng: &mut ChaCha8Rng, domain: &str, slot: &str, value: &str) -> String {
    match rng.random_range(0..2) {
        0 => format!("i want a {domain} with {slot} {value}"),
        _ => format!("the {domain} {slot} should be {value}"),
    }
}

fn pick_unset<'s>(
    schema: &'s Schema,
    active_domains: &[String],
    state: &DialogueState,
    rng: &mut ChaCha8Rng,
) -> Option<&'s SlotSpec> {
    let unset: Vec<&SlotSpec> = schema
        .slots()
        .iter()
        .filter(|s| active_domains.contains(&s.domain.to_lowercase()))
        .filter(|s| state.get(&s.slot_id()).is_none())
        .collect();
    unset.choose(rng).copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::dialogues_to_document;

    #[test]
    fn minimal_config_sets_exactly_one_slot() {
        let config = SynthConfig {
            n_dialogues: 1,
            n_domains: 1,
            slots_per_domain: 1,
            max_turns: 1,
            categorical_ratio: 1.0,
        };
        let (schema, dialogues) = synth_corpus(&config, 0).unwrap();
        assert_eq!(schema.len(), 1);
        assert_eq!(dialogues.len(), 1);
        assert_eq!(dialogues[0].n_turns(), 1);
        assert_eq!(dialogues[0].gold_states[0].n_set(), 1);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let config = SynthConfig::default();
        let (_, a) = synth_corpus(&config, 42).unwrap();
        let (_, b) = synth_corpus(&config, 42).unwrap();
        assert_eq!(dialogues_to_document(&a), dialogues_to_document(&b));
    }

    #[test]
    fn counts_match_config() {
        let config = SynthConfig {
            n_dialogues: 200,
            n_domains: 3,
            slots_per_domain: 4,
            max_turns: 8,
            categorical_ratio: 0.5,
        };
        let (schema, dialogues) = synth_corpus(&config, 7).unwrap();
        assert_eq!(dialogues.len(), 200);
        assert_eq!(schema.len(), 12);
    }

    #[test]
    fn introduced_values_are_mentioned_and_states_monotone() {
        let config = SynthConfig::default();
        let (_, dialogues) = synth_corpus(&config, 11).unwrap();
        for dialogue in &dialogues {
            let mut prev = DialogueState::new();
            for (i, state) in dialogue.gold_states.iter().enumerate() {
                for (slot_id, value) in state.set_slots() {
                    let prev_value = prev.get(slot_id);
                    if prev_value != value {
                        // Newly set or updated: the literal must be spoken
                        // in this turn's user utterance.
                        if let SlotValue::Literal(text) = value {
                            assert!(
                                dialogue.turns[i].user_utterance.contains(text.as_str()),
                                "dialogue {} turn {}: value `{}` not mentioned in `{}`",
                                dialogue.id,
                                i + 1,
                                text,
                                dialogue.turns[i].user_utterance
                            );
                        }
                    }
                }
                // Monotone: previously set slots never fall back to NONE.
                for (slot_id, _) in prev.set_slots() {
                    assert!(state.get(slot_id).is_set());
                }
                prev = state.clone();
            }
        }
    }

    #[test]
    fn every_turn_has_a_set_slot() {
        let (_, dialogues) = synth_corpus(&SynthConfig::default(), 3).unwrap();
        for dialogue in &dialogues {
            for state in &dialogue.gold_states {
                assert!(state.n_set() > 0);
            }
        }
    }
}
