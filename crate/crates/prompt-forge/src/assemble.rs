use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ldst_corpus::{Dialogue, Schema, SlotSpec, Turn};

use crate::coin::KeyedCoins;
use crate::error::ForgeError;
use crate::sample::{InstructionSample, InstructionTemplate, SampleMeta, SampleParts};
use crate::templates::TemplateSet;

/// Section-inclusion probabilities and the generation seed. The coins for
/// the description and the possible-value list are independent; the
/// standard/customized instruction draw defaults to uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyPolicy {
    pub p_description: f64,
    pub p_pvl: f64,
    #[serde(default = "default_half")]
    pub p_standard_instruction: f64,
    pub seed: u64,
}

fn default_half() -> f64 {
    0.5
}

impl Default for AssemblyPolicy {
    fn default() -> Self {
        AssemblyPolicy {
            p_description: 0.5,
            p_pvl: 0.5,
            p_standard_instruction: 0.5,
            seed: 0,
        }
    }
}

impl AssemblyPolicy {
    pub fn with_seed(seed: u64) -> Self {
        AssemblyPolicy {
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), ForgeError> {
        for p in [self.p_description, self.p_pvl, self.p_standard_instruction] {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(ForgeError::BadProbability(p));
            }
        }
        Ok(())
    }
}

/// Render the dialogue context for a turn prefix: alternating
/// `[SYSTEM] …` / `[USER] …` segments in turn order, one string per turn.
/// An empty first system utterance is omitted.
fn context_segments(turns: &[Turn], tokens: &crate::templates::SegmentTokens) -> Vec<String> {
    turns
        .iter()
        .map(|turn| {
            if turn.system_utterance.trim().is_empty() {
                format!("{} {}", tokens.user, turn.user_utterance)
            } else {
                format!(
                    "{} {} {} {}",
                    tokens.system, turn.system_utterance, tokens.user, turn.user_utterance
                )
            }
        })
        .collect()
}

/// Flat rendering of the context prefix up to (and including) turn `t`.
pub fn render_context(turns: &[Turn], templates: &TemplateSet) -> String {
    context_segments(turns, &templates.segment_tokens).join(" ")
}

fn build_sample(
    dialogue: &Dialogue,
    turn_index: usize,
    slot: &SlotSpec,
    templates: &TemplateSet,
    instruction_template: InstructionTemplate,
    include_description: bool,
    include_pvl: bool,
) -> Result<InstructionSample, ForgeError> {
    if turn_index == 0 || turn_index > dialogue.n_turns() {
        return Err(ForgeError::TurnOutOfRange {
            dialogue: dialogue.id.clone(),
            turn: turn_index,
            n_turns: dialogue.n_turns(),
        });
    }
    let slot_id = slot.slot_id();
    let instruction = match instruction_template {
        InstructionTemplate::Standard => templates.render_standard_instruction(slot),
        InstructionTemplate::Customized => templates.render_customized_instruction(slot),
    };
    let parts = SampleParts {
        context_segments: context_segments(&dialogue.turns[..turn_index], &templates.segment_tokens),
        description: include_description.then(|| templates.render_description(slot)),
        pvl: (include_pvl && slot.is_categorical).then(|| templates.render_pvl(slot)),
        query: templates.render_query(slot),
    };
    let input = parts.render();
    let output = dialogue.gold_states[turn_index - 1].get(&slot_id).render().to_string();
    Ok(InstructionSample {
        instruction,
        input,
        output,
        meta: SampleMeta {
            dialogue_id: dialogue.id.clone(),
            turn_index,
            slot_id,
            included_description: parts.description.is_some(),
            included_pvl: parts.pvl.is_some(),
            instruction_template,
        },
        parts: Some(parts),
    })
}

/// Assemble one randomized sample for (dialogue, turn, slot).
///
/// The instruction wording is drawn uniformly between the standard and
/// customized templates; the description and PVL sections are included by
/// independent coins. All three coins are keyed by
/// `(seed, dialogue_id, turn_index, slot_id)`.
pub fn assemble_sample(
    dialogue: &Dialogue,
    turn_index: usize,
    slot: &SlotSpec,
    templates: &TemplateSet,
    policy: &AssemblyPolicy,
) -> Result<InstructionSample, ForgeError> {
    policy.validate()?;
    let coins = KeyedCoins::new(policy.seed);
    let slot_id = slot.slot_id();
    let instruction_template = if coins.flip(
        &dialogue.id,
        turn_index,
        &slot_id,
        "instruction",
        policy.p_standard_instruction,
    ) {
        InstructionTemplate::Standard
    } else {
        InstructionTemplate::Customized
    };
    let include_description = coins.flip(
        &dialogue.id,
        turn_index,
        &slot_id,
        "description",
        policy.p_description,
    );
    let include_pvl = coins.flip(&dialogue.id, turn_index, &slot_id, "pvl", policy.p_pvl);
    build_sample(
        dialogue,
        turn_index,
        slot,
        templates,
        instruction_template,
        include_description,
        include_pvl,
    )
}

/// The no-randomness baseline: always include the description and (for
/// categorical slots) the PVL, with the slot-specific instruction wording.
pub fn fixed_sample(
    dialogue: &Dialogue,
    turn_index: usize,
    slot: &SlotSpec,
    templates: &TemplateSet,
) -> Result<InstructionSample, ForgeError> {
    build_sample(
        dialogue,
        turn_index,
        slot,
        templates,
        InstructionTemplate::Customized,
        true,
        true,
    )
}

/// Emit one sample per (dialogue, turn, schema slot), ordered by dialogue,
/// then turn, then schema slot order: exactly Σ T_d × J samples.
pub fn generate_instruction_dataset<'a>(
    corpus: &'a [Dialogue],
    schema: &'a Schema,
    templates: &'a TemplateSet,
    policy: Option<&'a AssemblyPolicy>,
) -> impl Iterator<Item = Result<InstructionSample, ForgeError>> + 'a {
    corpus.iter().flat_map(move |dialogue| {
        (1..=dialogue.n_turns()).flat_map(move |turn_index| {
            schema.slots().iter().map(move |slot| match policy {
                Some(policy) => assemble_sample(dialogue, turn_index, slot, templates, policy),
                None => fixed_sample(dialogue, turn_index, slot, templates),
            })
        })
    })
}

/// Generate the dataset as line-delimited JSON, fanning out across
/// dialogues on `workers` threads. Because per-sample randomness is keyed,
/// the bytes are identical for any worker count.
pub fn generate_jsonl(
    corpus: &[Dialogue],
    schema: &Schema,
    templates: &TemplateSet,
    policy: Option<&AssemblyPolicy>,
    workers: usize,
) -> Result<String, ForgeError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ForgeError::Malformed(e.to_string()))?;
    let chunks: Vec<Result<String, ForgeError>> = pool.install(|| {
        corpus
            .par_iter()
            .map(|dialogue| {
                let mut out = String::new();
                for turn_index in 1..=dialogue.n_turns() {
                    for slot in schema.slots() {
                        let sample = match policy {
                            Some(policy) => {
                                assemble_sample(dialogue, turn_index, slot, templates, policy)?
                            }
                            None => fixed_sample(dialogue, turn_index, slot, templates)?,
                        };
                        out.push_str(
                            &serde_json::to_string(&sample)
                                .expect("sample serialization is infallible"),
                        );
                        out.push('\n');
                    }
                }
                Ok(out)
            })
            .collect()
    });
    let mut joined = String::new();
    for chunk in chunks {
        joined.push_str(&chunk?);
    }
    Ok(joined)
}
