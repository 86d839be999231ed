//! Turn (dialogue, turn, slot) triples into instruction samples.
//!
//! The assembler draws an instruction template and the optional
//! description / possible-value sections from per-sample coins, each keyed
//! by `(seed, dialogue_id, turn_index, slot_id)`, so generation order and
//! parallelism never change the output bytes. A no-randomness fixed
//! template and the four remote chat-prompt shapes live alongside it.

mod assemble;
mod coin;
mod error;
mod remote;
mod sample;
mod templates;
mod truncate;

pub use assemble::{
    assemble_sample, fixed_sample, generate_instruction_dataset, generate_jsonl, render_context,
    AssemblyPolicy,
};
pub use coin::KeyedCoins;
pub use error::ForgeError;
pub use remote::{remote_prompt, DemoExemplar, RemotePromptMode, RemoteQuery};
pub use sample::{
    dataset_from_jsonl, dataset_to_jsonl, InstructionSample, InstructionTemplate, SampleMeta,
    SampleParts,
};
pub use templates::{SegmentTokens, TemplateSet};
pub use truncate::{truncate_to_budget, ByteTokenCounter, TokenCounter};
