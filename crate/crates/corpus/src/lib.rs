//! Canonical in-memory model for schema-guided dialogue corpora.
//!
//! A corpus is a [`Schema`] (the fixed, ordered slot set) plus a list of
//! [`Dialogue`]s, each carrying one gold [`DialogueState`] per turn. States
//! are total: every schema slot always answers with a [`SlotValue`], where
//! unmentioned slots are `SlotValue::None`.
//!
//! The crate also ships loaders for the canonical file formats, converters
//! from the common native dataset layouts, train/eval split operations, and
//! a seeded synthetic corpus generator for desk-scale end-to-end runs.

mod convert;
mod dialogue;
mod error;
mod schema;
mod split;
mod synth;
mod value;

pub use convert::{convert_multiwoz_dialogues, convert_sgd_dialogues, convert_sgd_schema};
pub use dialogue::{
    dialogues_to_document, load_dialogues, Dialogue, DialogueLoad, DialogueState, Turn,
};
pub use error::CorpusError;
pub use schema::{load_schema, schema_to_document, Schema, SlotSpec};
pub use split::{few_shot_split, zero_shot_split, CorpusSplit, SplitProvenance};
pub use synth::{synth_corpus, SynthConfig};
pub use value::SlotValue;

/// Convenience alias used by loaders that surface non-fatal issues.
pub type Warning = String;
