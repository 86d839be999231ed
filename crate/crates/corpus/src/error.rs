use thiserror::Error;

/// Errors raised while loading, validating, splitting, or synthesizing corpora.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("schema has no slots")]
    EmptySchema,

    #[error("duplicate slot id `{0}`")]
    DuplicateSlot(String),

    #[error("slot id collision: `{first}` and `{second}` both canonicalize to `{id}`")]
    SlotIdCollision {
        id: String,
        first: String,
        second: String,
    },

    #[error("categorical slot `{0}` has an empty possible-value list")]
    EmptyPossibleValues(String),

    #[error("non-categorical slot `{0}` carries a possible-value list")]
    UnexpectedPossibleValues(String),

    #[error("dialogue `{dialogue}`: unknown slot id `{slot}`")]
    UnknownSlot { dialogue: String, slot: String },

    #[error("dialogue `{dialogue}` turn {turn}: value `{value}` for categorical slot `{slot}` is not in its possible-value list")]
    ValueOutsidePvl {
        dialogue: String,
        turn: usize,
        slot: String,
        value: String,
    },

    #[error("dialogue `{dialogue}`: {turns} turns but {states} states")]
    TurnStateMismatch {
        dialogue: String,
        turns: usize,
        states: usize,
    },

    #[error("dialogue `{dialogue}` turn {turn}: empty user utterance")]
    EmptyUserUtterance { dialogue: String, turn: usize },

    #[error("dialogue `{0}` has no turns")]
    EmptyDialogue(String),

    #[error("duplicate dialogue id `{0}`")]
    DuplicateDialogue(String),

    #[error("split fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),

    #[error("holdout domain `{0}` does not appear in any dialogue")]
    UnknownDomain(String),

    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
