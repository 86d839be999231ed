use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("turn index {turn} out of range for dialogue `{dialogue}` with {n_turns} turns")]
    TurnOutOfRange {
        dialogue: String,
        turn: usize,
        n_turns: usize,
    },

    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),

    #[error("template `{name}` left unresolved placeholder `{placeholder}`")]
    UnresolvedPlaceholder { name: String, placeholder: String },

    #[error("mode {mode} takes {expected}, got {got}")]
    SlotScopeMismatch {
        mode: String,
        expected: &'static str,
        got: &'static str,
    },

    #[error("mode {0} requires a demo exemplar")]
    MissingDemo(String),

    #[error("token budget {budget} cannot hold the non-context sections ({required} tokens)")]
    BudgetTooSmall { budget: usize, required: usize },

    #[error("cannot truncate a sample without section structure")]
    MissingParts,

    #[error("malformed dataset record: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
