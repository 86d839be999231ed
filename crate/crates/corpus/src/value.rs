use serde::{Deserialize, Serialize};

/// The value a dialogue state assigns to one slot.
///
/// `None` is the "not mentioned" marker, `DontCare` the explicit
/// indifference marker; everything else is a literal string value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotValue {
    None,
    DontCare,
    Literal(String),
}

impl SlotValue {
    /// Canonicalize a raw annotation string.
    ///
    /// The confusion family `"not mentioned"` / `"none"` / `""` maps to
    /// [`SlotValue::None`] and `"dontcare"` / `"don't care"` to
    /// [`SlotValue::DontCare`]; anything else is kept as a literal.
    pub fn from_raw(raw: &str) -> Self {
        let trimmed = raw.trim();
        let lower = trimmed.to_lowercase();
        match lower.as_str() {
            "" | "none" | "not mentioned" => SlotValue::None,
            "dontcare" | "don't care" | "dont care" => SlotValue::DontCare,
            _ => SlotValue::Literal(trimmed.to_string()),
        }
    }

    /// The textual rendering used in prompts, model outputs, and files.
    pub fn render(&self) -> &str {
        match self {
            SlotValue::None => "NONE",
            SlotValue::DontCare => "dontcare",
            SlotValue::Literal(text) => text,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, SlotValue::None)
    }

    /// A slot is "set" when its value is anything other than `None`.
    pub fn is_set(&self) -> bool {
        !self.is_none()
    }
}

impl std::fmt::Display for SlotValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.render())
    }
}
