use crate::error::ForgeError;
use crate::sample::InstructionSample;

/// Measures text length in the tokens of whatever tokenizer the pipeline
/// is configured with.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

/// Byte-level counting: one token per byte, matching the default tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenCounter;

impl TokenCounter for ByteTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.len()
    }
}

impl<F: Fn(&str) -> usize> TokenCounter for F {
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

/// Shrink a sample's prompt to `budget` tokens by dropping the oldest turns
/// from the rendered context. The query, description, and PVL sections are
/// never dropped; if they alone exceed the budget, that is an error.
pub fn truncate_to_budget(
    sample: &InstructionSample,
    budget: usize,
    counter: &impl TokenCounter,
) -> Result<InstructionSample, ForgeError> {
    let prompt_len = |s: &InstructionSample| counter.count(&s.prompt());
    if prompt_len(sample) <= budget {
        return Ok(sample.clone());
    }
    let parts = sample.parts.as_ref().ok_or(ForgeError::MissingParts)?;

    let mut kept = parts.clone();
    loop {
        let mut candidate = sample.clone();
        candidate.input = kept.render();
        candidate.parts = Some(kept.clone());
        if prompt_len(&candidate) <= budget {
            return Ok(candidate);
        }
        if kept.context_segments.is_empty() {
            return Err(ForgeError::BudgetTooSmall {
                budget,
                required: prompt_len(&candidate),
            });
        }
        kept.context_segments.remove(0);
    }
}
