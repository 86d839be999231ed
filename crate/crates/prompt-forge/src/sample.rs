use serde::{Deserialize, Serialize};

use crate::error::ForgeError;
use crate::templates::TemplateSet;

/// Which instruction wording a sample drew.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionTemplate {
    Standard,
    Customized,
}

/// Per-sample audit trail: identity plus the coin outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub slot_id: String,
    pub included_description: bool,
    pub included_pvl: bool,
    pub instruction_template: InstructionTemplate,
}

/// The sections the input field was assembled from, kept so truncation can
/// drop old turns without string surgery. Not part of the file format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleParts {
    /// One rendered segment per turn, e.g. `"[SYSTEM] … [USER] …"`.
    pub context_segments: Vec<String>,
    pub description: Option<String>,
    pub pvl: Option<String>,
    pub query: String,
}

impl SampleParts {
    /// Rebuild the flat input text: context ∥ description ∥ PVL ∥ query.
    pub fn render(&self) -> String {
        let mut pieces: Vec<&str> = self.context_segments.iter().map(String::as_str).collect();
        if let Some(description) = &self.description {
            pieces.push(description);
        }
        if let Some(pvl) = &self.pvl {
            pieces.push(pvl);
        }
        pieces.push(&self.query);
        pieces.join(" ")
    }
}

/// An instruction/input/output triple plus meta.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub meta: SampleMeta,
    #[serde(skip)]
    pub parts: Option<SampleParts>,
}

impl InstructionSample {
    /// The text the decoder conditions on: instruction and input joined.
    pub fn prompt(&self) -> String {
        format!("{}\n{}", self.instruction, self.input)
    }

    /// Recover section structure from the flat `input` by scanning for the
    /// template set's segment tokens and query prefix. Needed only for
    /// samples read back from a dataset file; freshly assembled samples
    /// carry their parts already.
    pub fn reparse_parts(&mut self, templates: &TemplateSet) -> Result<(), ForgeError> {
        if self.parts.is_some() {
            return Ok(());
        }
        let tokens = &templates.segment_tokens;
        let input = self.input.as_str();

        // Locate the query by the literal text before its first placeholder.
        let query_prefix = templates.query_section.split('{').next().unwrap_or("");
        if query_prefix.trim().is_empty() {
            return Err(ForgeError::Malformed(
                "query template has no literal prefix to search for".into(),
            ));
        }
        let query_start = input.rfind(query_prefix).ok_or_else(|| {
            ForgeError::Malformed(format!(
                "input does not contain the query prompt (looked for `{query_prefix}`)"
            ))
        })?;

        let description_start = input[..query_start].find(tokens.domain.as_str());
        let pvl_start = input[..query_start].find(tokens.pvl.as_str());
        let context_end = [description_start, pvl_start, Some(query_start)]
            .into_iter()
            .flatten()
            .min()
            .unwrap_or(query_start);

        let description = description_start.map(|s| {
            let end = pvl_start.filter(|p| *p > s).unwrap_or(query_start);
            input[s..end].trim_end().to_string()
        });
        let pvl = pvl_start.map(|s| input[s..query_start].trim_end().to_string());
        let query = input[query_start..].to_string();

        // Group the context into per-turn segments: a system token opens a
        // new turn; a user token opens one only when the current segment
        // already holds a user utterance (turn-1 system may be absent).
        let context = input[..context_end].trim_end();
        let mut boundaries: Vec<(usize, bool)> = Vec::new();
        for (pos, _) in context.match_indices(tokens.system.as_str()) {
            boundaries.push((pos, true));
        }
        for (pos, _) in context.match_indices(tokens.user.as_str()) {
            boundaries.push((pos, false));
        }
        boundaries.sort_unstable();
        let mut context_segments: Vec<String> = Vec::new();
        let mut turn_start: Option<usize> = None;
        let mut has_user = false;
        for (pos, is_system) in boundaries {
            let opens_turn = is_system || has_user;
            if opens_turn {
                if let Some(start) = turn_start {
                    context_segments.push(context[start..pos].trim_end().to_string());
                }
                turn_start = Some(pos);
                has_user = false;
            }
            if !is_system {
                has_user = true;
            }
        }
        if let Some(start) = turn_start {
            context_segments.push(context[start..].trim_end().to_string());
        }

        self.parts = Some(SampleParts {
            context_segments,
            description,
            pvl,
            query,
        });
        Ok(())
    }
}

/// Serialize samples as line-delimited JSON with canonical field order and
/// `\n` endings, bit-exact across platforms.
pub fn dataset_to_jsonl(samples: &[InstructionSample]) -> String {
    let mut out = String::new();
    for sample in samples {
        out.push_str(&serde_json::to_string(sample).expect("sample serialization is infallible"));
        out.push('\n');
    }
    out
}

/// Parse a line-delimited instruction dataset.
pub fn dataset_from_jsonl(text: &str) -> Result<Vec<InstructionSample>, ForgeError> {
    let mut samples = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: InstructionSample = serde_json::from_str(line)
            .map_err(|e| ForgeError::Malformed(format!("line {}: {}", line_no + 1, e)))?;
        samples.push(sample);
    }
    Ok(samples)
}
