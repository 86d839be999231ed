use std::path::Path;

use serde::{Deserialize, Serialize};

use ldst_corpus::SlotSpec;

use crate::error::ForgeError;

/// Special segment tokens used when concatenating prompt sub-sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentTokens {
    pub system: String,
    pub user: String,
    pub domain: String,
    pub slot: String,
    pub pvl: String,
}

impl Default for SegmentTokens {
    fn default() -> Self {
        SegmentTokens {
            system: "[SYSTEM]".into(),
            user: "[USER]".into(),
            domain: "[domain]".into(),
            slot: "[slot]".into(),
            pvl: "[Possible Values]".into(),
        }
    }
}

/// The editable template texts behind sample assembly.
///
/// Placeholders: `{domain}`, `{slot}`, `{slot_id}`, `{description}`,
/// `{values}`. A default set ships in-repo under `templates/`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub standard_instruction: String,
    pub customized_instruction: String,
    pub description_section: String,
    pub pvl_section: String,
    pub query_section: String,
    pub segment_tokens: SegmentTokens,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            standard_instruction: include_str!("../templates/standard_instruction.txt")
                .trim_end()
                .to_string(),
            customized_instruction: include_str!("../templates/customized_instruction.txt")
                .trim_end()
                .to_string(),
            description_section: include_str!("../templates/description_section.txt")
                .trim_end()
                .to_string(),
            pvl_section: include_str!("../templates/pvl_section.txt").trim_end().to_string(),
            query_section: include_str!("../templates/query_section.txt")
                .trim_end()
                .to_string(),
            segment_tokens: SegmentTokens::default(),
        }
    }
}

fn fill(template: &str, slot: &SlotSpec) -> String {
    template
        .replace("{domain}", &slot.domain)
        .replace("{slot}", &slot.name)
        .replace("{slot_id}", &slot.slot_id())
        .replace("{description}", &slot.description)
        .replace("{values}", &slot.possible_values.join(", "))
}

/// Find a `{name}`-shaped marker that survived substitution.
fn leftover_placeholder(rendered: &str) -> Option<String> {
    let bytes = rendered.as_bytes();
    let mut start = None;
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'{' => start = Some(i),
            b'}' => {
                if let Some(s) = start.take() {
                    let inner = &rendered[s + 1..i];
                    if !inner.is_empty()
                        && inner.bytes().all(|c| c.is_ascii_lowercase() || c == b'_')
                    {
                        return Some(format!("{{{inner}}}"));
                    }
                }
            }
            _ => {}
        }
    }
    None
}

impl TemplateSet {
    /// Load a template set from a directory of plain-text files, falling
    /// back to the in-repo default for any missing file.
    pub fn load_dir(dir: &Path) -> Result<Self, ForgeError> {
        let mut set = TemplateSet::default();
        let read = |file: &str, target: &mut String| -> Result<(), ForgeError> {
            let path = dir.join(file);
            if path.exists() {
                *target = std::fs::read_to_string(&path)?.trim_end().to_string();
            }
            Ok(())
        };
        read("standard_instruction.txt", &mut set.standard_instruction)?;
        read("customized_instruction.txt", &mut set.customized_instruction)?;
        read("description_section.txt", &mut set.description_section)?;
        read("pvl_section.txt", &mut set.pvl_section)?;
        read("query_section.txt", &mut set.query_section)?;
        let tokens = dir.join("segment_tokens.json");
        if tokens.exists() {
            set.segment_tokens = serde_json::from_str(&std::fs::read_to_string(&tokens)?)
                .map_err(|e| ForgeError::Malformed(e.to_string()))?;
        }
        set.validate()?;
        Ok(set)
    }

    /// Check every template renders without unresolved placeholders.
    pub fn validate(&self) -> Result<(), ForgeError> {
        let probe = SlotSpec {
            domain: "probe".into(),
            name: "slot".into(),
            description: "probe description".into(),
            is_categorical: true,
            possible_values: vec!["a".into(), "b".into()],
        };
        for (name, template) in [
            ("standard_instruction", &self.standard_instruction),
            ("customized_instruction", &self.customized_instruction),
            ("description_section", &self.description_section),
            ("pvl_section", &self.pvl_section),
            ("query_section", &self.query_section),
        ] {
            let rendered = fill(template, &probe);
            if let Some(placeholder) = leftover_placeholder(&rendered) {
                return Err(ForgeError::UnresolvedPlaceholder {
                    name: name.into(),
                    placeholder,
                });
            }
        }
        Ok(())
    }

    pub fn render_standard_instruction(&self, slot: &SlotSpec) -> String {
        fill(&self.standard_instruction, slot)
    }

    pub fn render_customized_instruction(&self, slot: &SlotSpec) -> String {
        fill(&self.customized_instruction, slot)
    }

    pub fn render_description(&self, slot: &SlotSpec) -> String {
        fill(&self.description_section, slot)
    }

    pub fn render_pvl(&self, slot: &SlotSpec) -> String {
        fill(&self.pvl_section, slot)
    }

    pub fn render_query(&self, slot: &SlotSpec) -> String {
        fill(&self.query_section, slot)
    }

    /// The six test-time prompt variants used by the sensitivity sweep.
    pub fn test_variants() -> Vec<(String, TemplateSet)> {
        let base = TemplateSet::default();
        let queries = [
            ("p1", "So the value of slot <{slot_id}> is"),
            ("p2", "What is the value of slot <{slot_id}>? Answer:"),
            ("p3", "Please state the value of slot <{slot_id}>:"),
            ("p4", "The value of slot <{slot_id}> is"),
            ("p5", "Give the current value of slot <{slot_id}>:"),
            ("p6", "Return the value of slot <{slot_id}>. Value:"),
        ];
        queries
            .iter()
            .map(|(name, query)| {
                let mut set = base.clone();
                set.query_section = query.to_string();
                (name.to_string(), set)
            })
            .collect()
    }
}
