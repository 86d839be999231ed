use ldst_corpus::{DialogueState, Schema, SlotValue};

/// A parsed single-return response: always a value, plus a validity flag
/// that is false when the response was empty or unusable.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedValue {
    pub value: SlotValue,
    pub valid: bool,
}

/// A parsed multi-return response: a partial state totalized with NONE,
/// warnings for dropped slot ids, and a validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedState {
    pub state: DialogueState,
    pub valid: bool,
    pub warnings: Vec<String>,
}

fn strip_noise(text: &str) -> &str {
    text.trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '`' | '<' | '>'))
        .trim_end_matches(|c: char| matches!(c, '.' | '!' | ',' | ';' | ':'))
        .trim()
}

/// Parse a single-return response down to one value. Strips quotes,
/// trailing punctuation, and common "the value is …" boilerplate; maps the
/// NONE/not-mentioned family onto [`SlotValue::None`].
pub fn parse_single_return(response: &str) -> ParsedValue {
    let trimmed = response.trim();
    if trimmed.is_empty() {
        return ParsedValue {
            value: SlotValue::None,
            valid: false,
        };
    }
    // Keep the first line; explanations tend to follow a newline.
    let mut text = trimmed.lines().next().unwrap_or("").trim();

    // "So the value of slot <x> is centre" / "The value is centre".
    let lower = text.to_lowercase();
    if lower.starts_with("so the value") || lower.starts_with("the value") {
        if let Some(pos) = text.find(" is ") {
            text = &text[pos + 4..];
        }
    } else if let Some(rest) = lower
        .strip_prefix("value:")
        .or_else(|| lower.strip_prefix("answer:"))
    {
        text = &text[text.len() - rest.len()..];
    }
    let cleaned = strip_noise(text);

    // Leading "NONE." variants: a NONE verdict followed by commentary.
    let lower = cleaned.to_lowercase();
    if lower == "none"
        || lower
            .strip_prefix("none")
            .is_some_and(|rest| rest.starts_with(|c: char| !c.is_alphanumeric()))
    {
        return ParsedValue {
            value: SlotValue::None,
            valid: true,
        };
    }
    ParsedValue {
        value: SlotValue::from_raw(cleaned),
        valid: true,
    }
}

/// Parse a multi-return response into a partial dialogue state. Accepts a
/// JSON object or `Slot-Name: value, …` pair lists; unknown slot ids are
/// dropped with warnings; missing slots stay NONE. A wholly unparseable
/// response yields an all-NONE state flagged invalid.
pub fn parse_multi_return(response: &str, schema: &Schema) -> ParsedState {
    let mut state = DialogueState::new();
    let mut warnings = Vec::new();
    let trimmed = response.trim();
    if trimmed.is_empty() {
        return ParsedState {
            state,
            valid: false,
            warnings,
        };
    }

    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Ok(serde_json::Value::Object(map)) =
        serde_json::from_str::<serde_json::Value>(trimmed)
    {
        for (slot, value) in map {
            let value = match value {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            pairs.push((slot, value));
        }
        // "{}" parses as an empty, valid state.
        return fill_state(pairs, schema, true);
    }

    // Fallback: comma/newline separated "slot: value" pairs.
    for piece in trimmed.split(|c: char| c == ',' || c == '\n' || c == ';') {
        if let Some((slot, value)) = piece.split_once(':') {
            let slot = strip_noise(slot);
            let value = strip_noise(value);
            if !slot.is_empty() && !value.is_empty() {
                pairs.push((slot.to_string(), value.to_string()));
            }
        }
    }
    if pairs.is_empty() {
        warnings.push("no slot:value pairs found".into());
        return ParsedState {
            state,
            valid: false,
            warnings,
        };
    }
    let parsed = fill_state(pairs, schema, true);
    state = parsed.state;
    warnings.extend(parsed.warnings);
    ParsedState {
        state,
        valid: parsed.valid,
        warnings,
    }
}

fn fill_state(pairs: Vec<(String, String)>, schema: &Schema, valid: bool) -> ParsedState {
    let mut state = DialogueState::new();
    let mut warnings = Vec::new();
    for (slot, value) in pairs {
        let slot_id = slot.trim().trim_matches(|c| c == '<' || c == '>').to_lowercase();
        if schema.contains(&slot_id) {
            state.set(&slot_id, SlotValue::from_raw(&value));
        } else {
            warnings.push(format!("dropped unknown slot id `{slot}`"));
        }
    }
    ParsedState {
        state,
        valid,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ldst_corpus::SlotSpec;

    fn schema() -> Schema {
        Schema::new(vec![
            SlotSpec {
                domain: "train".into(),
                name: "departure".into(),
                description: String::new(),
                is_categorical: false,
                possible_values: vec![],
            },
            SlotSpec {
                domain: "train".into(),
                name: "arrival".into(),
                description: String::new(),
                is_categorical: false,
                possible_values: vec![],
            },
            SlotSpec {
                domain: "hotel".into(),
                name: "area".into(),
                description: String::new(),
                is_categorical: true,
                possible_values: vec!["north".into(), "south".into()],
            },
        ])
        .unwrap()
    }

    #[test]
    fn plain_value_passes_through() {
        let parsed = parse_single_return("centre");
        assert_eq!(parsed.value, SlotValue::Literal("centre".into()));
        assert!(parsed.valid);
    }

    #[test]
    fn none_and_variants_map_to_none() {
        for response in ["NONE", "none", "None.", "not mentioned", "NONE. It was never said."] {
            let parsed = parse_single_return(response);
            assert_eq!(parsed.value, SlotValue::None, "response {response:?}");
            assert!(parsed.valid);
        }
    }

    #[test]
    fn boilerplate_is_stripped() {
        for (response, expected) in [
            ("The value is 14:00.", "14:00"),
            ("So the value of slot <train-departure> is Norwich.", "Norwich"),
            ("\"north\"", "north"),
            ("Answer: west", "west"),
            ("value: east", "east"),
            ("centre\nBecause the user asked for the centre.", "centre"),
        ] {
            let parsed = parse_single_return(response);
            assert_eq!(
                parsed.value,
                SlotValue::Literal(expected.into()),
                "response {response:?}"
            );
        }
    }

    #[test]
    fn empty_response_is_flagged() {
        let parsed = parse_single_return("   ");
        assert_eq!(parsed.value, SlotValue::None);
        assert!(!parsed.valid);
    }

    #[test]
    fn dontcare_is_recognized() {
        assert_eq!(parse_single_return("dontcare").value, SlotValue::DontCare);
    }

    #[test]
    fn multi_return_dict_format() {
        let parsed = parse_multi_return(
            "Train-Departure: Norwich, Train-Arrival: Cambridge",
            &schema(),
        );
        assert!(parsed.valid);
        assert!(parsed.warnings.is_empty());
        assert_eq!(
            parsed.state.get("train-departure"),
            &SlotValue::Literal("Norwich".into())
        );
        assert_eq!(
            parsed.state.get("train-arrival"),
            &SlotValue::Literal("Cambridge".into())
        );
        assert_eq!(parsed.state.get("hotel-area"), &SlotValue::None);
    }

    #[test]
    fn multi_return_json_format() {
        let parsed = parse_multi_return(r#"{"train-departure": "Norwich"}"#, &schema());
        assert!(parsed.valid);
        assert_eq!(
            parsed.state.get("train-departure"),
            &SlotValue::Literal("Norwich".into())
        );
    }

    #[test]
    fn empty_dict_is_all_none_and_valid() {
        let parsed = parse_multi_return("{}", &schema());
        assert!(parsed.valid);
        assert_eq!(parsed.state.n_set(), 0);
    }

    #[test]
    fn unknown_ids_drop_with_warning() {
        let parsed = parse_multi_return(
            "Train-Departure: Norwich, Spaceship-Fuel: full, Hotel-Area: north",
            &schema(),
        );
        assert!(parsed.valid);
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(parsed.state.n_set(), 2);
    }

    #[test]
    fn unparseable_response_is_all_none_invalid() {
        let parsed = parse_multi_return("I could not find anything useful", &schema());
        assert!(!parsed.valid);
        assert_eq!(parsed.state.n_set(), 0);
    }
}
