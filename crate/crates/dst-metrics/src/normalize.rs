use ldst_corpus::SlotValue;
use serde::{Deserialize, Serialize};

/// How literal values are compared.
///
/// `Exact` lowercases and trims, nothing more. `Relaxed` additionally maps
/// 12-hour clock times to 24-hour form and collapses internal whitespace,
/// for remote-model outputs that re-render times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    #[default]
    Exact,
    Relaxed,
}

/// Canonicalize a value string under the given policy.
pub fn normalize_value(text: &str, policy: MatchPolicy) -> String {
    let lowered = text.trim().to_lowercase();
    match policy {
        MatchPolicy::Exact => lowered,
        MatchPolicy::Relaxed => {
            let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
            normalize_clock(&collapsed)
        }
    }
}

/// Rewrite `"2 pm"` / `"2:30pm"` style times as `"14:00"` / `"14:30"`.
/// Leaves anything that is not a 12-hour clock expression untouched.
fn normalize_clock(text: &str) -> String {
    let (body, is_pm) = if let Some(stripped) = strip_meridiem(text, "pm") {
        (stripped, true)
    } else if let Some(stripped) = strip_meridiem(text, "am") {
        (stripped, false)
    } else {
        return text.to_string();
    };
    let (hour_text, minute_text) = match body.split_once(':') {
        Some((h, m)) => (h, m),
        None => (body, "00"),
    };
    let (Ok(hour), Ok(minute)) = (hour_text.parse::<u32>(), minute_text.parse::<u32>()) else {
        return text.to_string();
    };
    if hour == 0 || hour > 12 || minute > 59 {
        return text.to_string();
    }
    let hour24 = match (hour, is_pm) {
        (12, false) => 0,
        (12, true) => 12,
        (h, true) => h + 12,
        (h, false) => h,
    };
    format!("{hour24:02}:{minute:02}")
}

fn strip_meridiem<'a>(text: &'a str, suffix: &str) -> Option<&'a str> {
    let stripped = text.strip_suffix(suffix)?;
    let stripped = stripped.trim_end();
    (!stripped.is_empty() && stripped.chars().all(|c| c.is_ascii_digit() || c == ':'))
        .then_some(stripped)
}

/// Compare a prediction against gold under the policy. The special values
/// compare by kind; literals compare by normalized text.
pub fn values_match(pred: &SlotValue, gold: &SlotValue, policy: MatchPolicy) -> bool {
    match (pred, gold) {
        (SlotValue::None, SlotValue::None) => true,
        (SlotValue::DontCare, SlotValue::DontCare) => true,
        (SlotValue::Literal(a), SlotValue::Literal(b)) => {
            normalize_value(a, policy) == normalize_value(b, policy)
        }
        _ => false,
    }
}
