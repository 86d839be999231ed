use serde::{Deserialize, Serialize};

use ldst_corpus::{Schema, SlotSpec};

use crate::error::ForgeError;

/// The four chat-prompt shapes: one slot or the full schema per request,
/// with or without a worked demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemotePromptMode {
    SingleNoDemo,
    MultiNoDemo,
    SingleOneDemo,
    MultiOneDemo,
}

impl RemotePromptMode {
    pub fn is_single(&self) -> bool {
        matches!(self, Self::SingleNoDemo | Self::SingleOneDemo)
    }

    pub fn needs_demo(&self) -> bool {
        matches!(self, Self::SingleOneDemo | Self::MultiOneDemo)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SingleNoDemo => "single_no_demo",
            Self::MultiNoDemo => "multi_no_demo",
            Self::SingleOneDemo => "single_one_demo",
            Self::MultiOneDemo => "multi_one_demo",
        }
    }
}

/// What the prompt asks about: one slot or the whole schema.
#[derive(Debug, Clone, Copy)]
pub enum RemoteQuery<'a> {
    Slot(&'a SlotSpec),
    AllSlots(&'a Schema),
}

/// The fixed demonstration used by the one-demo modes. Configurable; the
/// default ships with the toolkit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoExemplar {
    pub dialogue: String,
    pub slot_id: String,
    pub value: String,
    pub multi_output: String,
}

impl Default for DemoExemplar {
    fn default() -> Self {
        DemoExemplar {
            dialogue: "[User]: I need train reservations from norwich to cambridge \
                       [SYSTEM]: I have 133 trains matching your request."
                .into(),
            slot_id: "train-departure".into(),
            value: "Norwich".into(),
            multi_output: "Train-Departure: Norwich, Train-Arrival: Cambridge".into(),
        }
    }
}

fn slot_tail(slot: &SlotSpec) -> String {
    let mut tail = format!(
        "[domain] {} [slot] {}, it indicates {}.",
        slot.domain, slot.name, slot.description
    );
    if slot.is_categorical {
        tail.push_str(&format!(
            " This slot is categorical and you can only choose from the following available values: {}.",
            slot.possible_values.join(", ")
        ));
    }
    tail.push_str(&format!(
        " If the slot is not mentioned in the dialogue, just return NONE. So the value of slot <{}> is",
        slot.display_id()
    ));
    tail
}

fn slot_list(schema: &Schema) -> String {
    schema
        .slots()
        .iter()
        .map(SlotSpec::display_id)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Render one of the four remote prompt shapes over a dialogue context.
/// Returns the full request text (instruction and input joined).
pub fn remote_prompt(
    mode: RemotePromptMode,
    context: &str,
    query: RemoteQuery<'_>,
    demo: Option<&DemoExemplar>,
) -> Result<String, ForgeError> {
    let mismatch = |expected: &'static str, got: &'static str| ForgeError::SlotScopeMismatch {
        mode: mode.as_str().into(),
        expected,
        got,
    };
    if mode.needs_demo() && demo.is_none() {
        return Err(ForgeError::MissingDemo(mode.as_str().into()));
    }
    match (mode, query) {
        (RemotePromptMode::SingleNoDemo, RemoteQuery::Slot(slot)) => Ok(format!(
            "Now you need to perform the task of multi-domain dialogue state tracking. \
             You need to return the value of the slot I'm asking about simply based on the \
             content of the dialogue. No explanation!\n\
             Input dialogue: {context} {}",
            slot_tail(slot)
        )),
        (RemotePromptMode::MultiNoDemo, RemoteQuery::AllSlots(schema)) => {
            let list = slot_list(schema);
            Ok(format!(
                "Now you need to perform the task of dialogue state tracking. And the slot \
                 schema is in this list [{list}], which is in a domain-slot format. You need \
                 to return the slot and its value in dict format if the value is not none, \
                 and no explanation!\n\
                 Input dialogue: {context} Please return the value of slot list [{list}]."
            ))
        }
        (RemotePromptMode::SingleOneDemo, RemoteQuery::Slot(slot)) => {
            let demo = demo.expect("checked above");
            Ok(format!(
                "Now you need to perform the task of multi-domain dialogue state tracking. \
                 And I will show you an example and you need to return to the state of the \
                 slot I asked about.\n\
                 The example is: Input dialogue: {} So the value of slot <{}> is \
                 And your result should be {}. \
                 The following is the dialogue you need to test: \
                 Input dialogue: {context} {}",
                demo.dialogue,
                demo.slot_id,
                demo.value,
                slot_tail(slot)
            ))
        }
        (RemotePromptMode::MultiOneDemo, RemoteQuery::AllSlots(schema)) => {
            let demo = demo.expect("checked above");
            let list = slot_list(schema);
            Ok(format!(
                "Now you need to perform the task of multi-domain dialogue state tracking. \
                 And I will show you an example and you need to return the answer strictly \
                 in the format of the example.\n\
                 The example is: Input dialogue: {} Output result: {} \
                 And you need to test this example: \
                 Input dialogue: {context} Please return the value of slot list [{list}].",
                demo.dialogue, demo.multi_output
            ))
        }
        (mode, RemoteQuery::Slot(_)) if !mode.is_single() => {
            Err(mismatch("the full schema", "one slot"))
        }
        (_, RemoteQuery::Slot(_)) => unreachable!("single modes with one slot are handled"),
        (_, RemoteQuery::AllSlots(_)) => Err(mismatch("exactly one slot", "the full schema")),
    }
}
