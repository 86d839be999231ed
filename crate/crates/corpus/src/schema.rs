use std::collections::BTreeSet;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::CorpusError;

/// One tracked slot: a domain-qualified attribute, optionally categorical
/// with an enumerated possible-value list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub domain: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub is_categorical: bool,
    /// Non-empty iff `is_categorical`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub possible_values: Vec<String>,
}

impl SlotSpec {
    /// Canonical slot id: lowercase `domain-name`, single hyphen join.
    pub fn slot_id(&self) -> String {
        format!("{}-{}", self.domain, self.name).to_lowercase()
    }

    /// Display form preserving the source casing, e.g. `Hotels_2-number_of_adults`.
    pub fn display_id(&self) -> String {
        format!("{}-{}", self.domain, self.name)
    }
}

/// The predefined, ordered slot set. Slot order is stable and defines the
/// iteration order everywhere downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    slots: Vec<SlotSpec>,
}

impl Schema {
    /// Validate and build a schema from an ordered slot list.
    pub fn new(slots: Vec<SlotSpec>) -> Result<Self, CorpusError> {
        if slots.is_empty() {
            return Err(CorpusError::EmptySchema);
        }
        let mut seen: HashMap<String, (String, String)> = HashMap::new();
        for slot in &slots {
            let id = slot.slot_id();
            if slot.is_categorical && slot.possible_values.is_empty() {
                return Err(CorpusError::EmptyPossibleValues(id));
            }
            if !slot.is_categorical && !slot.possible_values.is_empty() {
                return Err(CorpusError::UnexpectedPossibleValues(id));
            }
            if let Some((domain, name)) = seen.get(&id) {
                if domain == &slot.domain && name == &slot.name {
                    return Err(CorpusError::DuplicateSlot(id));
                }
                return Err(CorpusError::SlotIdCollision {
                    id,
                    first: format!("{}/{}", domain, name),
                    second: format!("{}/{}", slot.domain, slot.name),
                });
            }
            seen.insert(id, (slot.domain.clone(), slot.name.clone()));
        }
        Ok(Schema { slots })
    }

    /// Slots in schema order.
    pub fn slots(&self) -> &[SlotSpec] {
        &self.slots
    }

    /// Number of slots (`J`).
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Canonical slot ids in schema order.
    pub fn slot_ids(&self) -> Vec<String> {
        self.slots.iter().map(SlotSpec::slot_id).collect()
    }

    pub fn slot(&self, slot_id: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.slot_id() == slot_id)
    }

    pub fn contains(&self, slot_id: &str) -> bool {
        self.slot(slot_id).is_some()
    }

    /// The distinct domains, lowercased, in sorted order.
    pub fn domains(&self) -> BTreeSet<String> {
        self.slots.iter().map(|s| s.domain.to_lowercase()).collect()
    }
}

#[derive(Debug, Deserialize)]
struct SchemaDoc {
    services: Vec<ServiceDoc>,
}

#[derive(Debug, Deserialize)]
struct ServiceDoc {
    service_name: String,
    #[serde(default)]
    slots: Vec<SlotDoc>,
}

#[derive(Debug, Deserialize)]
struct SlotDoc {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    is_categorical: bool,
    #[serde(default)]
    possible_values: Vec<String>,
}

/// Parse a canonical schema document: one JSON object listing services,
/// each with its ordered slot list.
pub fn load_schema(document: &str) -> Result<Schema, CorpusError> {
    let doc: SchemaDoc =
        serde_json::from_str(document).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    let mut slots = Vec::new();
    for service in doc.services {
        for slot in service.slots {
            slots.push(SlotSpec {
                domain: service.service_name.clone(),
                name: slot.name,
                description: slot.description,
                is_categorical: slot.is_categorical,
                possible_values: slot.possible_values,
            });
        }
    }
    Schema::new(slots)
}

/// Serialize a schema back to the canonical document shape.
pub fn schema_to_document(schema: &Schema) -> String {
    #[derive(Serialize)]
    struct ServiceOut<'a> {
        service_name: &'a str,
        slots: Vec<SlotOut<'a>>,
    }
    #[derive(Serialize)]
    struct SlotOut<'a> {
        name: &'a str,
        description: &'a str,
        is_categorical: bool,
        #[serde(skip_serializing_if = "Vec::is_empty")]
        possible_values: Vec<&'a str>,
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        services: Vec<ServiceOut<'a>>,
    }

    let mut services: Vec<ServiceOut> = Vec::new();
    for slot in schema.slots() {
        let entry = SlotOut {
            name: &slot.name,
            description: &slot.description,
            is_categorical: slot.is_categorical,
            possible_values: slot.possible_values.iter().map(String::as_str).collect(),
        };
        match services.last_mut() {
            Some(service) if service.service_name == slot.domain => service.slots.push(entry),
            _ => services.push(ServiceOut {
                service_name: &slot.domain,
                slots: vec![entry],
            }),
        }
    }
    serde_json::to_string_pretty(&Doc { services }).expect("schema serialization is infallible")
}
