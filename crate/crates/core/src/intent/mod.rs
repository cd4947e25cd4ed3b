//! Generation intents: descriptors, transformations and qualifiers.
//!
//! A request is split into the components that condition an output
//! (descriptors), the components that modify them (transformations) and the
//! components that constrain the output's use (qualifiers). Only *specific*
//! components name rights-bearing entities and therefore need consent.

mod document;
mod grammar;
mod roles;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canonical::Digest;
use crate::time::Timestamp;

pub use document::{parse_structured_intent, to_document, DocumentError, INTENT_DOCUMENT_VERSION};
pub use grammar::{parse_text_prompt, Attachment, ParseError};
pub use roles::{
    classify_reference_role, combination_class, extract_entity_refs, CombinationClass, ExtractedRef,
    Role,
};
pub use validate::{validate_intent, validate_intent_with, Violation, Vocabulary, DISTRIBUTION_TERMS, PURPOSE_TERMS};

/// The facet of an entity a request uses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aspect {
    Whole,
    Voice,
    Style,
    Likeness,
    Lyrics,
    Melody,
    Beat,
    Rhythm,
    Harmony,
    Composition,
    Recording,
    /// An isolated instrument track, e.g. `stem:guitar`.
    Stem(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown aspect `{0}`")]
pub struct UnknownAspect(pub String);

impl Aspect {
    pub const CORE: [Aspect; 11] = [
        Aspect::Whole,
        Aspect::Voice,
        Aspect::Style,
        Aspect::Likeness,
        Aspect::Lyrics,
        Aspect::Melody,
        Aspect::Beat,
        Aspect::Rhythm,
        Aspect::Harmony,
        Aspect::Composition,
        Aspect::Recording,
    ];

    pub fn stem(label: &str) -> Result<Self, UnknownAspect> {
        if label.is_empty() || label.chars().any(|c| c.is_uppercase() || c.is_whitespace()) {
            return Err(UnknownAspect(format!("stem:{label}")));
        }
        Ok(Aspect::Stem(label.to_string()))
    }

    /// Aspects that belong to a person's identity rather than to a work.
    pub fn is_personal(&self) -> bool {
        matches!(self, Aspect::Voice | Aspect::Style | Aspect::Likeness)
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Aspect::Whole => "whole",
            Aspect::Voice => "voice",
            Aspect::Style => "style",
            Aspect::Likeness => "likeness",
            Aspect::Lyrics => "lyrics",
            Aspect::Melody => "melody",
            Aspect::Beat => "beat",
            Aspect::Rhythm => "rhythm",
            Aspect::Harmony => "harmony",
            Aspect::Composition => "composition",
            Aspect::Recording => "recording",
            Aspect::Stem(label) => return write!(f, "stem:{label}"),
        };
        f.write_str(s)
    }
}

impl FromStr for Aspect {
    type Err = UnknownAspect;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(label) = s.strip_prefix("stem:") {
            return Aspect::stem(label);
        }
        Aspect::CORE
            .iter()
            .find(|a| a.to_string() == s)
            .cloned()
            .ok_or_else(|| UnknownAspect(s.to_string()))
    }
}

impl Serialize for Aspect {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Aspect {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Person,
    Group,
    Work,
    WorkPart,
}

impl EntityType {
    pub fn is_work(self) -> bool {
        matches!(self, EntityType::Work | EntityType::WorkPart)
    }
}

/// A reference to a unique entity as the user wrote it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub entity_type: EntityType,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_id: Option<String>,
}

impl EntityRef {
    pub fn new(entity_type: EntityType, name: impl Into<String>) -> Self {
        EntityRef { entity_type, name: name.into(), resolved_id: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    Generic,
    Specific,
    Original,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Descriptor {
    pub kind: DescriptorKind,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub entity_ref: Option<EntityRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub aspect: Aspect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_digest: Option<Digest>,
}

impl Descriptor {
    pub fn specific(entity_ref: EntityRef, aspect: Aspect) -> Self {
        Descriptor { kind: DescriptorKind::Specific, entity_ref: Some(entity_ref), category: None, aspect, payload_digest: None }
    }

    pub fn generic(category: impl Into<String>, aspect: Aspect) -> Self {
        Descriptor { kind: DescriptorKind::Generic, entity_ref: None, category: Some(category.into()), aspect, payload_digest: None }
    }

    pub fn original(payload_digest: Digest, aspect: Aspect) -> Self {
        Descriptor { kind: DescriptorKind::Original, entity_ref: None, category: None, aspect, payload_digest: Some(payload_digest) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformationKind {
    Generic,
    Specific,
    Foundational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transformation {
    pub kind: TransformationKind,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub entity_ref: Option<EntityRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_text: Option<String>,
    pub aspect: Aspect,
    /// Descriptor indices this transformation modifies; empty means all.
    #[serde(default)]
    pub applies_to: Vec<usize>,
}

impl Transformation {
    pub fn specific(entity_ref: EntityRef, aspect: Aspect) -> Self {
        Transformation {
            kind: TransformationKind::Specific,
            entity_ref: Some(entity_ref),
            category: None,
            rule_text: None,
            aspect,
            applies_to: Vec::new(),
        }
    }

    pub fn generic(category: impl Into<String>, aspect: Aspect) -> Self {
        Transformation {
            kind: TransformationKind::Generic,
            entity_ref: None,
            category: Some(category.into()),
            rule_text: None,
            aspect,
            applies_to: Vec::new(),
        }
    }

    pub fn foundational(rule_text: impl Into<String>, aspect: Aspect) -> Self {
        Transformation {
            kind: TransformationKind::Foundational,
            entity_ref: None,
            category: None,
            rule_text: Some(rule_text.into()),
            aspect,
            applies_to: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualifierKind {
    Quality,
    Distribution,
    Purpose,
}

impl fmt::Display for QualifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QualifierKind::Quality => "quality",
            QualifierKind::Distribution => "distribution",
            QualifierKind::Purpose => "purpose",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QualifierValue {
    Number(f64),
    Text(String),
}

// Numbers in intents come from parsed text or JSON and are never NaN.
impl Eq for QualifierValue {}

impl QualifierValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            QualifierValue::Number(n) => Some(*n),
            QualifierValue::Text(_) => None,
        }
    }

    /// Lowercased text form used for vocabulary comparisons.
    pub fn normalized(&self) -> String {
        match self {
            QualifierValue::Number(n) => n.to_string(),
            QualifierValue::Text(t) => t.trim().to_lowercase(),
        }
    }
}

impl fmt::Display for QualifierValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QualifierValue::Number(n) => write!(f, "{n}"),
            QualifierValue::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qualifier {
    pub kind: QualifierKind,
    pub key: String,
    pub value: QualifierValue,
}

impl Qualifier {
    pub fn quality(key: impl Into<String>, value: QualifierValue) -> Self {
        Qualifier { kind: QualifierKind::Quality, key: key.into(), value }
    }

    pub fn distribution(platform: impl Into<String>) -> Self {
        Qualifier { kind: QualifierKind::Distribution, key: "platform".into(), value: QualifierValue::Text(platform.into()) }
    }

    pub fn purpose(purpose: impl Into<String>) -> Self {
        Qualifier { kind: QualifierKind::Purpose, key: "use".into(), value: QualifierValue::Text(purpose.into()) }
    }
}

/// A parsed generation request.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IntentRequest {
    pub descriptors: Vec<Descriptor>,
    pub transformations: Vec<Transformation>,
    pub qualifiers: Vec<Qualifier>,
    pub raw_input: Option<String>,
    pub received_at: Timestamp,
}

/// Addresses one component of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "component", content = "index", rename_all = "snake_case")]
pub enum ComponentId {
    Descriptor(usize),
    Transformation(usize),
    Qualifier(usize),
}

impl IntentRequest {
    pub fn specific_components(&self) -> impl Iterator<Item = (ComponentId, &EntityRef, &Aspect)> {
        let ds = self.descriptors.iter().enumerate().filter_map(|(i, d)| match (d.kind, &d.entity_ref) {
            (DescriptorKind::Specific, Some(r)) => Some((ComponentId::Descriptor(i), r, &d.aspect)),
            _ => None,
        });
        let ts = self.transformations.iter().enumerate().filter_map(|(i, t)| match (t.kind, &t.entity_ref) {
            (TransformationKind::Specific, Some(r)) => Some((ComponentId::Transformation(i), r, &t.aspect)),
            _ => None,
        });
        ds.chain(ts)
    }

    pub fn entity_ref_mut(&mut self, id: ComponentId) -> Option<&mut EntityRef> {
        match id {
            ComponentId::Descriptor(i) => self.descriptors.get_mut(i)?.entity_ref.as_mut(),
            ComponentId::Transformation(i) => self.transformations.get_mut(i)?.entity_ref.as_mut(),
            ComponentId::Qualifier(_) => None,
        }
    }

    pub fn qualifiers_of(&self, kind: QualifierKind) -> impl Iterator<Item = &Qualifier> {
        self.qualifiers.iter().filter(move |q| q.kind == kind)
    }

    /// Digest of the canonical intent document.
    pub fn digest(&self) -> Digest {
        crate::canonical::digest_of(&to_document(self)).expect("intent documents always serialize")
    }
}
