use std::collections::BTreeSet;

use serde::Serialize;

use super::{ComponentId, DescriptorKind, IntentRequest, QualifierKind, TransformationKind};

/// Controlled vocabulary for distribution and purpose qualifier values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub distribution: BTreeSet<String>,
    pub purpose: BTreeSet<String>,
}

pub const DISTRIBUTION_TERMS: &[&str] = &[
    "instagram", "tiktok", "youtube", "spotify", "soundcloud", "bandcamp", "facebook", "x", "twitch",
    "radio", "broadcast", "web", "private",
];

pub const PURPOSE_TERMS: &[&str] = &[
    "commercial", "non_commercial", "personal", "social_sharing", "advertising", "education", "research",
    "parody", "archival",
];

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            distribution: DISTRIBUTION_TERMS.iter().map(|s| s.to_string()).collect(),
            purpose: PURPOSE_TERMS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Vocabulary {
    pub fn with_distribution(mut self, term: &str) -> Self {
        self.distribution.insert(term.to_lowercase());
        self
    }

    pub fn with_purpose(mut self, term: &str) -> Self {
        self.purpose.insert(term.to_lowercase());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Violation {
    MissingDescriptor,
    MissingEntityRef { component: ComponentId },
    UnexpectedEntityRef { component: ComponentId },
    EmptyEntityName { component: ComponentId },
    MissingCategory { component: ComponentId },
    MissingPayloadDigest { component: ComponentId },
    UnexpectedPayloadDigest { component: ComponentId },
    MissingRuleText { component: ComponentId },
    AppliesToOutOfRange { component: ComponentId, index: usize },
    EmptyQualifierKey { component: ComponentId },
    UnknownVocabularyTerm { component: ComponentId, kind: QualifierKind, value: String },
    DuplicateComponent { first: ComponentId, second: ComponentId },
}

pub fn validate_intent(request: &IntentRequest) -> Vec<Violation> {
    validate_intent_with(request, &Vocabulary::default())
}

pub fn validate_intent_with(request: &IntentRequest, vocabulary: &Vocabulary) -> Vec<Violation> {
    let mut out = Vec::new();
    if request.descriptors.is_empty() {
        out.push(Violation::MissingDescriptor);
    }

    for (i, d) in request.descriptors.iter().enumerate() {
        let component = ComponentId::Descriptor(i);
        match d.kind {
            DescriptorKind::Specific => {
                if d.entity_ref.is_none() {
                    out.push(Violation::MissingEntityRef { component });
                }
            }
            DescriptorKind::Generic => {
                if d.category.as_deref().is_none_or(|c| c.trim().is_empty()) {
                    out.push(Violation::MissingCategory { component });
                }
            }
            DescriptorKind::Original => {
                if d.payload_digest.is_none() {
                    out.push(Violation::MissingPayloadDigest { component });
                }
            }
        }
        if d.kind != DescriptorKind::Specific && d.entity_ref.is_some() {
            out.push(Violation::UnexpectedEntityRef { component });
        }
        if d.kind != DescriptorKind::Original && d.payload_digest.is_some() {
            out.push(Violation::UnexpectedPayloadDigest { component });
        }
        if d.entity_ref.as_ref().is_some_and(|r| r.name.trim().is_empty()) {
            out.push(Violation::EmptyEntityName { component });
        }
    }

    for (i, t) in request.transformations.iter().enumerate() {
        let component = ComponentId::Transformation(i);
        match t.kind {
            TransformationKind::Specific => {
                if t.entity_ref.is_none() {
                    out.push(Violation::MissingEntityRef { component });
                }
            }
            TransformationKind::Generic => {
                if t.category.as_deref().is_none_or(|c| c.trim().is_empty()) {
                    out.push(Violation::MissingCategory { component });
                }
            }
            TransformationKind::Foundational => {
                if t.rule_text.as_deref().is_none_or(|c| c.trim().is_empty()) {
                    out.push(Violation::MissingRuleText { component });
                }
            }
        }
        if t.kind != TransformationKind::Specific && t.entity_ref.is_some() {
            out.push(Violation::UnexpectedEntityRef { component });
        }
        if t.entity_ref.as_ref().is_some_and(|r| r.name.trim().is_empty()) {
            out.push(Violation::EmptyEntityName { component });
        }
        for &index in &t.applies_to {
            if index >= request.descriptors.len() {
                out.push(Violation::AppliesToOutOfRange { component, index });
            }
        }
    }

    for (i, q) in request.qualifiers.iter().enumerate() {
        let component = ComponentId::Qualifier(i);
        if q.key.trim().is_empty() {
            out.push(Violation::EmptyQualifierKey { component });
        }
        let terms = match q.kind {
            QualifierKind::Quality => continue,
            QualifierKind::Distribution => &vocabulary.distribution,
            QualifierKind::Purpose => &vocabulary.purpose,
        };
        let value = q.value.normalized();
        if !terms.contains(&value) {
            out.push(Violation::UnknownVocabularyTerm { component, kind: q.kind, value });
        }
    }

    // A referenced entity facet may sit in only one component list.
    let specific: Vec<_> = request.specific_components().collect();
    for (a, (ca, ra, aa)) in specific.iter().enumerate() {
        for (cb, rb, ab) in &specific[a + 1..] {
            let cross_list = matches!(
                (ca, cb),
                (ComponentId::Descriptor(_), ComponentId::Transformation(_))
            );
            if cross_list && aa == ab && normalize(&ra.name) == normalize(&rb.name) {
                out.push(Violation::DuplicateComponent { first: *ca, second: *cb });
            }
        }
    }
    out
}

fn normalize(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}
