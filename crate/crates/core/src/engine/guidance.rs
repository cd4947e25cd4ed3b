use serde::{Deserialize, Serialize};

use crate::consent::{DenyReason, Verdict};
use crate::intent::{ComponentId, DescriptorKind, IntentRequest, TransformationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionKind {
    RemoveReference,
    ReplaceWithOriginal,
    ReframeGeneric,
    AdjustQualifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub target: ComponentId,
    pub kind: SuggestionKind,
    pub text: String,
}

fn describe(request: &IntentRequest, id: ComponentId) -> String {
    match id {
        ComponentId::Descriptor(i) => match request.descriptors.get(i) {
            Some(d) => match (&d.entity_ref, &d.category) {
                (Some(r), _) => format!("`{}`", r.name),
                (None, Some(c)) => format!("`{c}`"),
                _ => format!("descriptor {i}"),
            },
            None => format!("descriptor {i}"),
        },
        ComponentId::Transformation(i) => match request.transformations.get(i).and_then(|t| t.entity_ref.as_ref()) {
            Some(r) => format!("`{}`", r.name),
            None => format!("transformation {i}"),
        },
        ComponentId::Qualifier(i) => match request.qualifiers.get(i) {
            Some(q) => format!("`{}={}`", q.key, q.value),
            None => format!("qualifier {i}"),
        },
    }
}

/// Maps deny reasons to actionable suggestions, then adds an advisory per
/// generic component. Output order follows the verdict order; duplicates
/// (same target and kind) are dropped.
pub fn generate_guidance(verdict: &Verdict, request: &IntentRequest) -> Vec<Suggestion> {
    let mut out: Vec<Suggestion> = Vec::new();
    let mut push = |s: Suggestion| {
        if !out.iter().any(|o| o.target == s.target && o.kind == s.kind) {
            out.push(s);
        }
    };

    for v in &verdict.entity_verdicts {
        let Some(reason) = v.decision.reason else { continue };
        let name = &v.name;
        let detail = v.decision.detail.clone().unwrap_or_default();
        match reason {
            DenyReason::RoleNotPermitted | DenyReason::CombinationNotPermitted if detail.original_only_available => {
                let others: Vec<usize> = request
                    .descriptors
                    .iter()
                    .enumerate()
                    .filter(|(i, d)| d.kind != DescriptorKind::Original && ComponentId::Descriptor(*i) != v.component)
                    .map(|(i, _)| i)
                    .collect();
                let targets = if others.is_empty() { vec![v.component] } else { others.into_iter().map(ComponentId::Descriptor).collect() };
                for target in targets {
                    push(Suggestion {
                        target,
                        kind: SuggestionKind::ReplaceWithOriginal,
                        text: format!(
                            "replace {} with your own original upload; {name} permits {} use over original input only",
                            describe(request, target),
                            v.aspect
                        ),
                    });
                }
            }
            DenyReason::QualifierViolation => {
                let qv = detail.qualifier_violation;
                let target = qv.as_ref().and_then(|q| q.component).unwrap_or(v.component);
                let text = match qv {
                    Some(q) => {
                        let what = match &q.value {
                            Some(value) => format!("{} `{}={value}` is not permitted by {name}", q.kind, q.key),
                            None => format!("{name} requires a {} qualifier `{}`", q.kind, q.key),
                        };
                        match (q.allowed, q.cap) {
                            (Some(allowed), _) if !allowed.is_empty() => format!("{what}; use one of: {}", allowed.join(", ")),
                            (_, Some(cap)) => format!("{what}; keep `{}` at or below {cap}", q.key),
                            _ => format!("{what}; choose a different value"),
                        }
                    }
                    None => format!("adjust the qualifiers to satisfy {name}'s conditions"),
                };
                push(Suggestion { target, kind: SuggestionKind::AdjustQualifier, text });
            }
            _ => {
                let why = match reason {
                    DenyReason::NotInRegistry => format!("{name} has not opted in"),
                    DenyReason::ExplicitlyReserved => format!("{name} reserves all rights"),
                    DenyReason::Revoked => format!("{name} has revoked consent"),
                    DenyReason::Expired => format!("{name}'s consent is not in force at this time"),
                    _ => format!("no consent rule of {name} permits this {} use", v.aspect),
                };
                push(Suggestion {
                    target: v.component,
                    kind: SuggestionKind::RemoveReference,
                    text: format!("remove the reference to {}: {why}", describe(request, v.component)),
                });
            }
        }
    }

    for (i, d) in request.descriptors.iter().enumerate() {
        if let (DescriptorKind::Generic, Some(c)) = (d.kind, &d.category) {
            push(Suggestion {
                target: ComponentId::Descriptor(i),
                kind: SuggestionKind::ReframeGeneric,
                text: format!("`{c}` is generic and needs no consent; name a specific opted-in entity to credit its creator"),
            });
        }
    }
    for (i, t) in request.transformations.iter().enumerate() {
        if let (TransformationKind::Generic, Some(c)) = (t.kind, &t.category) {
            push(Suggestion {
                target: ComponentId::Transformation(i),
                kind: SuggestionKind::ReframeGeneric,
                text: format!("`{c}` is generic and needs no consent; name a specific opted-in entity to credit its creator"),
            });
        }
    }
    out
}
