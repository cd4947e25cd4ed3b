use std::collections::BTreeMap;

use super::{
    CombinationRule, ConsentError, ConsentRecord, DenialDetail, DenyReason, EntityVerdict, Outcome, Overall,
    PermissionRule, QualifierConstraints, QualifierViolation, RecordStatus, UseDecision, ValidityWindow, Verdict,
};
use crate::intent::{
    extract_entity_refs, validate_intent, Aspect, CombinationClass, ComponentId, DescriptorKind, ExtractedRef,
    IntentRequest, Qualifier, QualifierKind, Role, TransformationKind,
};
use crate::time::Timestamp;

/// One use of an entity, as seen by its rights holder's rules.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityUse {
    pub aspect: Aspect,
    pub role: Role,
    pub combination: CombinationClass,
    pub qualifiers: Vec<Qualifier>,
    /// No other specific reference appears in the request.
    pub solo: bool,
}

/// An extracted reference paired with the registry entity it is checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationTarget {
    pub extracted: ExtractedRef,
    pub entity_id: Option<String>,
}

pub fn check_validity_window(window: &ValidityWindow, at: Timestamp) -> bool {
    window.from <= at && window.until.is_none_or(|u| at < u)
}

pub fn check_qualifier_constraints(constraints: &QualifierConstraints, qualifiers: &[Qualifier]) -> bool {
    find_qualifier_violation(constraints, qualifiers).is_none()
}

fn sorted(set: &std::collections::BTreeSet<String>) -> Vec<String> {
    set.iter().cloned().collect()
}

/// The first constraint the qualifiers fail, in qualifier order, followed by
/// any exclusive allow-set the request never addressed.
pub fn find_qualifier_violation(constraints: &QualifierConstraints, qualifiers: &[Qualifier]) -> Option<QualifierViolation> {
    for (i, q) in qualifiers.iter().enumerate() {
        let component = Some(ComponentId::Qualifier(i));
        let (allow, deny) = match q.kind {
            QualifierKind::Purpose => (&constraints.purpose_allow, &constraints.purpose_deny),
            QualifierKind::Distribution => (&constraints.distribution_allow, &constraints.distribution_deny),
            QualifierKind::Quality => {
                let Some(&cap) = constraints.quality_caps.get(&q.key) else { continue };
                let within = q.value.as_number().is_some_and(|v| v <= cap);
                if !within {
                    return Some(QualifierViolation {
                        kind: q.kind,
                        key: q.key.clone(),
                        value: Some(q.value.to_string()),
                        allowed: None,
                        cap: Some(cap),
                        component,
                    });
                }
                continue;
            }
        };
        let value = q.value.normalized();
        let denied = deny.contains(&value);
        let outside_allow = allow.as_ref().is_some_and(|a| !a.contains(&value));
        if denied || outside_allow {
            return Some(QualifierViolation {
                kind: q.kind,
                key: q.key.clone(),
                value: Some(value),
                allowed: allow.as_ref().map(sorted),
                cap: None,
                component,
            });
        }
    }

    let missing = |kind: QualifierKind, allow: &Option<std::collections::BTreeSet<String>>, key: &str| {
        let present = qualifiers.iter().any(|q| q.kind == kind);
        match allow {
            Some(a) if !present => Some(QualifierViolation {
                kind,
                key: key.to_string(),
                value: None,
                allowed: Some(sorted(a)),
                cap: None,
                component: None,
            }),
            _ => None,
        }
    };
    missing(QualifierKind::Purpose, &constraints.purpose_allow, "use")
        .or_else(|| missing(QualifierKind::Distribution, &constraints.distribution_allow, "platform"))
}

/// Per-dimension result of matching one rule against one use.
#[derive(Debug, Clone)]
struct RuleMatch {
    aspect: bool,
    role: bool,
    combination: bool,
    qualifier: Option<QualifierViolation>,
    validity: bool,
}

impl RuleMatch {
    fn of(rule: &PermissionRule, use_: &EntityUse, at: Timestamp) -> Self {
        RuleMatch {
            aspect: rule.aspect.matches(&use_.aspect),
            role: rule.roles.contains(&use_.role),
            combination: match rule.combination {
                CombinationRule::Any => true,
                CombinationRule::OriginalOnly => use_.combination == CombinationClass::OriginalOnly,
                CombinationRule::None => use_.solo,
            },
            qualifier: find_qualifier_violation(&rule.qualifier_constraints, &use_.qualifiers),
            validity: rule.validity.as_ref().is_none_or(|w| check_validity_window(w, at)),
        }
    }

    fn permits(&self) -> bool {
        self.aspect && self.role && self.combination && self.qualifier.is_none() && self.validity
    }

    /// Failing dimensions in reporting precedence.
    fn failures(&self) -> Vec<DenyReason> {
        let mut out = Vec::new();
        if !self.role {
            out.push(DenyReason::RoleNotPermitted);
        }
        if !self.combination {
            out.push(DenyReason::CombinationNotPermitted);
        }
        if self.qualifier.is_some() {
            out.push(DenyReason::QualifierViolation);
        }
        if !self.validity {
            out.push(DenyReason::Expired);
        }
        out
    }
}

fn denied(reason: DenyReason) -> UseDecision {
    UseDecision {
        outcome: Outcome::Denied,
        reason: Some(reason),
        matched_rule_index: None,
        record_version: None,
        rights_holder_id: None,
        detail: None,
    }
}

/// Decides one use against a record.
///
/// Checks run in order: presence, revocation, record window, reservation,
/// then rules. The first rule that matches on every dimension permits. On
/// denial the reported reason comes from the aspect-matching rule with the
/// fewest failing dimensions (earliest on ties), taking its highest-precedence
/// failure: role, then combination, then qualifiers, then rule window.
pub fn evaluate_entity_use(use_: &EntityUse, record: Option<&ConsentRecord>, at: Timestamp) -> UseDecision {
    let Some(record) = record else {
        return denied(DenyReason::NotInRegistry);
    };
    let with_record = |mut d: UseDecision| {
        d.record_version = Some(record.version);
        d.rights_holder_id = Some(record.rights_holder_id.clone());
        d
    };
    if record.status == RecordStatus::Revoked {
        return with_record(denied(DenyReason::Revoked));
    }
    if !check_validity_window(&record.validity, at) {
        return with_record(denied(DenyReason::Expired));
    }
    if record.rules.is_empty() {
        return with_record(denied(DenyReason::ExplicitlyReserved));
    }

    let matches: Vec<RuleMatch> = record.rules.iter().map(|r| RuleMatch::of(r, use_, at)).collect();
    if let Some(index) = matches.iter().position(RuleMatch::permits) {
        return with_record(UseDecision {
            outcome: Outcome::Permitted,
            reason: None,
            matched_rule_index: Some(index),
            record_version: None,
            rights_holder_id: None,
            detail: None,
        });
    }

    let closest = matches
        .iter()
        .enumerate()
        .filter(|(_, m)| m.aspect)
        .min_by_key(|(i, m)| (m.failures().len(), *i));
    let original_only_available = record.rules.iter().any(|rule| {
        let alt = EntityUse { role: Role::Descriptor, combination: CombinationClass::OriginalOnly, solo: true, ..use_.clone() };
        rule.combination == CombinationRule::OriginalOnly && RuleMatch::of(rule, &alt, at).permits()
    });

    let (reason, detail) = match closest {
        None => (DenyReason::NoMatchingRule, DenialDetail { original_only_available, ..Default::default() }),
        Some((index, m)) => (
            m.failures()[0],
            DenialDetail {
                closest_rule_index: Some(index),
                original_only_available,
                qualifier_violation: m.qualifier.clone(),
            },
        ),
    };
    let mut d = denied(reason);
    d.detail = Some(detail);
    with_record(d)
}

/// Evaluates explicit targets. Used directly by the engine, which may expand
/// one reference into several registry entities.
pub fn evaluate_targets(
    request: &IntentRequest,
    targets: &[EvaluationTarget],
    records: &BTreeMap<String, ConsentRecord>,
    at: Timestamp,
) -> Verdict {
    let solo = request.specific_components().count() <= 1;
    let entity_verdicts: Vec<EntityVerdict> = targets
        .iter()
        .map(|t| {
            let use_ = EntityUse {
                aspect: t.extracted.aspect.clone(),
                role: t.extracted.role,
                combination: t.extracted.combination,
                qualifiers: request.qualifiers.clone(),
                solo,
            };
            let record = t.entity_id.as_ref().and_then(|id| records.get(id));
            EntityVerdict {
                entity_id: t.entity_id.clone(),
                name: t.extracted.entity_ref.name.clone(),
                component: t.extracted.component,
                aspect: t.extracted.aspect.clone(),
                role: t.extracted.role,
                combination: t.extracted.combination,
                decision: evaluate_entity_use(&use_, record, at),
            }
        })
        .collect();

    let all_permitted = entity_verdicts.iter().all(|v| v.decision.is_permitted());
    let has_unconditioned_descriptor = request.descriptors.iter().any(|d| d.kind != DescriptorKind::Specific);
    let granted = all_permitted && (!entity_verdicts.is_empty() || has_unconditioned_descriptor);

    Verdict {
        overall: if granted { Overall::Granted } else { Overall::Denied },
        entity_verdicts,
        advisories: advisories(request),
        evaluated_at: at,
    }
}

fn advisories(request: &IntentRequest) -> Vec<String> {
    let mut out = Vec::new();
    for d in &request.descriptors {
        if let (DescriptorKind::Generic, Some(c)) = (d.kind, &d.category) {
            out.push(format!("generic descriptor `{c}` names no unique entity and needs no consent"));
        }
    }
    for t in &request.transformations {
        match (t.kind, &t.category, &t.rule_text) {
            (TransformationKind::Generic, Some(c), _) => {
                out.push(format!("generic transformation `{c}` names no unique entity and needs no consent"))
            }
            (TransformationKind::Foundational, _, Some(r)) => {
                out.push(format!("foundational transformation `{r}` is rule-based and needs no consent"))
            }
            _ => {}
        }
    }
    out
}

/// Evaluates every specific reference in `request` against `records`, keyed
/// by entity id. References without a `resolved_id` are denied as absent.
pub fn evaluate_request(
    request: &IntentRequest,
    records: &BTreeMap<String, ConsentRecord>,
    at: Timestamp,
) -> Result<Verdict, ConsentError> {
    let violations = validate_intent(request);
    if !violations.is_empty() {
        return Err(ConsentError::InvalidRequest(violations));
    }
    let targets: Vec<EvaluationTarget> = extract_entity_refs(request)
        .into_iter()
        .map(|e| EvaluationTarget { entity_id: e.entity_ref.resolved_id.clone(), extracted: e })
        .collect();
    Ok(evaluate_targets(request, &targets, records, at))
}
