//! Consent conditions and their evaluation.
//!
//! Rules are permissive only. Anything no rule permits is denied, and an
//! entity without a record is denied outright.

mod eval;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::intent::{Aspect, CombinationClass, ComponentId, QualifierKind, Role};
use crate::time::Timestamp;

pub use eval::{
    check_qualifier_constraints, check_validity_window, evaluate_entity_use, evaluate_request, evaluate_targets,
    find_qualifier_violation, EntityUse, EvaluationTarget,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsentError {
    #[error("invalid request: {0:?}")]
    InvalidRequest(Vec<crate::intent::Violation>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Active,
    Revoked,
}

/// `[from, until)`; `until` absent means open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityWindow {
    pub from: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<Timestamp>,
}

impl ValidityWindow {
    pub fn open_from(from: Timestamp) -> Self {
        ValidityWindow { from, until: None }
    }

    pub fn bounded(from: Timestamp, until: Timestamp) -> Self {
        ValidityWindow { from, until: Some(until) }
    }

    pub fn is_well_formed(&self) -> bool {
        self.until.is_none_or(|u| self.from < u)
    }
}

impl Default for ValidityWindow {
    fn default() -> Self {
        ValidityWindow { from: Timestamp(i64::MIN), until: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AspectSelector {
    Any,
    Only(Aspect),
}

impl AspectSelector {
    pub fn matches(&self, aspect: &Aspect) -> bool {
        match self {
            AspectSelector::Any => true,
            AspectSelector::Only(a) => a == aspect,
        }
    }
}

impl fmt::Display for AspectSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AspectSelector::Any => f.write_str("any"),
            AspectSelector::Only(a) => a.fmt(f),
        }
    }
}

impl Serialize for AspectSelector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AspectSelector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s == "any" {
            return Ok(AspectSelector::Any);
        }
        s.parse().map(AspectSelector::Only).map_err(serde::de::Error::custom)
    }
}

impl From<Aspect> for AspectSelector {
    fn from(a: Aspect) -> Self {
        AspectSelector::Only(a)
    }
}

/// Which other descriptors a use may be combined with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationRule {
    /// Only with the user's own original descriptors.
    OriginalOnly,
    Any,
    /// Never alongside any other specific reference.
    None,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QualifierConstraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose_allow: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub purpose_deny: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution_allow: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub distribution_deny: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub quality_caps: BTreeMap<String, f64>,
}

impl QualifierConstraints {
    pub fn is_empty(&self) -> bool {
        *self == QualifierConstraints::default()
    }

    /// Drops quality caps, keeping only the constraints that govern where and
    /// why an output is used.
    pub fn dissemination_only(&self) -> QualifierConstraints {
        QualifierConstraints { quality_caps: BTreeMap::new(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermissionRule {
    pub aspect: AspectSelector,
    pub roles: BTreeSet<Role>,
    pub combination: CombinationRule,
    #[serde(default, skip_serializing_if = "QualifierConstraints::is_empty")]
    pub qualifier_constraints: QualifierConstraints,
    /// Overrides the record window for this rule when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity: Option<ValidityWindow>,
}

impl PermissionRule {
    pub fn new(aspect: impl Into<AspectSelector>, roles: &[Role], combination: CombinationRule) -> Self {
        PermissionRule {
            aspect: aspect.into(),
            roles: roles.iter().copied().collect(),
            combination,
            qualifier_constraints: QualifierConstraints::default(),
            validity: None,
        }
    }

    pub fn with_constraints(mut self, constraints: QualifierConstraints) -> Self {
        self.qualifier_constraints = constraints;
        self
    }

    pub fn with_validity(mut self, window: ValidityWindow) -> Self {
        self.validity = Some(window);
        self
    }

    /// Structural problems that make the rule unusable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.roles.is_empty() {
            out.push("roles must not be empty".to_string());
        }
        if self.validity.is_some_and(|w| !w.is_well_formed()) {
            out.push("rule validity must satisfy from < until".to_string());
        }
        if self.qualifier_constraints.quality_caps.values().any(|c| !c.is_finite()) {
            out.push("quality caps must be finite numbers".to_string());
        }
        out
    }
}

/// A rights holder's consent conditions for one entity, at one version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub entity_id: String,
    pub rights_holder_id: String,
    pub version: u32,
    pub status: RecordStatus,
    pub validity: ValidityWindow,
    pub rules: Vec<PermissionRule>,
    pub updated_at: Timestamp,
    /// Imported preferences that do not gate inference (e.g. `train: deny`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub declared_preferences: BTreeMap<String, String>,
}

impl ConsentRecord {
    pub fn is_active(&self) -> bool {
        self.status == RecordStatus::Active
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Permitted,
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    NotInRegistry,
    ExplicitlyReserved,
    Revoked,
    Expired,
    RoleNotPermitted,
    CombinationNotPermitted,
    QualifierViolation,
    NoMatchingRule,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

/// The constraint a request's qualifiers failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualifierViolation {
    pub kind: QualifierKind,
    pub key: String,
    /// The offending value; absent when a required qualifier was missing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<ComponentId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DenialDetail {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closest_rule_index: Option<usize>,
    /// The record has a rule that would permit this use over original input.
    #[serde(default)]
    pub original_only_available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier_violation: Option<QualifierViolation>,
}

/// Outcome of checking one use against one (possibly absent) record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseDecision {
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<DenyReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_rule_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rights_holder_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<DenialDetail>,
}

impl UseDecision {
    pub fn is_permitted(&self) -> bool {
        self.outcome == Outcome::Permitted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityVerdict {
    /// Registry id; absent when the reference did not resolve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    pub name: String,
    pub component: ComponentId,
    pub aspect: Aspect,
    pub role: Role,
    pub combination: CombinationClass,
    #[serde(flatten)]
    pub decision: UseDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overall {
    Granted,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub overall: Overall,
    pub entity_verdicts: Vec<EntityVerdict>,
    pub advisories: Vec<String>,
    pub evaluated_at: Timestamp,
}

impl Verdict {
    pub fn is_granted(&self) -> bool {
        self.overall == Overall::Granted
    }
}
