use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canonical::Digest;
use crate::consent::{ConsentRecord, PermissionRule, ValidityWindow};
use crate::intent::{Aspect, EntityType};
use crate::time::{TimeRange, Timestamp};

/// Lowercase, trim, collapse internal whitespace, strip surrounding quotes.
pub fn normalize_alias(name: &str) -> String {
    let mut s = name.trim();
    loop {
        let stripped = ['"', '\'', '“', '”', '‘', '’', '`']
            .iter()
            .find_map(|q| s.strip_prefix(*q))
            .and_then(|inner| {
                ['"', '\'', '“', '”', '‘', '’', '`'].iter().find_map(|q| inner.strip_suffix(*q))
            });
        match stripped {
            Some(inner) => s = inner.trim(),
            None => break,
        }
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn is_valid_slug(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_' || b == b'.')
        && !id.starts_with(['-', '.'])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub entity_type: EntityType,
    pub display_name: String,
    #[serde(default)]
    pub aliases: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_entity: Option<String>,
    pub rights_holder_ids: BTreeSet<String>,
    /// For work parts: the aspects of the parent work this part holds rights
    /// over. Empty means every aspect.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub part_aspects: Vec<Aspect>,
}

impl EntityRecord {
    pub fn new(entity_id: &str, entity_type: EntityType, display_name: &str, rights_holder_id: &str) -> Self {
        EntityRecord {
            entity_id: entity_id.to_string(),
            entity_type,
            display_name: display_name.to_string(),
            aliases: BTreeSet::new(),
            parent_entity: None,
            rights_holder_ids: BTreeSet::from([rights_holder_id.to_string()]),
            part_aspects: Vec::new(),
        }
    }

    pub fn with_alias(mut self, alias: &str) -> Self {
        self.aliases.insert(alias.to_string());
        self
    }

    pub fn part_of(mut self, parent: &str, aspects: &[Aspect]) -> Self {
        self.parent_entity = Some(parent.to_string());
        self.part_aspects = aspects.to_vec();
        self
    }

    /// Whether a use of the parent work's `aspect` touches this part.
    pub fn covers(&self, aspect: &Aspect) -> bool {
        *aspect == Aspect::Whole || self.part_aspects.is_empty() || self.part_aspects.contains(aspect)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RightsHolderAccount {
    pub rights_holder_id: String,
    pub display_name: String,
    pub credential_digest: Digest,
    pub created_at: Timestamp,
}

impl RightsHolderAccount {
    pub fn accepts(&self, credential: &str) -> bool {
        Digest::of(credential.as_bytes()) == self.credential_digest
    }
}

/// Rules and window submitted by a rights holder for a new consent version.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConsentDraft {
    #[serde(default)]
    pub validity: Option<ValidityWindow>,
    pub rules: Vec<PermissionRule>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub declared_preferences: BTreeMap<String, String>,
    /// Optimistic concurrency: reject if the current version differs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_version: Option<u32>,
}

impl ConsentDraft {
    pub fn new(rules: Vec<PermissionRule>) -> Self {
        ConsentDraft { rules, ..Default::default() }
    }

    pub fn with_validity(mut self, window: ValidityWindow) -> Self {
        self.validity = Some(window);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Requester {
    OptinAgent,
    RightsHolder(String),
}

impl fmt::Display for Requester {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Requester::OptinAgent => f.write_str("optin_agent"),
            Requester::RightsHolder(id) => write!(f, "rights_holder:{id}"),
        }
    }
}

impl FromStr for Requester {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "optin_agent" {
            return Ok(Requester::OptinAgent);
        }
        match s.strip_prefix("rights_holder:") {
            Some(id) if !id.is_empty() => Ok(Requester::RightsHolder(id.to_string())),
            _ => Err(format!("unknown requester `{s}`")),
        }
    }
}

impl Serialize for Requester {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Requester {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryResult {
    Found,
    NotFound,
    /// Present but grants nothing: no rules, or revoked.
    Reserved,
}

impl QueryResult {
    pub fn of(record: Option<&ConsentRecord>) -> Self {
        match record {
            None => QueryResult::NotFound,
            Some(r) if !r.is_active() || r.rules.is_empty() => QueryResult::Reserved,
            Some(_) => QueryResult::Found,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAuditEntry {
    pub query_id: String,
    pub entity_ids: Vec<String>,
    pub requester: Requester,
    pub at: Timestamp,
    pub results_summary: BTreeMap<String, QueryResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub results: BTreeMap<String, Option<ConsentRecord>>,
    pub audit: QueryAuditEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityConsentStatus {
    pub entity_id: String,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<ConsentRecord>,
    pub history: Vec<ConsentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RightsHolderReport {
    pub rights_holder_id: String,
    pub range: TimeRange,
    /// Audit entries touching the holder's entities, restricted to those entities.
    pub queries: Vec<QueryAuditEntry>,
    pub entities: Vec<EntityConsentStatus>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alias_normalization() {
        assert_eq!(normalize_alias("GRIMES  "), "grimes");
        assert_eq!(normalize_alias("  'Rolling   in the  Deep' "), "rolling in the deep");
        assert_eq!(normalize_alias("“Hello”"), "hello");
        assert_eq!(normalize_alias("Studio\tGhibli"), "studio ghibli");
    }

    #[test]
    fn requester_strings() {
        assert_eq!(Requester::OptinAgent.to_string(), "optin_agent");
        assert_eq!("rights_holder:rh-1".parse::<Requester>().unwrap(), Requester::RightsHolder("rh-1".into()));
        assert!("rights_holder:".parse::<Requester>().is_err());
    }

    #[test]
    fn slugs() {
        assert!(is_valid_slug("rolling-in-the-deep"));
        assert!(is_valid_slug("rh_grimes.2"));
        assert!(!is_valid_slug("Grimes"));
        assert!(!is_valid_slug(""));
        assert!(!is_valid_slug("a/b"));
    }
}
