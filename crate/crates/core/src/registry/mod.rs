//! The consent registry.
//!
//! State is an append-only event log (holders, entities, consent versions,
//! queries) materialized into in-memory indexes. A file-backed registry
//! replays its log on open. Readers run concurrently; every mutation,
//! including the audit entry written by [`Registry::batch_query`], happens
//! under a single writer lock together with its log append.

mod model;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::{to_canonical_string, Digest};
use crate::consent::{ConsentRecord, RecordStatus, ValidityWindow};
use crate::intent::EntityType;
use crate::ledger::{EntryKind, Ledger, LedgerError};
use crate::time::{TimeRange, Timestamp};

pub use model::{
    is_valid_slug, normalize_alias, BatchResult, ConsentDraft, EntityConsentStatus, EntityRecord, QueryAuditEntry,
    QueryResult, Requester, RightsHolderAccount, RightsHolderReport,
};

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("alias `{alias}` already belongs to `{existing}`")]
    AliasCollision { alias: String, existing: String },
    #[error("unauthorized")]
    Unauthorized,
    #[error("entity id `{0}` is already registered")]
    DuplicateEntityId(String),
    #[error("rights holder `{0}` is already registered")]
    DuplicateRightsHolder(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown rights holder `{0}`")]
    UnknownRightsHolder(String),
    #[error("malformed entity: {0}")]
    MalformedEntity(String),
    #[error("malformed rule at `{path}`: {message}")]
    MalformedRule { path: String, message: String },
    #[error("consent for `{0}` is already revoked")]
    AlreadyRevoked(String),
    #[error("no consent record for `{0}`")]
    NoConsentRecord(String),
    #[error("version conflict: expected {expected}, current {current}")]
    VersionConflict { expected: u32, current: u32 },
    #[error("timestamp {at} precedes the latest consent version at {latest}")]
    OutOfOrder { at: Timestamp, latest: Timestamp },
    #[error("empty batch")]
    EmptyBatch,
    #[error("registry log is corrupted at line {line}: {message}")]
    Corrupted { line: usize, message: String },
    #[error("registry storage failure: {0}")]
    Storage(#[from] io::Error),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
enum Event {
    HolderRegistered(RightsHolderAccount),
    EntityRegistered(EntityRecord),
    ConsentUpserted(ConsentRecord),
    ConsentRevoked(ConsentRecord),
    QueryExecuted(QueryAuditEntry),
}

#[derive(Debug, Serialize, Deserialize)]
struct EventLine {
    seq: u64,
    at: Timestamp,
    #[serde(flatten)]
    event: Event,
}

#[derive(Default)]
struct State {
    holders: BTreeMap<String, RightsHolderAccount>,
    entities: BTreeMap<String, EntityRecord>,
    aliases: HashMap<String, String>,
    consent: BTreeMap<String, Vec<ConsentRecord>>,
    audits: Vec<QueryAuditEntry>,
    next_seq: u64,
    log: Option<File>,
}

impl State {
    fn apply(&mut self, event: &Event) {
        match event {
            Event::HolderRegistered(h) => {
                self.holders.insert(h.rights_holder_id.clone(), h.clone());
            }
            Event::EntityRegistered(e) => {
                for alias in &e.aliases {
                    self.aliases.insert(alias.clone(), e.entity_id.clone());
                }
                self.entities.insert(e.entity_id.clone(), e.clone());
            }
            Event::ConsentUpserted(r) | Event::ConsentRevoked(r) => {
                self.consent.entry(r.entity_id.clone()).or_default().push(r.clone());
            }
            Event::QueryExecuted(q) => self.audits.push(q.clone()),
        }
    }

    /// Persists then applies. Nothing is applied if the write fails.
    fn commit(&mut self, at: Timestamp, event: Event) -> Result<(), RegistryError> {
        let line = EventLine { seq: self.next_seq, at, event };
        if let Some(log) = self.log.as_mut() {
            let text = to_canonical_string(&line).map_err(io::Error::other)?;
            log.write_all(text.as_bytes())?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        self.next_seq += 1;
        self.apply(&line.event);
        Ok(())
    }

    fn authorize<'a>(&'a self, holders: impl IntoIterator<Item = &'a String>, credential: &str) -> Option<&'a String> {
        holders
            .into_iter()
            .find(|id| self.holders.get(*id).is_some_and(|h| h.accepts(credential)))
    }

    fn latest(&self, entity_id: &str) -> Option<&ConsentRecord> {
        self.consent.get(entity_id).and_then(|v| v.last())
    }

    fn lookup(&self, entity_id: &str, at: Timestamp) -> Option<ConsentRecord> {
        self.consent
            .get(entity_id)?
            .iter()
            .rev()
            .find(|r| r.updated_at <= at)
            .cloned()
    }
}

pub struct Registry {
    state: RwLock<State>,
    ledger: Option<Arc<Ledger>>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("path", &self.path).finish_non_exhaustive()
    }
}

/// A fresh random bearer secret (256 bits, hex).
pub fn generate_secret() -> String {
    let mut bytes = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry { state: RwLock::new(State::default()), ledger: None, path: None }
    }

    /// Opens or creates a file-backed registry and rebuilds its indexes.
    pub fn open(path: &Path) -> Result<Self, RegistryError> {
        let mut state = State::default();
        match std::fs::read_to_string(path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let parsed: EventLine = serde_json::from_str(line)
                        .map_err(|e| RegistryError::Corrupted { line: i + 1, message: e.to_string() })?;
                    if parsed.seq != state.next_seq {
                        return Err(RegistryError::Corrupted { line: i + 1, message: "sequence gap".into() });
                    }
                    state.apply(&parsed.event);
                    state.next_seq += 1;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        state.log = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(Registry { state: RwLock::new(state), ledger: None, path: Some(path.to_path_buf()) })
    }

    /// Consent changes are additionally recorded in `ledger`.
    pub fn with_ledger(mut self, ledger: Arc<Ledger>) -> Self {
        self.ledger = Some(ledger);
        self
    }

    pub fn ledger(&self) -> Option<&Arc<Ledger>> {
        self.ledger.as_ref()
    }

    /// Registers a rights holder with a caller-chosen secret. Only its digest is kept.
    pub fn register_rights_holder(
        &self,
        rights_holder_id: &str,
        display_name: &str,
        secret: &str,
        at: Timestamp,
    ) -> Result<RightsHolderAccount, RegistryError> {
        if !is_valid_slug(rights_holder_id) {
            return Err(RegistryError::MalformedEntity(format!("invalid rights holder id `{rights_holder_id}`")));
        }
        if secret.is_empty() {
            return Err(RegistryError::MalformedEntity("credential must not be empty".into()));
        }
        let mut state = self.state.write();
        if state.holders.contains_key(rights_holder_id) {
            return Err(RegistryError::DuplicateRightsHolder(rights_holder_id.to_string()));
        }
        let account = RightsHolderAccount {
            rights_holder_id: rights_holder_id.to_string(),
            display_name: display_name.to_string(),
            credential_digest: Digest::of(secret.as_bytes()),
            created_at: at,
        };
        state.commit(at, Event::HolderRegistered(account.clone()))?;
        Ok(account)
    }

    /// Registers a rights holder and returns the generated secret.
    pub fn create_rights_holder(
        &self,
        rights_holder_id: &str,
        display_name: &str,
        at: Timestamp,
    ) -> Result<(RightsHolderAccount, String), RegistryError> {
        let secret = generate_secret();
        let account = self.register_rights_holder(rights_holder_id, display_name, &secret, at)?;
        Ok((account, secret))
    }

    pub fn authenticate(&self, rights_holder_id: &str, credential: &str) -> Result<(), RegistryError> {
        let state = self.state.read();
        match state.holders.get(rights_holder_id) {
            Some(h) if h.accepts(credential) => Ok(()),
            _ => Err(RegistryError::Unauthorized),
        }
    }

    /// The rights holder of `entity_id` whose secret is `credential`.
    pub fn authorize_entity(&self, entity_id: &str, credential: &str) -> Result<String, RegistryError> {
        let state = self.state.read();
        let entity = state.entities.get(entity_id).ok_or_else(|| RegistryError::UnknownEntity(entity_id.to_string()))?;
        state.authorize(&entity.rights_holder_ids, credential).cloned().ok_or(RegistryError::Unauthorized)
    }

    pub fn register_entity(&self, mut record: EntityRecord, credential: &str, at: Timestamp) -> Result<String, RegistryError> {
        if !is_valid_slug(&record.entity_id) {
            return Err(RegistryError::MalformedEntity(format!("invalid entity id `{}`", record.entity_id)));
        }
        if record.display_name.trim().is_empty() {
            return Err(RegistryError::MalformedEntity("display_name must not be empty".into()));
        }
        if record.rights_holder_ids.is_empty() {
            return Err(RegistryError::MalformedEntity("rights_holder_ids must not be empty".into()));
        }
        let mut aliases: BTreeSet<String> = record.aliases.iter().map(|a| normalize_alias(a)).collect();
        aliases.insert(normalize_alias(&record.display_name));
        aliases.retain(|a| !a.is_empty());
        record.aliases = aliases;

        let mut state = self.state.write();
        if state.authorize(&record.rights_holder_ids, credential).is_none() {
            return Err(RegistryError::Unauthorized);
        }
        if let Some(missing) = record.rights_holder_ids.iter().find(|id| !state.holders.contains_key(*id)) {
            return Err(RegistryError::UnknownRightsHolder(missing.clone()));
        }
        if state.entities.contains_key(&record.entity_id) {
            return Err(RegistryError::DuplicateEntityId(record.entity_id));
        }
        match (record.entity_type, &record.parent_entity) {
            (EntityType::WorkPart, None) => {
                return Err(RegistryError::MalformedEntity("work_part requires parent_entity".into()))
            }
            (EntityType::WorkPart, Some(parent)) => match state.entities.get(parent) {
                Some(p) if p.entity_type == EntityType::Work => {}
                Some(_) => return Err(RegistryError::MalformedEntity(format!("parent `{parent}` is not a work"))),
                None => return Err(RegistryError::UnknownEntity(parent.clone())),
            },
            (_, Some(_)) => {
                return Err(RegistryError::MalformedEntity("only work_part entities have a parent".into()))
            }
            (_, None) => {}
        }
        if let Some(alias) = record.aliases.iter().find(|a| state.aliases.contains_key(*a)) {
            return Err(RegistryError::AliasCollision { alias: alias.clone(), existing: state.aliases[alias].clone() });
        }
        let id = record.entity_id.clone();
        state.commit(at, Event::EntityRegistered(record))?;
        Ok(id)
    }

    pub fn upsert_consent(
        &self,
        entity_id: &str,
        draft: ConsentDraft,
        credential: &str,
        at: Timestamp,
    ) -> Result<ConsentRecord, RegistryError> {
        for (i, rule) in draft.rules.iter().enumerate() {
            if let Some(problem) = rule.problems().into_iter().next() {
                return Err(RegistryError::MalformedRule { path: format!("$.rules[{i}]"), message: problem });
            }
        }
        let validity = draft.validity.unwrap_or(ValidityWindow::open_from(at));
        if !validity.is_well_formed() {
            return Err(RegistryError::MalformedRule {
                path: "$.validity".into(),
                message: "validity must satisfy from < until".into(),
            });
        }

        let mut state = self.state.write();
        let entity = state.entities.get(entity_id).ok_or_else(|| RegistryError::UnknownEntity(entity_id.to_string()))?;
        let holder = state.authorize(&entity.rights_holder_ids, credential).cloned().ok_or(RegistryError::Unauthorized)?;
        let latest = state.latest(entity_id);
        let current = latest.map(|r| r.version).unwrap_or(0);
        if let Some(expected) = draft.expected_version {
            if expected != current {
                return Err(RegistryError::VersionConflict { expected, current });
            }
        }
        if let Some(prev) = latest {
            if at < prev.updated_at {
                return Err(RegistryError::OutOfOrder { at, latest: prev.updated_at });
            }
        }
        let record = ConsentRecord {
            entity_id: entity_id.to_string(),
            rights_holder_id: holder,
            version: current + 1,
            status: RecordStatus::Active,
            validity,
            rules: draft.rules,
            updated_at: at,
            declared_preferences: draft.declared_preferences,
        };
        self.record_change(at, "upsert", &record)?;
        state.commit(at, Event::ConsentUpserted(record.clone()))?;
        Ok(record)
    }

    pub fn revoke_consent(&self, entity_id: &str, credential: &str, at: Timestamp) -> Result<ConsentRecord, RegistryError> {
        let mut state = self.state.write();
        let entity = state.entities.get(entity_id).ok_or_else(|| RegistryError::UnknownEntity(entity_id.to_string()))?;
        let holder = state.authorize(&entity.rights_holder_ids, credential).cloned().ok_or(RegistryError::Unauthorized)?;
        let latest = state.latest(entity_id).ok_or_else(|| RegistryError::NoConsentRecord(entity_id.to_string()))?;
        if latest.status == RecordStatus::Revoked {
            return Err(RegistryError::AlreadyRevoked(entity_id.to_string()));
        }
        if at < latest.updated_at {
            return Err(RegistryError::OutOfOrder { at, latest: latest.updated_at });
        }
        let record = ConsentRecord {
            rights_holder_id: holder,
            version: latest.version + 1,
            status: RecordStatus::Revoked,
            updated_at: at,
            ..latest.clone()
        };
        self.record_change(at, "revoke", &record)?;
        state.commit(at, Event::ConsentRevoked(record.clone()))?;
        Ok(record)
    }

    /// Called with the writer lock held so ledger order matches version order.
    fn record_change(&self, at: Timestamp, action: &str, record: &ConsentRecord) -> Result<(), RegistryError> {
        let Some(ledger) = &self.ledger else { return Ok(()) };
        ledger.append_entry(
            EntryKind::ConsentChange,
            at,
            &json!({
                "action": action,
                "entity_ids": [record.entity_id],
                "rights_holder_ids": [record.rights_holder_id],
                "record": record,
            }),
        )?;
        Ok(())
    }

    /// The version in force at `at`: the latest with `updated_at <= at`.
    pub fn lookup_consent(&self, entity_id: &str, at: Timestamp) -> Option<ConsentRecord> {
        self.state.read().lookup(entity_id, at)
    }

    pub fn consent_history(&self, entity_id: &str) -> Vec<ConsentRecord> {
        self.state.read().consent.get(entity_id).cloned().unwrap_or_default()
    }

    pub fn entity(&self, entity_id: &str) -> Option<EntityRecord> {
        self.state.read().entities.get(entity_id).cloned()
    }

    pub fn entities(&self) -> Vec<EntityRecord> {
        self.state.read().entities.values().cloned().collect()
    }

    pub fn parts_of(&self, entity_id: &str) -> Vec<EntityRecord> {
        self.state
            .read()
            .entities
            .values()
            .filter(|e| e.parent_entity.as_deref() == Some(entity_id))
            .cloned()
            .collect()
    }

    pub fn rights_holder(&self, rights_holder_id: &str) -> Option<RightsHolderAccount> {
        self.state.read().holders.get(rights_holder_id).cloned()
    }

    /// Exact match on the normalized alias.
    pub fn resolve_alias(&self, name: &str) -> Option<String> {
        self.state.read().aliases.get(&normalize_alias(name)).cloned()
    }

    /// Looks up several entities and records one audit entry, atomically.
    pub fn batch_query(&self, entity_ids: &[String], requester: Requester, at: Timestamp) -> Result<BatchResult, RegistryError> {
        if entity_ids.is_empty() {
            return Err(RegistryError::EmptyBatch);
        }
        let mut state = self.state.write();
        let mut ids: Vec<String> = Vec::new();
        for id in entity_ids {
            if !ids.contains(id) {
                ids.push(id.clone());
            }
        }
        let results: BTreeMap<String, Option<ConsentRecord>> =
            ids.iter().map(|id| (id.clone(), state.lookup(id, at))).collect();
        let audit = QueryAuditEntry {
            query_id: format!("q-{}", state.audits.len() + 1),
            entity_ids: ids,
            requester,
            at,
            results_summary: results.iter().map(|(k, v)| (k.clone(), QueryResult::of(v.as_ref()))).collect(),
        };
        state.commit(at, Event::QueryExecuted(audit.clone()))?;
        Ok(BatchResult { results, audit })
    }

    pub fn audits(&self) -> Vec<QueryAuditEntry> {
        self.state.read().audits.clone()
    }

    /// Entities for which `rights_holder_id` is a rights holder.
    pub fn entities_of(&self, rights_holder_id: &str) -> BTreeSet<String> {
        self.state
            .read()
            .entities
            .values()
            .filter(|e| e.rights_holder_ids.contains(rights_holder_id))
            .map(|e| e.entity_id.clone())
            .collect()
    }

    /// Queries that touched the holder's entities within `range`, restricted
    /// to those entities, plus the holder's consent status and history.
    pub fn rights_holder_report(
        &self,
        rights_holder_id: &str,
        credential: &str,
        range: TimeRange,
    ) -> Result<RightsHolderReport, RegistryError> {
        self.authenticate(rights_holder_id, credential)?;
        let owned = self.entities_of(rights_holder_id);
        let state = self.state.read();
        let queries = state
            .audits
            .iter()
            .filter(|q| range.contains(q.at) && q.entity_ids.iter().any(|id| owned.contains(id)))
            .map(|q| QueryAuditEntry {
                entity_ids: q.entity_ids.iter().filter(|id| owned.contains(*id)).cloned().collect(),
                results_summary: q
                    .results_summary
                    .iter()
                    .filter(|(id, _)| owned.contains(*id))
                    .map(|(k, v)| (k.clone(), *v))
                    .collect(),
                ..q.clone()
            })
            .collect();
        let entities = owned
            .iter()
            .map(|id| {
                let history = state.consent.get(id).cloned().unwrap_or_default();
                EntityConsentStatus {
                    entity_id: id.clone(),
                    display_name: state.entities[id].display_name.clone(),
                    current: history.last().cloned(),
                    history,
                }
            })
            .collect();
        Ok(RightsHolderReport { rights_holder_id: rights_holder_id.to_string(), range, queries, entities })
    }

    /// Writes the registry as a directory of documents:
    /// `holders/<id>.json`, `entities/<id>.json`, `consent/<entity>/v<n>.json`.
    pub fn export_dir(&self, dir: &Path) -> Result<(), RegistryError> {
        let state = self.state.read();
        let write = |path: PathBuf, value: &dyn erased::Canon| -> Result<(), RegistryError> {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, value.canonical()? + "\n")?;
            Ok(())
        };
        for h in state.holders.values() {
            write(dir.join("holders").join(format!("{}.json", h.rights_holder_id)), h)?;
        }
        for e in state.entities.values() {
            write(dir.join("entities").join(format!("{}.json", e.entity_id)), e)?;
        }
        for (id, versions) in &state.consent {
            for r in versions {
                write(dir.join("consent").join(id).join(format!("v{}.json", r.version)), r)?;
            }
        }
        Ok(())
    }

    /// Loads an exported directory into this (empty) registry.
    pub fn import_dir(&self, dir: &Path) -> Result<(), RegistryError> {
        fn read_all<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<Vec<T>, RegistryError> {
            let mut out = Vec::new();
            let Ok(entries) = std::fs::read_dir(dir) else { return Ok(out) };
            let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
            paths.sort();
            for p in paths {
                if p.is_dir() {
                    out.extend(read_all::<T>(&p)?);
                } else if p.extension().is_some_and(|x| x == "json") {
                    let text = std::fs::read_to_string(&p)?;
                    out.push(serde_json::from_str(&text).map_err(|e| RegistryError::Corrupted {
                        line: 1,
                        message: format!("{}: {e}", p.display()),
                    })?);
                }
            }
            Ok(out)
        }
        let holders: Vec<RightsHolderAccount> = read_all(&dir.join("holders"))?;
        let mut entities: Vec<EntityRecord> = read_all(&dir.join("entities"))?;
        let mut records: Vec<ConsentRecord> = read_all(&dir.join("consent"))?;
        entities.sort_by_key(|e| e.parent_entity.is_some());
        records.sort_by(|a, b| (&a.entity_id, a.version).cmp(&(&b.entity_id, b.version)));

        let mut state = self.state.write();
        if !state.holders.is_empty() || !state.entities.is_empty() {
            return Err(RegistryError::MalformedEntity("import requires an empty registry".into()));
        }
        for h in holders {
            let at = h.created_at;
            state.commit(at, Event::HolderRegistered(h))?;
        }
        for e in entities {
            if let Some(alias) = e.aliases.iter().find(|a| state.aliases.contains_key(*a)) {
                return Err(RegistryError::AliasCollision { alias: alias.clone(), existing: state.aliases[alias].clone() });
            }
            state.commit(Timestamp(0), Event::EntityRegistered(e))?;
        }
        for r in records {
            let expected = state.latest(&r.entity_id).map(|p| p.version).unwrap_or(0) + 1;
            if r.version != expected || !state.entities.contains_key(&r.entity_id) {
                return Err(RegistryError::Corrupted { line: 0, message: format!("bad version chain for `{}`", r.entity_id) });
            }
            let at = r.updated_at;
            let event = if r.is_active() { Event::ConsentUpserted(r) } else { Event::ConsentRevoked(r) };
            state.commit(at, event)?;
        }
        Ok(())
    }

    /// Raw event log lines for inspection.
    pub fn event_log(&self) -> Option<Vec<Value>> {
        let path = self.path.as_ref()?;
        let text = std::fs::read_to_string(path).ok()?;
        Some(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }
}

mod erased {
    use super::RegistryError;

    pub trait Canon {
        fn canonical(&self) -> Result<String, RegistryError>;
    }

    impl<T: serde::Serialize> Canon for T {
        fn canonical(&self) -> Result<String, RegistryError> {
            crate::canonical::to_canonical_string(self).map_err(|e| RegistryError::Storage(std::io::Error::other(e)))
        }
    }
}

#[cfg(test)]
mod tests;
