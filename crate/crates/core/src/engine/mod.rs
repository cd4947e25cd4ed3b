//! The verification pipeline: parse, resolve, query, evaluate, guide.
//!
//! Every [`OptInEngine::verify`] call queries the registry once for every
//! referenced entity, evaluates all of them (no early exit), and writes one
//! verification entry to the ledger. A granted verdict carries a
//! [`GenerationGrant`], which later generation and dissemination events refer to.

mod guidance;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::Digest;
use crate::consent::{
    evaluate_targets, find_qualifier_violation, ConsentRecord, EvaluationTarget, Overall, QualifierConstraints,
    QualifierViolation, Verdict,
};
use crate::intent::{
    extract_entity_refs, parse_text_prompt, to_document, validate_intent, Attachment, EntityRef, IntentRequest,
    ParseError, Qualifier, Violation,
};
use crate::ledger::{EntryKind, Ledger, LedgerEntry, LedgerError, LedgerFilter, RecordedEntry};
use crate::registry::{QueryAuditEntry, Registry, RegistryError, Requester, RightsHolderReport};
use crate::time::{TimeRange, Timestamp};

pub use guidance::{generate_guidance, Suggestion, SuggestionKind};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid request: {0:?}")]
    InvalidRequest(Vec<Violation>),
    #[error("registry unavailable: {0}")]
    RegistryUnavailable(String),
    #[error("ledger unavailable: {0}")]
    LedgerUnavailable(#[from] LedgerError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("verdict was not granted")]
    NotGranted,
    #[error("unknown grant `{0}`")]
    UnknownGrant(String),
}

/// Turns free text into an intent. The grammar is the default; other
/// extractors (e.g. a language model emitting intent documents) plug in here.
pub trait IntentExtractor: Send + Sync {
    fn extract(&self, prompt: &str, attachments: &[Attachment]) -> Result<IntentRequest, ParseError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GrammarExtractor;

impl IntentExtractor for GrammarExtractor {
    fn extract(&self, prompt: &str, attachments: &[Attachment]) -> Result<IntentRequest, ParseError> {
        parse_text_prompt(prompt, attachments)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VerifyInput {
    Prompt { text: String, attachments: Vec<Attachment> },
    Intent(IntentRequest),
}

impl VerifyInput {
    pub fn prompt(text: impl Into<String>) -> Self {
        VerifyInput::Prompt { text: text.into(), attachments: Vec::new() }
    }

    pub fn prompt_with(text: impl Into<String>, attachments: Vec<Attachment>) -> Self {
        VerifyInput::Prompt { text: text.into(), attachments }
    }
}

/// One permitted entity on a grant, with the rule version that permitted it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrantedEntity {
    pub entity_id: String,
    pub rights_holder_id: String,
    pub record_version: u32,
    pub matched_rule_index: usize,
    /// Where and why outputs may be shared, from the matched rule.
    #[serde(default, skip_serializing_if = "QualifierConstraints::is_empty")]
    pub dissemination: QualifierConstraints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationGrant {
    pub grant_id: String,
    pub request_digest: Digest,
    pub entity_ids: Vec<String>,
    pub entities: Vec<GrantedEntity>,
    pub issued_at: Timestamp,
    pub compensation_eligible: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub overall: Overall,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant_id: Option<String>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant: Option<GenerationGrant>,
    pub guidance: Vec<Suggestion>,
    /// The evaluated intent document, with resolved entity ids.
    pub intent: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
}

impl VerificationOutcome {
    pub fn grant_id(&self) -> Option<&str> {
        self.grant_id.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub stage: String,
    pub detail: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisseminationOutcome {
    Allowed,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockedBy {
    pub entity_id: String,
    pub violation: QualifierViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dissemination {
    pub grant_id: String,
    pub platform: String,
    pub purpose: String,
    pub outcome: DisseminationOutcome,
    pub blocked_by: Vec<BlockedBy>,
    pub entity_ids: Vec<String>,
    pub rights_holder_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisseminationReceipt {
    pub entry: LedgerEntry,
    pub dissemination: Dissemination,
}

/// Registry report plus the ledger entries touching the holder's entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransparencyReport {
    #[serde(flatten)]
    pub registry: RightsHolderReport,
    pub ledger_entries: Vec<RecordedEntry>,
}

#[derive(Debug, Clone)]
struct IssuedGrant {
    grant: GenerationGrant,
    unlocked: bool,
}

pub struct OptInEngine {
    registry: Arc<Registry>,
    ledger: Arc<Ledger>,
    extractor: Box<dyn IntentExtractor>,
    fallback: Option<Box<dyn IntentExtractor>>,
    grants: RwLock<BTreeMap<String, IssuedGrant>>,
}

impl std::fmt::Debug for OptInEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptInEngine").field("registry", &self.registry).field("ledger", &self.ledger).finish_non_exhaustive()
    }
}

/// Placeholder for attribution-aware generation: no model is invoked.
fn output_handle(grant: &GenerationGrant) -> String {
    format!("output:{}", grant.grant_id)
}

impl OptInEngine {
    /// Builds an engine and restores grants recorded in `ledger`.
    pub fn new(registry: Arc<Registry>, ledger: Arc<Ledger>) -> Self {
        let mut grants = BTreeMap::new();
        for recorded in ledger.query_entries(&LedgerFilter::default()) {
            match recorded.entry.kind {
                EntryKind::Verification => {
                    if let Some(grant) = recorded.payload.get("grant").and_then(|g| serde_json::from_value::<GenerationGrant>(g.clone()).ok()) {
                        grants.insert(grant.grant_id.clone(), IssuedGrant { grant, unlocked: false });
                    }
                }
                EntryKind::Generation => {
                    if let Some(id) = recorded.payload.get("grant_id").and_then(Value::as_str) {
                        if let Some(g) = grants.get_mut(id) {
                            g.unlocked = true;
                        }
                    }
                }
                _ => {}
            }
        }
        OptInEngine { registry, ledger, extractor: Box::new(GrammarExtractor), fallback: None, grants: RwLock::new(grants) }
    }

    /// A fresh in-memory registry and ledger wired together.
    pub fn in_memory() -> Self {
        let ledger = Arc::new(Ledger::in_memory());
        let registry = Arc::new(Registry::in_memory().with_ledger(ledger.clone()));
        OptInEngine::new(registry, ledger)
    }

    /// Consulted only when the primary extractor reports an unrecognized pattern.
    pub fn with_fallback_extractor(mut self, extractor: Box<dyn IntentExtractor>) -> Self {
        self.fallback = Some(extractor);
        self
    }

    pub fn with_extractor(mut self, extractor: Box<dyn IntentExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    fn parse(&self, input: VerifyInput, at: Timestamp) -> Result<IntentRequest, EngineError> {
        match input {
            VerifyInput::Intent(request) => Ok(request),
            VerifyInput::Prompt { text, attachments } => {
                let parsed = match self.extractor.extract(&text, &attachments) {
                    Err(ParseError::UnrecognizedPattern { .. }) if self.fallback.is_some() => {
                        self.fallback.as_ref().expect("checked").extract(&text, &attachments)
                    }
                    other => other,
                };
                let mut request = parsed?;
                request.received_at = at;
                Ok(request)
            }
        }
    }

    /// Fills in `resolved_id` by exact normalized-alias match. Unknown
    /// names stay unresolved.
    pub fn resolve_entities(&self, refs: &[EntityRef]) -> Vec<EntityRef> {
        refs.iter()
            .map(|r| EntityRef { resolved_id: self.registry.resolve_alias(&r.name), ..r.clone() })
            .collect()
    }

    pub fn verify(&self, input: VerifyInput, at: Timestamp) -> Result<VerificationOutcome, EngineError> {
        self.run(input, at, None)
    }

    /// As [`verify`](Self::verify), also returning a record of each pipeline stage.
    pub fn verify_with_trace(
        &self,
        input: VerifyInput,
        at: Timestamp,
    ) -> Result<(VerificationOutcome, Vec<TraceStep>), EngineError> {
        let mut trace = Vec::new();
        let outcome = self.run(input, at, Some(&mut trace))?;
        Ok((outcome, trace))
    }

    fn run(
        &self,
        input: VerifyInput,
        at: Timestamp,
        mut trace: Option<&mut Vec<TraceStep>>,
    ) -> Result<VerificationOutcome, EngineError> {
        let mut step = |stage: &str, detail: Value| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceStep { stage: stage.to_string(), detail });
            }
        };

        let mut request = self.parse(input, at)?;
        let violations = validate_intent(&request);
        if !violations.is_empty() {
            return Err(EngineError::InvalidRequest(violations));
        }
        step("parse", to_document(&request));

        let extracted = extract_entity_refs(&request);
        step("extract", serde_json::to_value(&extracted).unwrap_or(Value::Null));

        let refs: Vec<EntityRef> = extracted.iter().map(|e| e.entity_ref.clone()).collect();
        let resolved = self.resolve_entities(&refs);
        for (e, r) in extracted.iter().zip(&resolved) {
            if let Some(slot) = request.entity_ref_mut(e.component) {
                slot.resolved_id = r.resolved_id.clone();
            }
        }
        let extracted = extract_entity_refs(&request);
        step(
            "resolve",
            Value::Array(
                resolved.iter().map(|r| json!({"name": r.name, "resolved_id": r.resolved_id})).collect(),
            ),
        );

        // A work with parts is checked through each part the use touches;
        // the work itself is checked too when it has its own record or no
        // part is touched.
        let mut targets: Vec<(EvaluationTarget, bool)> = Vec::new();
        for e in &extracted {
            let Some(id) = e.entity_ref.resolved_id.clone() else {
                targets.push((EvaluationTarget { extracted: e.clone(), entity_id: None }, false));
                continue;
            };
            let parts: Vec<String> = self
                .registry
                .parts_of(&id)
                .into_iter()
                .filter(|p| p.covers(&e.aspect))
                .map(|p| p.entity_id)
                .collect();
            let parent_optional = !parts.is_empty();
            targets.push((EvaluationTarget { extracted: e.clone(), entity_id: Some(id) }, parent_optional));
            for part in parts {
                targets.push((EvaluationTarget { extracted: e.clone(), entity_id: Some(part) }, false));
            }
        }

        let mut ids: Vec<String> = Vec::new();
        for (t, _) in &targets {
            if let Some(id) = &t.entity_id {
                if !ids.contains(id) {
                    ids.push(id.clone());
                }
            }
        }
        let (records, audit): (BTreeMap<String, ConsentRecord>, Option<QueryAuditEntry>) = if ids.is_empty() {
            (BTreeMap::new(), None)
        } else {
            let batch = self.registry.batch_query(&ids, Requester::OptinAgent, at).map_err(|e| match e {
                RegistryError::Storage(_) | RegistryError::Corrupted { .. } | RegistryError::Ledger(_) => {
                    EngineError::RegistryUnavailable(e.to_string())
                }
                other => EngineError::Registry(other),
            })?;
            let records = batch.results.into_iter().filter_map(|(k, v)| v.map(|r| (k, r))).collect();
            (records, Some(batch.audit))
        };
        step("query", serde_json::to_value(&audit).unwrap_or(Value::Null));

        let targets: Vec<EvaluationTarget> = targets
            .into_iter()
            .filter(|(t, optional)| !optional || t.entity_id.as_ref().is_some_and(|id| records.contains_key(id)))
            .map(|(t, _)| t)
            .collect();
        let verdict = evaluate_targets(&request, &targets, &records, at);
        step("evaluate", serde_json::to_value(&verdict.entity_verdicts).unwrap_or(Value::Null));
        step("verdict", json!({"overall": verdict.overall, "advisories": verdict.advisories}));

        let guidance = generate_guidance(&verdict, &request);
        step("guidance", serde_json::to_value(&guidance).unwrap_or(Value::Null));

        let request_digest = request.digest();
        let entity_ids: Vec<String> = {
            let mut seen = BTreeSet::new();
            verdict.entity_verdicts.iter().filter_map(|v| v.entity_id.clone()).filter(|id| seen.insert(id.clone())).collect()
        };
        let rights_holder_ids: BTreeSet<String> = entity_ids
            .iter()
            .filter_map(|id| self.registry.entity(id))
            .flat_map(|e| e.rights_holder_ids)
            .collect();

        let granted = verdict.is_granted();
        let grant_template = granted.then(|| {
            let entities: Vec<GrantedEntity> = verdict
                .entity_verdicts
                .iter()
                .filter_map(|v| {
                    let id = v.entity_id.clone()?;
                    let record = records.get(&id)?;
                    let index = v.decision.matched_rule_index?;
                    Some(GrantedEntity {
                        entity_id: id,
                        rights_holder_id: record.rights_holder_id.clone(),
                        record_version: record.version,
                        matched_rule_index: index,
                        dissemination: record.rules[index].qualifier_constraints.dissemination_only(),
                    })
                })
                .collect();
            let compensation_eligible: BTreeSet<String> = entities.iter().map(|e| e.rights_holder_id.clone()).collect();
            GenerationGrant {
                grant_id: String::new(),
                request_digest,
                entity_ids: entity_ids.clone(),
                entities,
                issued_at: at,
                compensation_eligible: compensation_eligible.into_iter().collect(),
            }
        });

        let intent = to_document(&request);
        let mut grant = None;
        self.ledger.append_with(EntryKind::Verification, at, |seq| {
            grant = grant_template.map(|g| GenerationGrant { grant_id: format!("grant-{seq}"), ..g });
            json!({
                "request_digest": request_digest,
                "intent": intent,
                "verdict": verdict,
                "guidance": guidance,
                "grant": grant,
                "query_id": audit.as_ref().map(|a| &a.query_id),
                "entity_ids": entity_ids,
                "rights_holder_ids": rights_holder_ids,
            })
        })?;
        if let Some(g) = &grant {
            self.grants.write().insert(g.grant_id.clone(), IssuedGrant { grant: g.clone(), unlocked: false });
        }

        Ok(VerificationOutcome {
            overall: verdict.overall,
            grant_id: grant.as_ref().map(|g| g.grant_id.clone()),
            verdict,
            grant,
            guidance,
            intent,
            query_id: audit.map(|a| a.query_id),
        })
    }

    /// Records the generation event for a granted outcome. Unlocking the
    /// same grant again returns it without a second ledger entry.
    pub fn unlock_generation(&self, outcome: &VerificationOutcome, at: Timestamp) -> Result<GenerationGrant, EngineError> {
        if !outcome.verdict.is_granted() {
            return Err(EngineError::NotGranted);
        }
        let grant = outcome.grant.as_ref().ok_or(EngineError::NotGranted)?;
        let mut grants = self.grants.write();
        let issued = grants.get_mut(&grant.grant_id).ok_or_else(|| EngineError::UnknownGrant(grant.grant_id.clone()))?;
        if !issued.unlocked {
            let g = &issued.grant;
            self.ledger.append_entry(
                EntryKind::Generation,
                at,
                &json!({
                    "grant_id": g.grant_id,
                    "request_digest": g.request_digest,
                    "entities": g.entities,
                    "entity_ids": g.entity_ids,
                    "rights_holder_ids": g.compensation_eligible,
                    "compensation_eligible": g.compensation_eligible,
                    "output_handle": output_handle(g),
                }),
            )?;
            issued.unlocked = true;
        }
        Ok(issued.grant.clone())
    }

    pub fn grant(&self, grant_id: &str) -> Option<GenerationGrant> {
        self.grants.read().get(grant_id).map(|g| g.grant.clone())
    }

    /// Checks a share of a granted output against each permitting rule's
    /// distribution and purpose constraints and logs the result.
    pub fn register_dissemination(
        &self,
        grant_id: &str,
        platform: &str,
        purpose: &str,
        at: Timestamp,
    ) -> Result<DisseminationReceipt, EngineError> {
        let grant = self.grant(grant_id).ok_or_else(|| EngineError::UnknownGrant(grant_id.to_string()))?;
        let qualifiers = [Qualifier::distribution(platform), Qualifier::purpose(purpose)];
        let blocked_by: Vec<BlockedBy> = grant
            .entities
            .iter()
            .filter_map(|e| {
                find_qualifier_violation(&e.dissemination, &qualifiers)
                    .map(|v| BlockedBy { entity_id: e.entity_id.clone(), violation: v })
            })
            .collect();
        let dissemination = Dissemination {
            grant_id: grant.grant_id.clone(),
            platform: platform.to_string(),
            purpose: purpose.to_string(),
            outcome: if blocked_by.is_empty() { DisseminationOutcome::Allowed } else { DisseminationOutcome::Blocked },
            blocked_by,
            entity_ids: grant.entity_ids.clone(),
            rights_holder_ids: grant.compensation_eligible.clone(),
        };
        let payload = serde_json::to_value(&dissemination).map_err(LedgerError::from)?;
        let entry = self.ledger.append_entry(EntryKind::Dissemination, at, &payload)?;
        Ok(DisseminationReceipt { entry, dissemination })
    }

    /// The registry report for a holder together with every ledger entry
    /// that names the holder, in the same time range.
    pub fn transparency_report(
        &self,
        rights_holder_id: &str,
        credential: &str,
        range: TimeRange,
    ) -> Result<TransparencyReport, EngineError> {
        let registry = self.registry.rights_holder_report(rights_holder_id, credential, range)?;
        let ledger_entries = self.ledger.query_entries(&LedgerFilter {
            rights_holder_id: Some(rights_holder_id.to_string()),
            range,
            ..Default::default()
        });
        Ok(TransparencyReport { registry, ledger_entries })
    }
}

#[cfg(test)]
mod tests;
