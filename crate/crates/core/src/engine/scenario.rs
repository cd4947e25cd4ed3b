//! Named, self-checking walkthroughs of the verification pipeline.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EngineError, OptInEngine, TraceStep, VerificationOutcome, VerifyInput};
use crate::consent::{CombinationRule, DenyReason, Overall, PermissionRule};
use crate::intent::{Aspect, Attachment, EntityType, Role};
use crate::ledger::Ledger;
use crate::registry::{ConsentDraft, EntityRecord, Registry, RegistryError};
use crate::time::Timestamp;

pub const GRIMES_HOLDER: &str = "rh-grimes";
pub const GRIMES_SECRET: &str = "grimes-secret";
pub const DENY_PROMPT: &str = "Create a song from 'Rolling in the Deep' with Grimes's voice";
pub const GRANT_PROMPT: &str = "Sing this song with Grimes's voice";
pub const SCENARIOS: &[&str] = &["grimes-deny", "grimes-grant"];

/// Voice as a descriptor, combined with the user's own originals only.
pub fn grimes_rule() -> PermissionRule {
    PermissionRule::new(Aspect::Voice, &[Role::Descriptor], CombinationRule::OriginalOnly)
}

/// Registers Grimes and her consent record at `at`. Nothing else is registered.
pub fn seed_grimes(registry: &Registry, at: Timestamp) -> Result<(), RegistryError> {
    registry.register_rights_holder(GRIMES_HOLDER, "Grimes", GRIMES_SECRET, at)?;
    registry.register_entity(
        EntityRecord::new("grimes", EntityType::Person, "Grimes", GRIMES_HOLDER),
        GRIMES_SECRET,
        at,
    )?;
    registry.upsert_consent("grimes", ConsentDraft::new(vec![grimes_rule()]), GRIMES_SECRET, at)?;
    Ok(())
}

/// A stand-in for the user's own recording.
pub fn user_recording() -> Attachment {
    Attachment::from_bytes(b"user's own original sound recording")
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`; known: {known}", known = SCENARIOS.join(", "))]
    UnknownScenario(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub scenario: String,
    pub prompt: String,
    pub steps: Vec<TraceStep>,
    pub outcome: VerificationOutcome,
    /// Differences from the expected outcome; empty on success.
    pub deviations: Vec<String>,
}

impl Transcript {
    pub fn passed(&self) -> bool {
        self.deviations.is_empty()
    }
}

/// Seeds a fresh in-memory registry, runs the scenario and checks the result.
pub fn run_scenario(name: &str) -> Result<Transcript, ScenarioError> {
    let seeded_at = Timestamp(1_700_000_000);
    let at = Timestamp(1_700_000_100);
    let (prompt, attachments) = match name {
        "grimes-deny" => (DENY_PROMPT, vec![]),
        "grimes-grant" => (GRANT_PROMPT, vec![user_recording()]),
        other => return Err(ScenarioError::UnknownScenario(other.to_string())),
    };
    let ledger = Arc::new(Ledger::in_memory());
    let registry = Arc::new(Registry::in_memory().with_ledger(ledger.clone()));
    seed_grimes(&registry, seeded_at)?;
    let engine = OptInEngine::new(registry, ledger);
    let (outcome, steps) = engine.verify_with_trace(VerifyInput::prompt_with(prompt, attachments), at)?;

    let mut deviations = Vec::new();
    let reason_of = |id: Option<&str>, name: &str| {
        outcome
            .verdict
            .entity_verdicts
            .iter()
            .find(|v| v.entity_id.as_deref() == id && v.name == name)
            .map(|v| v.decision.reason)
    };
    match name {
        "grimes-deny" => {
            if outcome.verdict.overall != Overall::Denied {
                deviations.push("expected overall=denied".to_string());
            }
            if outcome.verdict.entity_verdicts.len() != 2 {
                deviations.push(format!("expected 2 entity verdicts, got {}", outcome.verdict.entity_verdicts.len()));
            }
            if reason_of(None, "Rolling in the Deep") != Some(Some(DenyReason::NotInRegistry)) {
                deviations.push("expected Rolling in the Deep denied with not_in_registry".to_string());
            }
            if reason_of(Some("grimes"), "Grimes") != Some(Some(DenyReason::RoleNotPermitted)) {
                deviations.push("expected Grimes denied with role_not_permitted".to_string());
            }
        }
        _ => {
            if outcome.verdict.overall != Overall::Granted {
                deviations.push("expected overall=granted".to_string());
            }
            match &outcome.grant {
                Some(g) => {
                    if g.entity_ids != ["grimes"] {
                        deviations.push(format!("expected grant for [grimes], got {:?}", g.entity_ids));
                    }
                    if g.compensation_eligible != [GRIMES_HOLDER] {
                        deviations.push(format!("expected compensation_eligible=[{GRIMES_HOLDER}]"));
                    }
                }
                None => deviations.push("expected a grant".to_string()),
            }
        }
    }
    Ok(Transcript { scenario: name.to_string(), prompt: prompt.to_string(), steps, outcome, deviations })
}
