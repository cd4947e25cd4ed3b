use super::scenario::{grimes_rule, seed_grimes, user_recording, DENY_PROMPT, GRANT_PROMPT, GRIMES_SECRET};
use super::*;
use crate::consent::{CombinationRule, DenyReason, Overall, PermissionRule};
use crate::intent::{Aspect, ComponentId, EntityType, Role};
use crate::registry::{ConsentDraft, EntityRecord};

const T0: Timestamp = Timestamp(1_000);
const T1: Timestamp = Timestamp(2_000);

fn engine() -> OptInEngine {
    let e = OptInEngine::in_memory();
    seed_grimes(e.registry(), T0).unwrap();
    e
}

fn reason(o: &VerificationOutcome, name: &str) -> Option<DenyReason> {
    o.verdict.entity_verdicts.iter().find(|v| v.name == name).and_then(|v| v.decision.reason)
}

#[test]
fn deny_scenario_with_guidance() {
    let e = engine();
    let o = e.verify(VerifyInput::prompt(DENY_PROMPT), T1).unwrap();
    assert_eq!(o.verdict.overall, Overall::Denied);
    assert_eq!(reason(&o, "Rolling in the Deep"), Some(DenyReason::NotInRegistry));
    assert_eq!(reason(&o, "Grimes"), Some(DenyReason::RoleNotPermitted));
    assert!(o.grant.is_none());
    let kinds: Vec<(ComponentId, SuggestionKind)> = o.guidance.iter().map(|s| (s.target, s.kind)).collect();
    assert_eq!(
        kinds,
        vec![
            (ComponentId::Descriptor(0), SuggestionKind::RemoveReference),
            (ComponentId::Descriptor(0), SuggestionKind::ReplaceWithOriginal),
        ]
    );
}

#[test]
fn grant_scenario() {
    let e = engine();
    let o = e.verify(VerifyInput::prompt_with(GRANT_PROMPT, vec![user_recording()]), T1).unwrap();
    assert_eq!(o.verdict.overall, Overall::Granted);
    let grant = o.grant.clone().unwrap();
    assert_eq!(grant.entity_ids, vec!["grimes".to_string()]);
    assert_eq!(grant.compensation_eligible, vec!["rh-grimes".to_string()]);
    assert_eq!(grant.entities[0].record_version, 1);
    assert!(o.guidance.is_empty());

    let unlocked = e.unlock_generation(&o, T1).unwrap();
    assert_eq!(unlocked, grant);
    e.unlock_generation(&o, T1).unwrap();
    let generation = LedgerFilter { kind: Some(EntryKind::Generation), ..Default::default() };
    assert_eq!(e.ledger().query_entries(&generation).len(), 1);

    let other = e.verify(VerifyInput::prompt_with(GRANT_PROMPT, vec![user_recording()]), T1).unwrap();
    assert_ne!(other.grant_id(), o.grant_id());
}

#[test]
fn denied_outcome_cannot_unlock() {
    let e = engine();
    let o = e.verify(VerifyInput::prompt(DENY_PROMPT), T1).unwrap();
    assert!(matches!(e.unlock_generation(&o, T1), Err(EngineError::NotGranted)));
}

#[test]
fn generic_only_request_is_granted_with_reframe_advice() {
    let e = engine();
    let o = e
        .verify(VerifyInput::prompt_with("Turn this image into an anime style", vec![user_recording()]), T1)
        .unwrap();
    assert_eq!(o.verdict.overall, Overall::Granted);
    assert!(o.verdict.entity_verdicts.is_empty());
    assert!(o.guidance.iter().any(|s| s.kind == SuggestionKind::ReframeGeneric));
}

#[test]
fn one_verification_entry_per_call() {
    let e = engine();
    for _ in 0..3 {
        e.verify(VerifyInput::prompt(DENY_PROMPT), T1).unwrap();
    }
    let verifications = LedgerFilter { kind: Some(EntryKind::Verification), ..Default::default() };
    assert_eq!(e.ledger().query_entries(&verifications).len(), 3);
    let by_entity = LedgerFilter { entity_id: Some("grimes".into()), ..verifications };
    assert_eq!(e.ledger().query_entries(&by_entity).len(), 3);
}

#[test]
fn parse_failures_propagate() {
    let e = engine();
    assert!(matches!(e.verify(VerifyInput::prompt(""), T1), Err(EngineError::Parse(ParseError::EmptyInput))));
    assert!(matches!(
        e.verify(VerifyInput::prompt("make something cool"), T1),
        Err(EngineError::Parse(ParseError::UnrecognizedPattern { .. }))
    ));
    assert!(e.ledger().is_empty() || e.ledger().entries().iter().all(|x| x.kind == EntryKind::ConsentChange));
}

struct Canned(IntentRequest);

impl IntentExtractor for Canned {
    fn extract(&self, _: &str, _: &[Attachment]) -> Result<IntentRequest, ParseError> {
        Ok(self.0.clone())
    }
}

#[test]
fn fallback_extractor_handles_unrecognized_text() {
    let canned = parse_text_prompt(DENY_PROMPT, &[]).unwrap();
    let e = engine().with_fallback_extractor(Box::new(Canned(canned)));
    let o = e.verify(VerifyInput::prompt("make something cool"), T1).unwrap();
    assert_eq!(o.verdict.entity_verdicts.len(), 2);
}

#[test]
fn resolution_is_exact_normalized() {
    let e = engine();
    let refs = [
        EntityRef::new(EntityType::Person, "Grimes"),
        EntityRef::new(EntityType::Person, "GRIMES  "),
        EntityRef::new(EntityType::Person, "Unknown Artist X"),
        EntityRef::new(EntityType::Person, "Grime"),
    ];
    let ids: Vec<Option<String>> = e.resolve_entities(&refs).into_iter().map(|r| r.resolved_id).collect();
    assert_eq!(ids, vec![Some("grimes".into()), Some("grimes".into()), None, None]);
}

#[test]
fn dissemination_rechecks_distribution() {
    let e = OptInEngine::in_memory();
    let reg = e.registry();
    reg.register_rights_holder("rh-grimes", "Grimes", GRIMES_SECRET, T0).unwrap();
    reg.register_entity(EntityRecord::new("grimes", EntityType::Person, "Grimes", "rh-grimes"), GRIMES_SECRET, T0).unwrap();
    let rule = grimes_rule().with_constraints(crate::consent::QualifierConstraints {
        distribution_allow: Some(["instagram".to_string()].into()),
        ..Default::default()
    });
    reg.upsert_consent("grimes", ConsentDraft::new(vec![rule]), GRIMES_SECRET, T0).unwrap();

    let o = e
        .verify(VerifyInput::prompt_with("Sing this song with Grimes's voice for Instagram", vec![user_recording()]), T1)
        .unwrap();
    let grant_id = o.grant_id().expect("granted").to_string();
    let ok = e.register_dissemination(&grant_id, "instagram", "social_sharing", T1).unwrap();
    assert_eq!(ok.dissemination.outcome, DisseminationOutcome::Allowed);
    let blocked = e.register_dissemination(&grant_id, "tiktok", "social_sharing", T1).unwrap();
    assert_eq!(blocked.dissemination.outcome, DisseminationOutcome::Blocked);
    assert!(matches!(e.register_dissemination("grant-999", "x", "y", T1), Err(EngineError::UnknownGrant(_))));

    // Without the platform the exclusive allow-set is unmet.
    let o = e.verify(VerifyInput::prompt_with(GRANT_PROMPT, vec![user_recording()]), T1).unwrap();
    assert_eq!(reason(&o, "Grimes"), Some(DenyReason::QualifierViolation));
    let adjust = o.guidance.iter().find(|s| s.kind == SuggestionKind::AdjustQualifier).unwrap();
    assert!(adjust.text.contains("instagram"), "{}", adjust.text);
}

#[test]
fn revocation_and_expiry_flow_through() {
    let e = engine();
    let input = || VerifyInput::prompt_with(GRANT_PROMPT, vec![user_recording()]);
    assert!(e.verify(input(), T1).unwrap().verdict.is_granted());
    e.registry().revoke_consent("grimes", GRIMES_SECRET, Timestamp(3_000)).unwrap();
    let o = e.verify(input(), Timestamp(3_000)).unwrap();
    assert_eq!(reason(&o, "Grimes"), Some(DenyReason::Revoked));
    // Replay at the earlier time sees the earlier version.
    assert!(e.verify(input(), T1).unwrap().verdict.is_granted());
}

#[test]
fn work_parts_are_conjoined() {
    let e = engine();
    let reg = e.registry();
    reg.register_rights_holder("rh-label", "Label", "l", T0).unwrap();
    reg.register_rights_holder("rh-writer", "Writer", "w", T0).unwrap();
    reg.register_entity(EntityRecord::new("song", EntityType::Work, "Song", "rh-label"), "l", T0).unwrap();
    reg.register_entity(
        EntityRecord::new("song-recording", EntityType::WorkPart, "Song (recording)", "rh-label")
            .part_of("song", &[Aspect::Recording]),
        "l",
        T0,
    )
    .unwrap();
    reg.register_entity(
        EntityRecord::new("song-lyrics", EntityType::WorkPart, "Song (lyrics)", "rh-writer").part_of("song", &[Aspect::Lyrics]),
        "w",
        T0,
    )
    .unwrap();
    let any = PermissionRule::new(crate::consent::AspectSelector::Any, &[Role::Descriptor, Role::Transformation], CombinationRule::Any);
    reg.upsert_consent("song-recording", ConsentDraft::new(vec![any.clone()]), "l", T0).unwrap();

    let prompt = || VerifyInput::prompt("Create a song from 'Song'");
    let o = e.verify(prompt(), T1).unwrap();
    let ids: Vec<_> = o.verdict.entity_verdicts.iter().map(|v| v.entity_id.clone().unwrap()).collect();
    assert_eq!(ids, vec!["song-lyrics".to_string(), "song-recording".to_string()]);
    assert_eq!(o.verdict.overall, Overall::Denied);

    reg.upsert_consent("song-lyrics", ConsentDraft::new(vec![any]), "w", T1).unwrap();
    let o = e.verify(prompt(), T1).unwrap();
    assert_eq!(o.verdict.overall, Overall::Granted);
    assert_eq!(o.grant.unwrap().compensation_eligible, vec!["rh-label".to_string(), "rh-writer".to_string()]);
}

#[test]
fn transparency_report_counts() {
    let e = engine();
    e.verify(VerifyInput::prompt(DENY_PROMPT), T1).unwrap();
    let r = e.transparency_report("rh-grimes", GRIMES_SECRET, crate::time::TimeRange::ALL).unwrap();
    assert_eq!(r.registry.queries.len(), 1);
    let verifications = r.ledger_entries.iter().filter(|x| x.entry.kind == EntryKind::Verification).count();
    assert_eq!(verifications, 1);
}

#[test]
fn engine_restores_grants_from_ledger() {
    let e = engine();
    let o = e.verify(VerifyInput::prompt_with(GRANT_PROMPT, vec![user_recording()]), T1).unwrap();
    let restored = OptInEngine::new(e.registry().clone(), e.ledger().clone());
    assert_eq!(restored.grant(o.grant_id().unwrap()), o.grant);
}

#[test]
fn scenarios_pass() {
    for name in scenario::SCENARIOS {
        let t = scenario::run_scenario(name).unwrap();
        assert!(t.passed(), "{name}: {:?}", t.deviations);
        let stages: Vec<&str> = t.steps.iter().map(|s| s.stage.as_str()).collect();
        assert_eq!(stages, ["parse", "extract", "resolve", "query", "evaluate", "verdict", "guidance"]);
    }
    assert!(matches!(scenario::run_scenario("nonexistent"), Err(scenario::ScenarioError::UnknownScenario(_))));
}
