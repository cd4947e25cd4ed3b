use super::*;
use crate::consent::{CombinationRule, PermissionRule};
use crate::intent::{Aspect, Role};

const SECRET: &str = "s3cret";

fn grimes_rule() -> PermissionRule {
    PermissionRule::new(Aspect::Voice, &[Role::Descriptor], CombinationRule::OriginalOnly)
}

fn seeded() -> Registry {
    let reg = Registry::in_memory();
    reg.register_rights_holder("rh-grimes", "Grimes management", SECRET, Timestamp(1)).unwrap();
    reg.register_entity(EntityRecord::new("grimes", EntityType::Person, "Grimes", "rh-grimes"), SECRET, Timestamp(2))
        .unwrap();
    reg
}

#[test]
fn registers_and_resolves() {
    let reg = seeded();
    assert_eq!(reg.resolve_alias("GRIMES  "), Some("grimes".into()));
    assert_eq!(reg.resolve_alias("Unknown Artist X"), None);
}

#[test]
fn alias_collision_and_auth() {
    let reg = seeded();
    let dup = EntityRecord::new("grimes-2", EntityType::Person, "Other", "rh-grimes").with_alias("Grimes");
    assert!(matches!(reg.register_entity(dup, SECRET, Timestamp(3)), Err(RegistryError::AliasCollision { .. })));
    let e = EntityRecord::new("x", EntityType::Person, "X", "rh-grimes");
    assert!(matches!(reg.register_entity(e.clone(), "wrong", Timestamp(3)), Err(RegistryError::Unauthorized)));
    let same = EntityRecord::new("grimes", EntityType::Person, "Grimes Again", "rh-grimes");
    assert!(matches!(reg.register_entity(same, SECRET, Timestamp(3)), Err(RegistryError::DuplicateEntityId(_))));
}

#[test]
fn work_part_needs_work_parent() {
    let reg = seeded();
    let orphan = EntityRecord { entity_type: EntityType::WorkPart, ..EntityRecord::new("p", EntityType::Work, "P", "rh-grimes") };
    assert!(matches!(reg.register_entity(orphan, SECRET, Timestamp(3)), Err(RegistryError::MalformedEntity(_))));
    let bad_parent =
        EntityRecord::new("p", EntityType::WorkPart, "P", "rh-grimes").part_of("grimes", &[Aspect::Composition]);
    assert!(matches!(reg.register_entity(bad_parent, SECRET, Timestamp(3)), Err(RegistryError::MalformedEntity(_))));
}

#[test]
fn upserts_version_and_lookup_is_temporal() {
    let reg = seeded();
    let v1 = reg.upsert_consent("grimes", ConsentDraft::new(vec![grimes_rule()]), SECRET, Timestamp(10)).unwrap();
    assert_eq!((v1.version, v1.rules.len()), (1, 1));
    let v2 = reg.upsert_consent("grimes", ConsentDraft::new(vec![grimes_rule()]), SECRET, Timestamp(20)).unwrap();
    assert_eq!(v2.version, 2);
    assert_eq!(v2.rules, v1.rules);
    assert_eq!(reg.lookup_consent("grimes", Timestamp(9)), None);
    assert_eq!(reg.lookup_consent("grimes", Timestamp(15)).unwrap().version, 1);
    assert_eq!(reg.lookup_consent("grimes", Timestamp(20)).unwrap().version, 2);
    assert_eq!(reg.lookup_consent("rolling-in-the-deep", Timestamp(20)), None);
}

#[test]
fn upsert_errors() {
    let reg = seeded();
    let empty_roles = PermissionRule::new(Aspect::Voice, &[], CombinationRule::Any);
    assert!(matches!(
        reg.upsert_consent("grimes", ConsentDraft::new(vec![empty_roles]), SECRET, Timestamp(10)),
        Err(RegistryError::MalformedRule { .. })
    ));
    assert!(matches!(
        reg.upsert_consent("nobody", ConsentDraft::new(vec![]), SECRET, Timestamp(10)),
        Err(RegistryError::UnknownEntity(_))
    ));
    assert!(matches!(
        reg.upsert_consent("grimes", ConsentDraft::new(vec![]), "nope", Timestamp(10)),
        Err(RegistryError::Unauthorized)
    ));
    reg.upsert_consent("grimes", ConsentDraft::new(vec![]), SECRET, Timestamp(10)).unwrap();
    let stale = ConsentDraft { expected_version: Some(0), ..ConsentDraft::new(vec![]) };
    assert!(matches!(
        reg.upsert_consent("grimes", stale, SECRET, Timestamp(11)),
        Err(RegistryError::VersionConflict { expected: 0, current: 1 })
    ));
    assert!(matches!(
        reg.upsert_consent("grimes", ConsentDraft::new(vec![]), SECRET, Timestamp(5)),
        Err(RegistryError::OutOfOrder { .. })
    ));
}

#[test]
fn revoke_flow() {
    let reg = seeded();
    assert!(matches!(reg.revoke_consent("grimes", SECRET, Timestamp(5)), Err(RegistryError::NoConsentRecord(_))));
    reg.upsert_consent("grimes", ConsentDraft::new(vec![grimes_rule()]), SECRET, Timestamp(10)).unwrap();
    let r = reg.revoke_consent("grimes", SECRET, Timestamp(20)).unwrap();
    assert_eq!((r.version, r.status), (2, RecordStatus::Revoked));
    assert!(matches!(reg.revoke_consent("grimes", SECRET, Timestamp(21)), Err(RegistryError::AlreadyRevoked(_))));
    assert_eq!(reg.consent_history("grimes").len(), 2);
}

#[test]
fn consent_changes_reach_the_ledger() {
    let ledger = Arc::new(Ledger::in_memory());
    let reg = Registry::in_memory().with_ledger(ledger.clone());
    reg.register_rights_holder("rh", "RH", SECRET, Timestamp(0)).unwrap();
    reg.register_entity(EntityRecord::new("e", EntityType::Work, "E", "rh"), SECRET, Timestamp(0)).unwrap();
    reg.upsert_consent("e", ConsentDraft::new(vec![]), SECRET, Timestamp(1)).unwrap();
    reg.revoke_consent("e", SECRET, Timestamp(2)).unwrap();
    let entries = ledger.entries();
    assert_eq!(entries.len(), 2);
    assert!(entries.iter().all(|e| e.kind == EntryKind::ConsentChange));
}

#[test]
fn batch_query_audits_once() {
    let reg = seeded();
    reg.upsert_consent("grimes", ConsentDraft::new(vec![grimes_rule()]), SECRET, Timestamp(10)).unwrap();
    assert!(matches!(reg.batch_query(&[], Requester::OptinAgent, Timestamp(11)), Err(RegistryError::EmptyBatch)));
    let ids = vec!["rolling-in-the-deep".to_string(), "grimes".to_string()];
    let out = reg.batch_query(&ids, Requester::OptinAgent, Timestamp(11)).unwrap();
    assert_eq!(out.results["rolling-in-the-deep"], None);
    assert_eq!(out.results["grimes"], reg.lookup_consent("grimes", Timestamp(11)));
    assert_eq!(out.audit.entity_ids.len(), 2);
    assert_eq!(out.audit.results_summary["grimes"], QueryResult::Found);
    assert_eq!(reg.audits().len(), 1);
}

#[test]
fn report_is_scoped_to_holder() {
    let reg = seeded();
    reg.register_rights_holder("rh-other", "Other", "o", Timestamp(1)).unwrap();
    reg.register_entity(EntityRecord::new("other", EntityType::Work, "Other Song", "rh-other"), "o", Timestamp(2))
        .unwrap();
    reg.batch_query(&["grimes".into(), "other".into()], Requester::OptinAgent, Timestamp(30)).unwrap();
    reg.batch_query(&["other".into()], Requester::OptinAgent, Timestamp(31)).unwrap();
    let report = reg.rights_holder_report("rh-grimes", SECRET, TimeRange::ALL).unwrap();
    assert_eq!(report.queries.len(), 1);
    assert_eq!(report.queries[0].entity_ids, vec!["grimes".to_string()]);
    assert_eq!(report.entities.len(), 1);
    let empty = TimeRange::new(Some(Timestamp(100)), Some(Timestamp(200))).unwrap();
    let report = reg.rights_holder_report("rh-grimes", SECRET, empty).unwrap();
    assert!(report.queries.is_empty());
    assert_eq!(report.entities.len(), 1);
    assert!(matches!(reg.rights_holder_report("rh-grimes", "bad", TimeRange::ALL), Err(RegistryError::Unauthorized)));
}

#[test]
fn file_registry_replays() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.log");
    {
        let reg = Registry::open(&path).unwrap();
        reg.register_rights_holder("rh-grimes", "G", SECRET, Timestamp(1)).unwrap();
        reg.register_entity(EntityRecord::new("grimes", EntityType::Person, "Grimes", "rh-grimes"), SECRET, Timestamp(2))
            .unwrap();
        reg.upsert_consent("grimes", ConsentDraft::new(vec![grimes_rule()]), SECRET, Timestamp(3)).unwrap();
        reg.batch_query(&["grimes".into()], Requester::OptinAgent, Timestamp(4)).unwrap();
    }
    let reg = Registry::open(&path).unwrap();
    assert_eq!(reg.resolve_alias("grimes"), Some("grimes".into()));
    assert_eq!(reg.lookup_consent("grimes", Timestamp(5)).unwrap().version, 1);
    assert_eq!(reg.audits().len(), 1);
    let log = reg.event_log().unwrap();
    assert_eq!(log.len(), 4);
    assert_eq!(log[2]["kind"], "consent_upserted");
}

#[test]
fn export_import_round_trip() {
    let reg = seeded();
    reg.register_entity(EntityRecord::new("song", EntityType::Work, "Song", "rh-grimes"), SECRET, Timestamp(3)).unwrap();
    reg.register_entity(
        EntityRecord::new("song-lyrics", EntityType::WorkPart, "Song lyrics", "rh-grimes").part_of("song", &[Aspect::Lyrics]),
        SECRET,
        Timestamp(3),
    )
    .unwrap();
    reg.upsert_consent("grimes", ConsentDraft::new(vec![grimes_rule()]), SECRET, Timestamp(10)).unwrap();
    reg.revoke_consent("grimes", SECRET, Timestamp(11)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    reg.export_dir(dir.path()).unwrap();
    let copy = Registry::in_memory();
    copy.import_dir(dir.path()).unwrap();
    assert_eq!(copy.entities(), reg.entities());
    assert_eq!(copy.consent_history("grimes"), reg.consent_history("grimes"));
    copy.authenticate("rh-grimes", SECRET).unwrap();
}
