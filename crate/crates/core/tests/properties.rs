//! Property tests for the invariants every component promises.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use proptest::sample::select;

use optin_core::canonical::Digest;
use optin_core::consent::{
    evaluate_entity_use, evaluate_request, AspectSelector, CombinationRule, ConsentRecord, EntityUse, Outcome, Overall,
    PermissionRule, QualifierConstraints, RecordStatus, ValidityWindow,
};
use optin_core::engine::scenario::{seed_grimes, user_recording, GRIMES_SECRET};
use optin_core::engine::{generate_guidance, OptInEngine, VerifyInput};
use optin_core::ingest::{
    declarations_to_draft, export_ai_preferences_text, import_ai_preferences_text, Action, Directive,
    PreferenceDeclaration, Scope, SourceFormat,
};
use optin_core::intent::{
    classify_reference_role, extract_entity_refs, parse_structured_intent, to_document, validate_intent, Aspect,
    CombinationClass, Descriptor, EntityRef, EntityType, IntentRequest, Qualifier, QualifierValue, Role,
    Transformation,
};
use optin_core::ledger::{verify_chain_bytes, EntryKind, Ledger, LedgerFilter};
use optin_core::registry::{ConsentDraft, EntityRecord, Registry, Requester};
use optin_core::time::{TimeRange, Timestamp};

// ------------------------------------------------------------ strategies

fn arb_aspect() -> impl Strategy<Value = Aspect> {
    prop_oneof![
        select(Aspect::CORE.to_vec()),
        select(vec!["guitar", "bass", "drums"]).prop_map(|s| Aspect::stem(s).expect("valid stem")),
    ]
}

fn arb_entity_ref() -> impl Strategy<Value = EntityRef> {
    (
        select(vec![EntityType::Person, EntityType::Group, EntityType::Work, EntityType::WorkPart]),
        "[A-Z][a-z]{1,8}( [A-Z][a-z]{1,8})?",
        proptest::option::of("[a-z]{1,8}"),
    )
        .prop_map(|(t, name, resolved_id)| EntityRef { resolved_id, ..EntityRef::new(t, name) })
}

fn arb_descriptor() -> impl Strategy<Value = Descriptor> {
    prop_oneof![
        (arb_entity_ref(), arb_aspect()).prop_map(|(r, a)| Descriptor::specific(r, a)),
        ("[a-z]{3,10}", arb_aspect()).prop_map(|(c, a)| Descriptor::generic(c, a)),
        (any::<[u8; 4]>(), arb_aspect()).prop_map(|(b, a)| Descriptor::original(Digest::of(&b), a)),
    ]
}

fn arb_transformation() -> impl Strategy<Value = Transformation> {
    prop_oneof![
        (arb_entity_ref(), arb_aspect()).prop_map(|(r, a)| Transformation::specific(r, a)),
        ("[a-z]{3,10}", arb_aspect()).prop_map(|(c, a)| Transformation::generic(c, a)),
        ("[a-z]{3,6} [a-z]{3,6}", arb_aspect()).prop_map(|(t, a)| Transformation::foundational(t, a)),
    ]
}

fn arb_qualifier() -> impl Strategy<Value = Qualifier> {
    prop_oneof![
        (0u32..600).prop_map(|n| Qualifier::quality("duration_s", QualifierValue::Number(f64::from(n)))),
        select(vec!["high", "low"]).prop_map(|v| Qualifier::quality("resolution", QualifierValue::Text(v.into()))),
        select(vec!["instagram", "tiktok", "youtube"]).prop_map(Qualifier::distribution),
        select(vec!["commercial", "personal", "parody"]).prop_map(Qualifier::purpose),
    ]
}

fn arb_intent() -> impl Strategy<Value = IntentRequest> {
    (
        prop::collection::vec(arb_descriptor(), 1..4),
        prop::collection::vec(arb_transformation(), 0..3),
        prop::collection::vec(arb_qualifier(), 0..3),
        proptest::option::of("[a-zA-Z ']{0,40}"),
        0i64..4_000_000_000,
        any::<bool>(),
    )
        .prop_map(|(descriptors, mut transformations, qualifiers, raw_input, at, bind)| {
            if bind {
                for (i, t) in transformations.iter_mut().enumerate() {
                    t.applies_to = vec![i % descriptors.len()];
                }
            }
            IntentRequest { descriptors, transformations, qualifiers, raw_input, received_at: Timestamp(at) }
        })
}

fn arb_constraints() -> impl Strategy<Value = QualifierConstraints> {
    prop_oneof![
        Just(QualifierConstraints::default()),
        Just(QualifierConstraints { purpose_allow: Some(["personal".to_string()].into()), ..Default::default() }),
        Just(QualifierConstraints { distribution_deny: ["tiktok".to_string()].into(), ..Default::default() }),
        Just(QualifierConstraints { quality_caps: [("duration_s".to_string(), 30.0)].into(), ..Default::default() }),
    ]
}

fn arb_rule() -> impl Strategy<Value = PermissionRule> {
    (
        prop_oneof![Just(AspectSelector::Any), select(vec![Aspect::Voice, Aspect::Style, Aspect::Lyrics]).prop_map(AspectSelector::Only)],
        select(vec![vec![Role::Descriptor], vec![Role::Transformation], vec![Role::Descriptor, Role::Transformation]]),
        select(vec![CombinationRule::OriginalOnly, CombinationRule::Any, CombinationRule::None]),
        arb_constraints(),
        proptest::option::of((0i64..100, 1i64..100).prop_map(|(from, len)| ValidityWindow::bounded(Timestamp(from), Timestamp(from + len)))),
    )
        .prop_map(|(aspect, roles, combination, constraints, validity)| {
            let mut rule = PermissionRule::new(aspect, &roles, combination).with_constraints(constraints);
            rule.validity = validity;
            rule
        })
}

fn arb_use() -> impl Strategy<Value = EntityUse> {
    (
        select(vec![Aspect::Voice, Aspect::Style, Aspect::Lyrics]),
        select(vec![Role::Descriptor, Role::Transformation]),
        select(vec![CombinationClass::OriginalOnly, CombinationClass::Mixed]),
        prop::collection::vec(arb_qualifier(), 0..3),
        any::<bool>(),
    )
        .prop_map(|(aspect, role, combination, qualifiers, solo)| EntityUse { aspect, role, combination, qualifiers, solo })
}

fn record(rules: Vec<PermissionRule>) -> ConsentRecord {
    ConsentRecord {
        entity_id: "e".into(),
        rights_holder_id: "rh".into(),
        version: 1,
        status: RecordStatus::Active,
        validity: ValidityWindow::open_from(Timestamp(0)),
        rules,
        updated_at: Timestamp(0),
        declared_preferences: BTreeMap::new(),
    }
}

// ------------------------------------------------------------ intents

proptest! {
    #[test]
    fn intent_documents_round_trip(r in arb_intent()) {
        prop_assume!(validate_intent(&r).is_empty());
        let doc = to_document(&r);
        prop_assert_eq!(parse_structured_intent(&doc).unwrap(), r);
    }

    #[test]
    fn extraction_covers_exactly_the_specific_components(r in arb_intent()) {
        let refs = extract_entity_refs(&r);
        prop_assert_eq!(refs.len(), r.specific_components().count());
        for e in &refs {
            prop_assert_eq!(classify_reference_role(e.component, &r), e.role);
            prop_assert_eq!(classify_reference_role(e.component, &r), classify_reference_role(e.component, &r.clone()));
        }
    }
}

// ------------------------------------------------------------ evaluation

proptest! {
    #[test]
    fn absent_records_always_deny(u in arb_use(), t in any::<i64>()) {
        prop_assert_eq!(evaluate_entity_use(&u, None, Timestamp(t)).outcome, Outcome::Denied);
    }

    #[test]
    fn adding_a_rule_never_revokes_a_permit(
        rules in prop::collection::vec(arb_rule(), 0..4),
        extra in arb_rule(),
        position in 0usize..5,
        u in arb_use(),
        t in 0i64..200,
    ) {
        let before = evaluate_entity_use(&u, Some(&record(rules.clone())), Timestamp(t));
        let mut more = rules;
        more.insert(position.min(more.len()), extra);
        let after = evaluate_entity_use(&u, Some(&record(more)), Timestamp(t));
        if before.is_permitted() {
            prop_assert!(after.is_permitted());
        }
    }

    #[test]
    fn removing_every_permitting_rule_denies(rules in prop::collection::vec(arb_rule(), 1..5), u in arb_use(), t in 0i64..200) {
        let at = Timestamp(t);
        prop_assume!(evaluate_entity_use(&u, Some(&record(rules.clone())), at).is_permitted());
        let remaining: Vec<PermissionRule> = rules
            .into_iter()
            .filter(|r| !evaluate_entity_use(&u, Some(&record(vec![r.clone()])), at).is_permitted())
            .collect();
        let outcome = evaluate_entity_use(&u, Some(&record(remaining)), at).outcome;
        prop_assert_eq!(outcome, Outcome::Denied);
    }

    #[test]
    fn rule_order_never_changes_the_outcome(rules in prop::collection::vec(arb_rule(), 0..5), u in arb_use(), t in 0i64..200) {
        let forward = evaluate_entity_use(&u, Some(&record(rules.clone())), Timestamp(t));
        let reversed: Vec<PermissionRule> = rules.into_iter().rev().collect();
        let backward = evaluate_entity_use(&u, Some(&record(reversed)), Timestamp(t));
        prop_assert_eq!(forward.outcome, backward.outcome);
    }

    #[test]
    fn request_evaluation_is_deterministic_and_conjunctive(
        r in arb_intent(),
        rules in prop::collection::vec(arb_rule(), 0..3),
        t in 0i64..200,
    ) {
        prop_assume!(validate_intent(&r).is_empty());
        let records: BTreeMap<String, ConsentRecord> = extract_entity_refs(&r)
            .iter()
            .filter_map(|e| e.entity_ref.resolved_id.clone())
            .map(|id| (id.clone(), ConsentRecord { entity_id: id, ..record(rules.clone()) }))
            .collect();
        let a = evaluate_request(&r, &records, Timestamp(t)).unwrap();
        let b = evaluate_request(&r.clone(), &records.clone(), Timestamp(t)).unwrap();
        prop_assert_eq!(&a, &b);
        if a.overall == Overall::Granted {
            prop_assert!(a.entity_verdicts.iter().all(|v| v.decision.is_permitted()));
        }
        prop_assert_eq!(generate_guidance(&a, &r), generate_guidance(&b, &r));
    }
}

// ------------------------------------------------------------ registry

#[derive(Debug, Clone)]
enum Op {
    Upsert(usize, Vec<PermissionRule>),
    Revoke(usize),
    Query(Vec<usize>),
}

fn arb_ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            (0usize..3, prop::collection::vec(arb_rule(), 0..2)).prop_map(|(e, r)| Op::Upsert(e, r)),
            (0usize..3).prop_map(Op::Revoke),
            prop::collection::vec(0usize..4, 1..4).prop_map(Op::Query),
        ],
        0..20,
    )
}

const ENTITIES: [&str; 3] = ["alpha", "beta", "gamma"];

fn entity_name(i: usize) -> String {
    ENTITIES.get(i).map(|s| s.to_string()).unwrap_or_else(|| "unregistered".to_string())
}

proptest! {
    #[test]
    fn registry_history_audits_and_time_travel(ops in arb_ops()) {
        let reg = Registry::in_memory();
        reg.register_rights_holder("rh", "RH", "s", Timestamp(0)).unwrap();
        for e in ENTITIES {
            reg.register_entity(EntityRecord::new(e, EntityType::Work, &e.to_uppercase(), "rh"), "s", Timestamp(0)).unwrap();
        }
        let mut snapshots: Vec<BTreeMap<String, Vec<ConsentRecord>>> = Vec::new();
        let mut queried: BTreeMap<String, usize> = BTreeMap::new();
        for (i, op) in ops.iter().enumerate() {
            let at = Timestamp(10 * (i as i64 + 1));
            match op {
                Op::Upsert(e, rules) => {
                    reg.upsert_consent(ENTITIES[*e], ConsentDraft::new(rules.clone()), "s", at).unwrap();
                }
                Op::Revoke(e) => {
                    let _ = reg.revoke_consent(ENTITIES[*e], "s", at);
                }
                Op::Query(ids) => {
                    let ids: Vec<String> = ids.iter().map(|i| entity_name(*i)).collect();
                    reg.batch_query(&ids, Requester::OptinAgent, at).unwrap();
                    for id in ids.iter().collect::<BTreeSet<_>>() {
                        *queried.entry(id.clone()).or_default() += 1;
                    }
                }
            }
            snapshots.push(ENTITIES.iter().map(|e| (e.to_string(), reg.consent_history(e))).collect());
        }
        for e in ENTITIES {
            let history = reg.consent_history(e);
            // Versions are 1..n without gaps, and earlier versions never change.
            prop_assert!(history.iter().enumerate().all(|(i, r)| r.version == i as u32 + 1));
            for snap in &snapshots {
                prop_assert_eq!(&history[..snap[e].len()], &snap[e][..]);
            }
            // Lookups only see versions already written at that instant.
            for t in (0..=10 * (ops.len() as i64 + 1)).step_by(5) {
                let expected = history.iter().rfind(|r| r.updated_at <= Timestamp(t)).cloned();
                prop_assert_eq!(reg.lookup_consent(e, Timestamp(t)), expected);
            }
        }
        prop_assert_eq!(reg.lookup_consent("unregistered", Timestamp(i64::MAX)), None);
        for (id, n) in queried {
            let audits = reg.audits().iter().filter(|a| a.entity_ids.contains(&id)).count();
            prop_assert_eq!(audits, n);
        }
    }
}

// ------------------------------------------------------------ engine

const PROMPTS: &[&str] = &[
    "Sing this song with Grimes's voice",
    "Create a song from 'Rolling in the Deep' with Grimes's voice",
    "Turn this image into a Ghibli anime style",
    "Create a jazz song",
    "Create a song from 'Alpha Song' for commercial use",
    "Remix this track with the beat of 'Alpha Song' on TikTok",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn engine_logs_once_and_grants_only_unanimously(
        picks in prop::collection::vec((0..PROMPTS.len(), any::<bool>()), 1..8),
        alpha_rules in prop::collection::vec(arb_rule(), 0..3),
    ) {
        let ledger = Arc::new(Ledger::in_memory());
        let registry = Arc::new(Registry::in_memory().with_ledger(ledger.clone()));
        seed_grimes(&registry, Timestamp(0)).unwrap();
        registry
            .register_entity(EntityRecord::new("alpha-song", EntityType::Work, "Alpha Song", "rh-grimes"), GRIMES_SECRET, Timestamp(0))
            .unwrap();
        registry.upsert_consent("alpha-song", ConsentDraft::new(alpha_rules), GRIMES_SECRET, Timestamp(0)).unwrap();
        let engine = OptInEngine::new(registry, ledger.clone());

        for (i, (p, unlock)) in picks.into_iter().enumerate() {
            let at = Timestamp(50 + i as i64);
            let input = || VerifyInput::prompt_with(PROMPTS[p], vec![user_recording()]);
            let before = ledger.entries();
            let outcome = engine.verify(input(), at).unwrap();
            let added: Vec<EntryKind> = ledger.entries()[before.len()..].iter().map(|e| e.kind).collect();
            prop_assert_eq!(added, vec![EntryKind::Verification]);

            let all_permitted = outcome.verdict.entity_verdicts.iter().all(|v| v.decision.is_permitted());
            prop_assert_eq!(outcome.verdict.is_granted(), all_permitted && outcome.verdict.overall == Overall::Granted);
            if unlock {
                let generations = || ledger.entries().iter().filter(|e| e.kind == EntryKind::Generation).count();
                let g0 = generations();
                let unlocked = engine.unlock_generation(&outcome, at);
                prop_assert_eq!(unlocked.is_ok(), outcome.verdict.is_granted());
                prop_assert_eq!(generations(), g0 + usize::from(unlocked.is_ok()));
            }

            let replay = engine.verify(input(), at).unwrap();
            prop_assert_eq!(&replay.verdict, &outcome.verdict);
            prop_assert_eq!(&replay.guidance, &outcome.guidance);
        }
    }
}

// ------------------------------------------------------------ ledger

fn arb_entries() -> impl Strategy<Value = Vec<(usize, i64, Vec<String>)>> {
    prop::collection::vec((0usize..4, 0i64..1000, prop::collection::vec(select(vec!["a", "b", "c"]).prop_map(String::from), 0..3)), 1..40)
}

const KINDS: [EntryKind; 4] = [EntryKind::Verification, EntryKind::Generation, EntryKind::Dissemination, EntryKind::ConsentChange];

proptest! {
    #[test]
    fn chains_verify_and_detect_any_bit_flip(entries in arb_entries(), pick in any::<prop::sample::Index>(), bit in 0u8..8) {
        let ledger = Ledger::in_memory();
        for (k, at, ids) in &entries {
            ledger.append_entry(KINDS[*k], Timestamp(*at), &serde_json::json!({ "entity_ids": ids })).unwrap();
        }
        let report = ledger.verify_chain().unwrap();
        prop_assert!(report.valid);
        prop_assert_eq!(report.entries, entries.len() as u64);

        let mut bytes = ledger.stored_bytes().unwrap();
        let offset = pick.index(bytes.len());
        bytes[offset] ^= 1 << bit;
        let expected = bytes[..offset].iter().filter(|&&b| b == b'\n').count() as u64;
        let report = verify_chain_bytes(&bytes);
        prop_assert!(!report.valid);
        prop_assert_eq!(report.first_bad_seq, Some(expected));
    }

    #[test]
    fn ledger_queries_equal_a_full_scan(
        entries in arb_entries(),
        kind in proptest::option::of(0usize..4),
        entity in proptest::option::of(select(vec!["a", "b", "c"])),
        from in proptest::option::of(0i64..1000),
        len in 1i64..1000,
    ) {
        let ledger = Ledger::in_memory();
        for (k, at, ids) in &entries {
            ledger.append_entry(KINDS[*k], Timestamp(*at), &serde_json::json!({ "entity_ids": ids })).unwrap();
        }
        let range = TimeRange::new(from.map(Timestamp), from.map(|f| Timestamp(f + len))).unwrap();
        let filter = LedgerFilter { kind: kind.map(|k| KINDS[k]), entity_id: entity.map(String::from), range, ..Default::default() };
        let got: Vec<u64> = ledger.query_entries(&filter).iter().map(|r| r.entry.seq).collect();
        let expected: Vec<u64> = entries
            .iter()
            .enumerate()
            .filter(|(_, (k, at, ids))| {
                kind.is_none_or(|want| want == *k)
                    && from.is_none_or(|f| f <= *at && *at < f + len)
                    && entity.is_none_or(|e| ids.iter().any(|i| i == e))
            })
            .map(|(i, _)| i as u64)
            .collect();
        prop_assert_eq!(got, expected);
    }
}

// ------------------------------------------------------------ ingest

fn arb_declaration() -> impl Strategy<Value = PreferenceDeclaration> {
    (
        prop_oneof![
            Just(Scope::Site),
            "/[a-z]{1,8}/".prop_map(Scope::Path),
            "isrc:[A-Z0-9]{6,12}".prop_map(Scope::ContentId),
        ],
        prop::collection::btree_map(select(Action::ALL.to_vec()), select(vec![Directive::Allow, Directive::Deny]), 1..9),
        proptest::option::of("https://[a-z]{3,10}\\.example/[a-z]{0,8}"),
    )
        .prop_map(|(scope, directives, policy_url)| PreferenceDeclaration {
            source_format: SourceFormat::AiPrefsText,
            scope,
            directives,
            policy_url,
        })
}

proptest! {
    #[test]
    fn preference_text_round_trips(decls in prop::collection::vec(arb_declaration(), 0..4)) {
        let text = export_ai_preferences_text(&decls);
        prop_assert_eq!(import_ai_preferences_text(&text).unwrap(), decls);
    }

    #[test]
    fn imports_never_grant_more_than_output(decls in prop::collection::vec(arb_declaration(), 1..4)) {
        let draft = declarations_to_draft(&decls).unwrap();
        let outputs: Vec<Directive> = decls.iter().filter_map(|d| d.directives.get(&Action::Output).copied()).collect();
        let output_allowed = outputs.contains(&Directive::Allow) && !outputs.contains(&Directive::Deny);
        if output_allowed {
            prop_assert_eq!(draft.rules.len(), 1);
            let rule = &draft.rules[0];
            prop_assert_eq!(&rule.aspect, &AspectSelector::Any);
            prop_assert!(rule.qualifier_constraints.is_empty());
        } else {
            prop_assert!(draft.rules.is_empty());
        }
    }
}
