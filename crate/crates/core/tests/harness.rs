mod common;

use proptest::prelude::*;

use common::{run, scenario, HAPPY_PATHS};
use trustdeploy::actors::{AuditLog, AuditStep};
use trustdeploy::closure::{check_secrecy, Term};
use trustdeploy::harness::{
    check_transcript, run_scenario, write_artifacts, ConfigError, DhProfile, HarnessError, KeyMode, Outcome,
    ReportFormat, RunReport, ScenarioConfig, SlaveConfig, Topology,
};
use trustdeploy::messages::{Capability, PrincipalId};
use trustdeploy::sim::{parse_transcript, AdversaryAction, DropRule};

#[test]
fn every_event_relifts_to_its_recorded_term() {
    for (name, _) in HAPPY_PATHS.iter().chain(&[("mixed-fleet.toml", 0)]) {
        let mut r = run(name);
        let events = r.world.bus.events().to_vec();
        for e in &events {
            let term = e.term.as_ref().expect("harness lifts every event");
            assert!(r.world.lifter.conforms(term, &e.bytes), "{name} tick {}: {term}", e.tick);
        }
    }
}

#[test]
fn keyed_outcomes_match_audit_and_keys() {
    let r = run("mixed-fleet.toml");
    let rows = AuditLog::parse_lines(&r.audit_log()).unwrap();
    for s in &r.report.slaves {
        if s.outcome != Outcome::Keyed {
            continue;
        }
        let id: PrincipalId = s.slave.parse().unwrap();
        assert!(
            rows.iter().any(|row| row.step == AuditStep::KeyIssued && row.slave_id.as_ref() == Some(&id)),
            "{id} keyed without KEY_ISSUED"
        );
        assert!(r.world.keys_agree(&id), "{id} keys differ");
    }
    let mixed_counts: Vec<usize> = vec![r.report.packets["KeyDelivery"], r.report.packets["PDh1"]];
    assert_eq!(mixed_counts, vec![3, 3]);
}

#[test]
fn one_leaked_session_secret_exposes_only_that_session() {
    let r = run("mixed-fleet.toml");
    let mut initial = r.world.adversary_initial();
    initial.push(Term::atom("rnd_s:s1"));
    let goals: Vec<Term> = ["key:s1", "key:s3", "key:s5", "aparam:alice"].into_iter().map(Term::atom).collect();
    let results = check_secrecy(&r.world.transcript_terms(), &initial, &goals);
    let derivable: Vec<bool> = results.iter().map(|s| s.derivable).collect();
    assert_eq!(derivable, vec![true, false, false, false]);
}

#[test]
fn transcript_round_trips_and_rechecks() {
    let r = run("hierarchical-symmetric.toml");
    let parsed = parse_transcript(&r.transcript()).unwrap();
    assert_eq!(parsed, r.events());
    assert!(check_transcript(&parsed, &[]).iter().all(|s| !s.derivable));
    let leaked = check_transcript(&parsed, &[Term::atom("sk:EMS:ems")]);
    assert!(leaked.iter().any(|s| s.derivable && s.secret == Term::atom("aparam:alice")));
}

#[test]
fn artifacts_are_written_in_both_formats() {
    let r = run("direct-dh.toml");
    let dir = tempfile::tempdir().unwrap();
    write_artifacts(&r, dir.path(), ReportFormat::Structured).unwrap();
    write_artifacts(&r, dir.path(), ReportFormat::Text).unwrap();
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let report: RunReport = serde_json::from_str(&json).unwrap();
    assert_eq!(report, r.report);
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.contains("KEYED") && text.ends_with("exit 0\n"));
    let transcript = std::fs::read_to_string(dir.path().join("transcript.log")).unwrap();
    assert_eq!(trustdeploy::harness::digest(&transcript), r.report.transcript_digest);
    let audit = std::fs::read_to_string(dir.path().join("audit.log")).unwrap();
    assert_eq!(AuditLog::parse_lines(&audit).unwrap().len(), r.report.audit.records);
}

#[test]
fn seed_changes_the_transcript() {
    let mut cfg = scenario("direct-symmetric.toml");
    let a = run_scenario(cfg.clone()).unwrap();
    cfg.seed += 1;
    let b = run_scenario(cfg).unwrap();
    assert_ne!(a.report.transcript_digest, b.report.transcript_digest);
    assert_eq!(a.report.wire_message_count, b.report.wire_message_count);
}

#[test]
fn config_errors_name_the_field() {
    let syntax = ScenarioConfig::from_toml("seed = 1\ntopology = \"DIRECT\"\nbogus = 3\n");
    assert!(matches!(syntax, Err(ConfigError::Syntax(_))));

    let mut cfg = scenario("direct-dh.toml");
    cfg.slaves[0].capability = Capability::SymOnly;
    match cfg.validate() {
        Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "slaves[0].capability"),
        other => panic!("{other:?}"),
    }

    let mut cfg = scenario("hierarchical-symmetric.toml");
    cfg.masters.clear();
    assert!(matches!(run_scenario(cfg), Err(HarnessError::Config(ConfigError::Invalid { .. }))));
}

#[test]
fn config_survives_toml_round_trip() {
    for name in ["mixed-fleet.toml", "attack-stolen-card.toml", "attack-drop-challenge.toml"] {
        let cfg = scenario(name);
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg, "{name}");
    }
}

#[test]
fn toy_group_key_collision_is_reported() {
    let mut cfg = matrix_config(Topology::Hierarchical, true, 2, 6710690064627948748, Attack::StealDevice);
    cfg.dh_profile = DhProfile::Toy;
    let r = run_scenario(cfg).unwrap();
    assert!(r.world.slaves.values().map(|s| s.session_key()).collect::<Vec<_>>().windows(2).all(|w| w[0] == w[1]));
    assert!(!r.report.secrecy_holds());
    assert_eq!(r.exit_code(), 1);
}

#[test]
fn golden_attack_scenarios_exit_as_labelled() {
    for (name, code) in [
        ("attack-pjoin-replay.toml", 2),
        ("attack-stolen-card.toml", 2),
        ("attack-stolen-device.toml", 2),
        ("attack-drop-challenge.toml", 1),
    ] {
        assert_eq!(run(name).exit_code(), code, "{name}");
    }
}

#[derive(Debug, Clone, Copy)]
enum Attack {
    None,
    ReplayJoin,
    StealCard,
    StealDevice,
    DropChallenge,
    /// A replay labelled with the wrong expectation.
    MislabelledReplay,
}

fn matrix_config(topology: Topology, dh: bool, slaves: usize, seed: u64, attack: Attack) -> ScenarioConfig {
    let mut cfg = scenario("direct-symmetric.toml");
    cfg.seed = seed;
    cfg.topology = topology;
    cfg.key_mode = if dh { KeyMode::Dh } else { KeyMode::Symmetric };
    // The toy group has about twenty distinct keys, so sessions collide and a
    // captured device really does open its neighbours' traffic.
    cfg.dh_profile = DhProfile::Standard;
    if topology == Topology::Hierarchical {
        cfg.masters = vec!["m1".into()];
    }
    let capability = if dh { Capability::AsymCapable } else { Capability::SymOnly };
    cfg.slaves = (0..slaves)
        .map(|i| SlaveConfig {
            id: format!("s{i}"),
            capability,
            employee: "alice".into(),
            handheld: "hh1".into(),
            master: None,
        })
        .collect();
    let (actions, expect): (Vec<AdversaryAction>, &[&str]) = match attack {
        Attack::None => (vec![], &[]),
        Attack::ReplayJoin => {
            (vec![AdversaryAction::Replay { event: 0, to: cfg.ems_id(), at: None }], &["ReplayDetected"])
        }
        Attack::MislabelledReplay => {
            (vec![AdversaryAction::Replay { event: 0, to: cfg.ems_id(), at: None }], &["WrongPassword"])
        }
        Attack::StealCard => (
            vec![AdversaryAction::StealCard { employee: "alice".into(), password_guess: "guess".into(), at: None }],
            &["WrongPassword"],
        ),
        Attack::StealDevice => {
            (vec![AdversaryAction::StealDevice { slave: "s0".into(), at: None }], &["TamperProofDenied"])
        }
        Attack::DropChallenge => (
            vec![AdversaryAction::Drop { rule: DropRule { packet: Some("Challenge".into()), ..Default::default() } }],
            &[],
        ),
    };
    cfg.adversary.actions = actions;
    cfg.expect = expect.iter().map(|s| s.to_string()).collect();
    cfg
}

fn attack() -> impl Strategy<Value = Attack> {
    prop_oneof![
        Just(Attack::None),
        Just(Attack::ReplayJoin),
        Just(Attack::StealCard),
        Just(Attack::StealDevice),
        Just(Attack::DropChallenge),
        Just(Attack::MislabelledReplay),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// 0 for a clean run, 2 for a correctly blocked attack, 1 otherwise, over
    /// the topology x key mode x fleet size x attack matrix.
    #[test]
    fn exit_code_contract(
        hierarchical in any::<bool>(),
        dh in any::<bool>(),
        slaves in 1usize..4,
        seed in any::<u64>(),
        attack in attack(),
    ) {
        let topology = if hierarchical { Topology::Hierarchical } else { Topology::Direct };
        let r = run_scenario(matrix_config(topology, dh, slaves, seed, attack)).unwrap();
        let want = match attack {
            Attack::None => 0,
            Attack::ReplayJoin | Attack::StealCard | Attack::StealDevice => 2,
            Attack::DropChallenge | Attack::MislabelledReplay => 1,
        };
        prop_assert_eq!(r.exit_code(), want, "{:?}: {:?}", attack, r.report.rejections);
        prop_assert!(r.report.secrecy_holds());
        if matches!(attack, Attack::None | Attack::StealCard) {
            prop_assert!(r.report.all_keyed());
        }
    }

    #[test]
    fn equal_configs_give_equal_transcripts(seed in any::<u64>(), dh in any::<bool>()) {
        let cfg = matrix_config(Topology::Hierarchical, dh, 2, seed, Attack::None);
        prop_assert_eq!(run_scenario(cfg.clone()).unwrap().transcript(), run_scenario(cfg).unwrap().transcript());
    }
}
