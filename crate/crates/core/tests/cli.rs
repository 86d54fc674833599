mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::scenario_path;

fn trustdeploy(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trustdeploy")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(name: &str) -> String {
    scenario_path(name).display().to_string()
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    for (name, want) in [
        ("direct-symmetric.toml", 0),
        ("hierarchical-dh.toml", 0),
        ("attack-pjoin-replay.toml", 2),
        ("attack-drop-challenge.toml", 1),
    ] {
        let o = trustdeploy(&["run", &path(name)], dir.path());
        assert_eq!(code(&o), want, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["transcript.log", "audit.log", "report.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn structured_report_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let digest = |seed: &str| {
        let o =
            trustdeploy(&["run", &path("direct-symmetric.toml"), "--format", "structured", "--seed", seed], dir.path());
        assert_eq!(code(&o), 0);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(json["seed"].as_u64(), Some(seed.parse().unwrap()));
        json["transcript_digest"].as_str().unwrap().to_string()
    };
    assert_eq!(digest("5"), digest("5"));
    assert_ne!(digest("5"), digest("6"));
}

#[test]
fn check_replays_a_saved_transcript() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&trustdeploy(&["run", &path("direct-dh.toml")], dir.path())), 0);
    let transcript = dir.path().join("transcript.log").display().to_string();
    let clean = trustdeploy(&["check", &transcript], dir.path());
    assert_eq!(code(&clean), 0);
    assert!(!String::from_utf8_lossy(&clean.stdout).contains("DERIVABLE"));
    let leaked = trustdeploy(&["check", &transcript, "--knows", "sk:EMS:ems"], dir.path());
    assert_eq!(code(&leaked), 1);
    assert!(String::from_utf8_lossy(&leaked.stdout).contains("aparam:alice"));
}

#[test]
fn attack_suite_blocks_everything() {
    let dir = tempfile::tempdir().unwrap();
    let o = trustdeploy(&["attack-suite", &path("direct-symmetric.toml")], dir.path());
    assert_eq!(code(&o), 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("all blocked"), "{stdout}");
    assert!(dir.path().join("stolen-card").join("audit.log").exists());
}

#[test]
fn bad_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = trustdeploy(&["run", "no/such/file.toml"], dir.path());
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("cannot read"));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n").unwrap();
    assert_eq!(code(&trustdeploy(&["run", &bad.display().to_string()], dir.path())), 1);
    assert_eq!(code(&trustdeploy(&["check", &bad.display().to_string()], dir.path())), 1);
}
