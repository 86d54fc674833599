//! Scenario runner: builds a world from a config, runs it on the bus,
//! evaluates secrecy and writes the artifacts.

mod attacks;
pub mod config;
pub mod lift;
mod report;
mod world;

use std::path::Path;

use thiserror::Error;

pub use attacks::{replay_attack_suite, Battery};
pub use config::{ConfigError, DhProfile, EmployeeConfig, KeyMode, ScenarioConfig, SecrecyGoal, SlaveConfig, Topology};
pub use report::{digest, AuditSummary, Outcome, RunReport, SlaveOutcome};
pub use world::{Rejection, World};

use crate::closure::{check_secrecy, SecrecyResult, Term};
use crate::error::ProtocolError;
use crate::sim::{BusEvent, SimError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{what}: {error}")]
    Setup { what: String, error: ProtocolError },
    #[error("scenario still busy after {0} deliveries")]
    Runaway(usize),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// A finished scenario.
#[derive(Debug)]
pub struct Run {
    pub report: RunReport,
    pub world: World,
}

impl Run {
    pub fn transcript(&self) -> String {
        self.world.bus.transcript_lines()
    }

    pub fn audit_log(&self) -> String {
        self.world.audit.to_lines()
    }

    pub fn events(&self) -> &[BusEvent] {
        self.world.bus.events()
    }

    pub fn exit_code(&self) -> i32 {
        self.report.exit_code
    }
}

pub fn run_scenario(config: ScenarioConfig) -> Result<Run, HarnessError> {
    let mut world = World::build(config)?;
    world.run()?;
    let report = RunReport::from_world(&world);
    Ok(Run { report, world })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Structured,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Text => "report.txt",
            ReportFormat::Structured => "report.json",
        }
    }

    pub fn render(self, report: &RunReport) -> String {
        match self {
            ReportFormat::Text => report.to_text(),
            ReportFormat::Structured => report.to_json(),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

/// Writes `transcript.log`, `audit.log` and the report into `dir`.
pub fn write_artifacts(run: &Run, dir: &Path, format: ReportFormat) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.display().to_string(), source })?;
    write(&dir.join("transcript.log"), &run.transcript())?;
    write(&dir.join("audit.log"), &run.audit_log())?;
    write(&dir.join(format.file_name()), &format.render(&run.report))
}

const SECRET_KINDS: [&str; 5] = [lift::APARAM, lift::NONCE_S, lift::RND_S, lift::CHALLENGER, lift::SESSION_KEY];
const PUBLIC_KINDS: [&str; 3] = ["pk", "id", "cd"];

/// Re-runs the closure over a saved transcript. Secrets are every secret-kind
/// atom that occurs in it; the adversary starts with the public atoms that
/// occur in it plus `extra`.
pub fn check_transcript(events: &[BusEvent], extra: &[Term]) -> Vec<SecrecyResult> {
    let terms: Vec<Term> = events.iter().filter_map(|e| e.term.clone()).collect();
    let mut atoms = Vec::new();
    for t in &terms {
        t.atoms(&mut atoms);
    }
    atoms.sort();
    atoms.dedup();
    let kind = |a: &str| a.split_once(':').map(|(k, _)| k.to_string()).unwrap_or_else(|| a.to_string());
    let secrets: Vec<Term> =
        atoms.iter().filter(|a| SECRET_KINDS.contains(&kind(a).as_str())).map(Term::atom).collect();
    let mut initial: Vec<Term> =
        atoms.iter().filter(|a| PUBLIC_KINDS.contains(&kind(a).as_str())).map(Term::atom).collect();
    initial.extend([Term::atom("dh_p"), Term::atom("dh_g")]);
    initial.extend(extra.iter().cloned());
    check_secrecy(&terms, &initial, &secrets)
}
