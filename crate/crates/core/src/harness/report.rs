//! The per-run summary and its text and JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DhProfile, KeyMode, Topology};
use super::world::{Rejection, World};
use crate::actors::audit::unaccountable_keys;
use crate::actors::{AuditStep, SlavePhase};
use crate::closure::SecrecyResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Keyed,
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlaveOutcome {
    pub slave: String,
    pub outcome: Outcome,
    pub phase: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub records: usize,
    pub steps: BTreeMap<String, usize>,
    /// `KEY_ISSUED` records without a matching provisioning, authentication
    /// and verification trail for the same employee.
    pub unaccountable: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub topology: Topology,
    pub key_mode: KeyMode,
    pub dh_profile: DhProfile,
    pub slaves: Vec<SlaveOutcome>,
    /// Delivered, replayed and injected events.
    pub wire_message_count: usize,
    pub wire_bytes: usize,
    pub packets: BTreeMap<String, usize>,
    pub rejections: Vec<Rejection>,
    pub breaches: Vec<String>,
    pub secrecy: Vec<SecrecyResult>,
    pub audit: AuditSummary,
    /// SHA-256 of `transcript.log`.
    pub transcript_digest: String,
    pub exit_code: i32,
}

fn step_name(step: AuditStep) -> &'static str {
    match step {
        AuditStep::Provisioned => "PROVISIONED",
        AuditStep::Authenticated => "AUTHENTICATED",
        AuditStep::Verified => "VERIFIED",
        AuditStep::KeyIssued => "KEY_ISSUED",
        AuditStep::Rejected => "REJECTED",
    }
}

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl RunReport {
    pub fn from_world(world: &World) -> RunReport {
        let cfg = &world.config;
        let slaves: Vec<SlaveOutcome> = cfg
            .slaves
            .iter()
            .map(|s| {
                let id = crate::messages::PrincipalId::slave(&s.id);
                let state = &world.slaves[&id];
                let outcome = if state.phase() == SlavePhase::Keyed && world.keys_agree(&id) {
                    Outcome::Keyed
                } else if state.phase() == SlavePhase::Keyed {
                    Outcome::Rejected("KeyMismatch".into())
                } else {
                    let first = world.rejections.iter().find(|r| r.slave.as_ref() == Some(&id));
                    Outcome::Rejected(match first {
                        Some(r) => r.kind.clone(),
                        None => format!("StalledIn{}", state.phase().as_str()),
                    })
                };
                SlaveOutcome { slave: id.to_string(), outcome, phase: state.phase().as_str().to_string() }
            })
            .collect();

        let events = world.bus.events();
        let on_wire = events.iter().filter(|e| e.disposition.on_wire());
        let mut packets = BTreeMap::new();
        for e in on_wire.clone() {
            *packets.entry(e.packet.clone().unwrap_or_else(|| "raw".into())).or_insert(0) += 1;
        }

        let records = world.audit.records();
        let mut steps = BTreeMap::new();
        for r in records {
            *steps.entry(step_name(r.step).to_string()).or_insert(0) += 1;
        }
        let audit = AuditSummary { records: records.len(), steps, unaccountable: unaccountable_keys(records).len() };

        let secrecy = world.secrecy();
        let mut report = RunReport {
            seed: cfg.seed,
            topology: cfg.topology,
            key_mode: cfg.key_mode,
            dh_profile: cfg.dh_profile,
            slaves,
            wire_message_count: on_wire.clone().count(),
            wire_bytes: on_wire.map(|e| e.bytes.len()).sum(),
            packets,
            rejections: world.rejections.clone(),
            breaches: world.breaches.clone(),
            secrecy,
            audit,
            transcript_digest: digest(&world.bus.transcript_lines()),
            exit_code: 1,
        };
        report.exit_code = report.decide_exit(&cfg.expect);
        report
    }

    pub fn all_keyed(&self) -> bool {
        self.slaves.iter().all(|s| s.outcome == Outcome::Keyed)
    }

    pub fn secrecy_holds(&self) -> bool {
        self.secrecy.iter().all(|s| !s.derivable)
    }

    /// 0: everyone keyed, nothing rejected, nothing leaked. 2: every rejection
    /// was one the scenario set out to provoke and nothing leaked. 1: anything
    /// else.
    fn decide_exit(&self, expect: &[String]) -> i32 {
        if !self.breaches.is_empty() || !self.secrecy_holds() || self.audit.unaccountable > 0 {
            return 1;
        }
        if expect.is_empty() {
            return if self.all_keyed() && self.rejections.is_empty() { 0 } else { 1 };
        }
        let blocked = !self.rejections.is_empty() && self.rejections.iter().all(|r| expect.contains(&r.kind));
        if blocked {
            2
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario  {:?} / {:?} / dh {:?} / seed {}",
            self.topology, self.key_mode, self.dh_profile, self.seed
        );
        out.push_str("slaves\n");
        for s in &self.slaves {
            let outcome = match &s.outcome {
                Outcome::Keyed => "KEYED".to_string(),
                Outcome::Rejected(why) => format!("REJECTED({why})"),
            };
            let _ = writeln!(out, "  {:<24} {:<22} phase {}", s.slave, outcome, s.phase);
        }
        let _ = writeln!(out, "wire messages  {} ({} bytes)", self.wire_message_count, self.wire_bytes);
        for (name, n) in &self.packets {
            let _ = writeln!(out, "  {name:<20} {n}");
        }
        out.push_str("rejections\n");
        if self.rejections.is_empty() {
            out.push_str("  none\n");
        }
        for r in &self.rejections {
            let _ = writeln!(out, "  tick {:<4} {:<20} {:<18} {}", r.tick, r.at.to_string(), r.kind, r.detail);
        }
        for b in &self.breaches {
            let _ = writeln!(out, "breach  {b}");
        }
        out.push_str("secrecy\n");
        for s in &self.secrecy {
            let verdict = if s.derivable { "DERIVABLE" } else { "secret" };
            let _ = writeln!(out, "  {:<28} {verdict}", s.secret.to_string());
            for step in s.path.iter().flatten() {
                let _ = writeln!(out, "      {step}");
            }
        }
        let _ = writeln!(out, "audit  {} records, {} unaccountable", self.audit.records, self.audit.unaccountable);
        for (step, n) in &self.audit.steps {
            let _ = writeln!(out, "  {step:<20} {n}");
        }
        let _ = writeln!(out, "transcript sha256 {}", self.transcript_digest);
        let _ = writeln!(out, "exit {}", self.exit_code);
        out
    }
}
