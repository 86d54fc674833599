//! Append-only accountability trail.
//!
//! One record per protocol milestone or rejection, persisted as one JSON
//! object per line with fields in declaration order.

use serde::{Deserialize, Serialize};

use crate::messages::{ConfigurationData, PrincipalId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditStep {
    Provisioned,
    Authenticated,
    Verified,
    KeyIssued,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub slave_id: Option<PrincipalId>,
    pub employee_id: Option<PrincipalId>,
    pub handheld_id: Option<PrincipalId>,
    pub step: AuditStep,
    pub detail: String,
    pub tick: u64,
}

#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    tick: u64,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Simulation time stamped onto subsequent records.
    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn record_cd(&mut self, step: AuditStep, cd: &ConfigurationData, detail: impl Into<String>) {
        self.records.push(AuditRecord {
            slave_id: Some(cd.slave_id.clone()),
            employee_id: Some(cd.employee_id.clone()),
            handheld_id: cd.handheld_id.clone(),
            step,
            detail: detail.into(),
            tick: self.tick,
        });
    }

    /// A rejection where the configuration data may not be known yet.
    pub fn reject(&mut self, cd: Option<&ConfigurationData>, slave: Option<&PrincipalId>, detail: impl Into<String>) {
        match cd {
            Some(cd) => self.record_cd(AuditStep::Rejected, cd, detail),
            None => self.records.push(AuditRecord {
                slave_id: slave.cloned(),
                employee_id: None,
                handheld_id: None,
                step: AuditStep::Rejected,
                detail: detail.into(),
                tick: self.tick,
            }),
        }
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("audit records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_lines(text: &str) -> Result<Vec<AuditRecord>, serde_json::Error> {
        text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
    }
}

/// Accountability check over a log: every `KEY_ISSUED` record must follow an
/// `AUTHENTICATED` and a `VERIFIED` record and a `PROVISIONED` record for the
/// same slave, all naming the same employee. Returns the offending records.
pub fn unaccountable_keys(records: &[AuditRecord]) -> Vec<&AuditRecord> {
    let mut bad = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.step != AuditStep::KeyIssued {
            continue;
        }
        let earlier = &records[..i];
        let ok = [AuditStep::Provisioned, AuditStep::Authenticated, AuditStep::Verified].iter().all(|step| {
            earlier.iter().any(|e| {
                e.step == *step && e.slave_id == r.slave_id && e.employee_id == r.employee_id && e.employee_id.is_some()
            })
        });
        if !ok {
            bad.push(r);
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::Capability;

    fn cd() -> ConfigurationData {
        ConfigurationData {
            slave_id: PrincipalId::slave("s1"),
            employee_id: PrincipalId::employee("e1"),
            handheld_id: Some(PrincipalId::handheld("hh")),
            capability: Capability::SymOnly,
            settings: vec![],
        }
    }

    #[test]
    fn lines_round_trip_in_field_order() {
        let mut log = AuditLog::new();
        log.set_tick(3);
        log.record_cd(AuditStep::Provisioned, &cd(), "ok");
        log.reject(None, None, "MalformedPacket");
        let text = log.to_lines();
        assert!(text.starts_with(r#"{"slave_id":"SLAVE:s1","employee_id":"EMPLOYEE:e1","handheld_id":"HH:hh","step":"PROVISIONED","detail":"ok","tick":3}"#));
        assert_eq!(AuditLog::parse_lines(&text).unwrap(), log.records());
    }

    #[test]
    fn key_without_history_is_flagged() {
        let mut log = AuditLog::new();
        log.record_cd(AuditStep::Provisioned, &cd(), "");
        log.record_cd(AuditStep::Authenticated, &cd(), "");
        log.record_cd(AuditStep::KeyIssued, &cd(), "");
        assert_eq!(unaccountable_keys(log.records()).len(), 1);
        let mut log = AuditLog::new();
        for step in [AuditStep::Provisioned, AuditStep::Authenticated, AuditStep::Verified, AuditStep::KeyIssued] {
            log.record_cd(step, &cd(), "");
        }
        assert!(unaccountable_keys(log.records()).is_empty());
    }
}
