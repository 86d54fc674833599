//! Scenario files.
//!
//! ```toml
//! seed = 7
//! topology = "HIERARCHICAL"
//! key_mode = "SYMMETRIC"
//! dh_profile = "TOY"
//! delegation_mode = "PUBLIC_KEY"
//! masters = ["m1"]
//!
//! [[employees]]
//! id = "alice"
//! password = "correct horse"
//!
//! [[slaves]]
//! id = "s1"
//! capability = "SYM_ONLY"
//! employee = "alice"
//! handheld = "hh1"
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{DelegationMode, KeySource};
use crate::messages::{Capability, PrincipalId};
use crate::sim::{AdversaryAction, AdversaryScript};

/// Name of the single EMS on every bus.
pub const EMS_NAME: &str = "ems";
/// Name of the single SM on every bus.
pub const SM_NAME: &str = "sm";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Topology {
    Direct,
    Hierarchical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KeyMode {
    /// Every slave receives a verifier-generated key.
    Symmetric,
    /// Every slave runs the Diffie-Hellman exchange.
    Dh,
    /// Each slave's capability picks the path.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DhProfile {
    Toy,
    Standard,
}

/// A family of secrecy goals, expanded over every employee or slave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SecrecyGoal {
    Aparam,
    NonceS,
    RndS,
    ChallengerNonce,
    SessionKey,
}

impl SecrecyGoal {
    pub const ALL: [SecrecyGoal; 5] = [
        SecrecyGoal::Aparam,
        SecrecyGoal::NonceS,
        SecrecyGoal::RndS,
        SecrecyGoal::ChallengerNonce,
        SecrecyGoal::SessionKey,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmployeeConfig {
    pub id: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaveConfig {
    pub id: String,
    pub capability: Capability,
    pub employee: String,
    pub handheld: String,
    /// Hierarchical only; defaults to the first master.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub topology: Topology,
    pub key_mode: KeyMode,
    #[serde(default = "default_profile")]
    pub dh_profile: DhProfile,
    #[serde(default)]
    pub delegation_mode: DelegationMode,
    #[serde(default)]
    pub key_source: KeySource,
    pub employees: Vec<EmployeeConfig>,
    #[serde(default)]
    pub masters: Vec<String>,
    pub slaves: Vec<SlaveConfig>,
    #[serde(default)]
    pub adversary: AdversaryScript,
    /// Defaults to every goal.
    #[serde(default = "default_checks")]
    pub checks: Vec<SecrecyGoal>,
    /// Rejection kinds (e.g. `"ReplayDetected"`) this scenario is meant to
    /// provoke. Non-empty turns a blocked attack into exit code 2.
    #[serde(default)]
    pub expect: Vec<String>,
}

fn default_profile() -> DhProfile {
    DhProfile::Toy
}

fn default_checks() -> Vec<SecrecyGoal> {
    SecrecyGoal::ALL.to_vec()
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn ems_id(&self) -> PrincipalId {
        PrincipalId::ems(EMS_NAME)
    }

    pub fn sm_id(&self) -> PrincipalId {
        PrincipalId::sm(SM_NAME)
    }

    /// The master a slave joins through, for hierarchical scenarios.
    pub fn master_of(&self, slave: &SlaveConfig) -> Option<String> {
        match self.topology {
            Topology::Direct => None,
            Topology::Hierarchical => slave.master.clone().or_else(|| self.masters.first().cloned()),
        }
    }

    /// Every principal that appears on the bus.
    pub fn principals(&self) -> Vec<PrincipalId> {
        let mut out = vec![self.ems_id(), self.sm_id()];
        out.extend(self.masters.iter().map(|m| PrincipalId::master(m)));
        out.extend(self.slaves.iter().map(|s| PrincipalId::slave(&s.id)));
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.employees.is_empty() {
            return Err(invalid("employees", "at least one employee is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, e) in self.employees.iter().enumerate() {
            if e.id.is_empty() || !seen.insert(&e.id) {
                return Err(invalid(format!("employees[{i}].id"), format!("{:?} is empty or duplicated", e.id)));
            }
            if e.password.is_empty() {
                return Err(invalid(format!("employees[{i}].password"), "password must not be empty"));
            }
        }

        let mut masters = BTreeSet::new();
        for (i, m) in self.masters.iter().enumerate() {
            if m.is_empty() || !masters.insert(m) {
                return Err(invalid(format!("masters[{i}]"), format!("{m:?} is empty or duplicated")));
            }
        }
        if self.topology == Topology::Hierarchical && self.masters.is_empty() {
            return Err(invalid("masters", "HIERARCHICAL topology needs at least one master"));
        }

        if self.slaves.is_empty() {
            return Err(invalid("slaves", "at least one slave is required"));
        }
        let mut slaves = BTreeSet::new();
        for (i, s) in self.slaves.iter().enumerate() {
            let field = |f: &str| format!("slaves[{i}].{f}");
            if s.id.is_empty() || !slaves.insert(&s.id) {
                return Err(invalid(field("id"), format!("{:?} is empty or duplicated", s.id)));
            }
            if !seen.contains(&s.employee) {
                return Err(invalid(field("employee"), format!("{:?} is not a listed employee", s.employee)));
            }
            if s.handheld.is_empty() {
                return Err(invalid(field("handheld"), "handheld id must not be empty"));
            }
            match (self.key_mode, s.capability) {
                (KeyMode::Dh, Capability::SymOnly) => {
                    return Err(invalid(field("capability"), "key_mode DH requires ASYM_CAPABLE"));
                }
                (KeyMode::Symmetric, Capability::AsymCapable) => {
                    return Err(invalid(field("capability"), "key_mode SYMMETRIC requires SYM_ONLY; use MIXED"));
                }
                _ => {}
            }
            match (&s.master, self.topology) {
                (Some(_), Topology::Direct) => {
                    return Err(invalid(field("master"), "only HIERARCHICAL slaves have a master"));
                }
                (Some(m), Topology::Hierarchical) if !masters.contains(m) => {
                    return Err(invalid(field("master"), format!("{m:?} is not a listed master")));
                }
                _ => {}
            }
        }

        let principals: BTreeSet<PrincipalId> = self.principals().into_iter().collect();
        let known = |field: String, id: &Option<PrincipalId>| match id {
            Some(id) if !principals.contains(id) => Err(invalid(field, format!("{id} is not on the bus"))),
            _ => Ok(()),
        };
        for (i, a) in self.adversary.actions.iter().enumerate() {
            let field = |f: &str| format!("adversary.actions[{i}].{f}");
            match a {
                AdversaryAction::Observe => {}
                AdversaryAction::Drop { rule } => {
                    known(field("from"), &rule.from)?;
                    known(field("to"), &rule.to)?;
                }
                AdversaryAction::Replay { to, .. } => known(field("to"), &Some(to.clone()))?,
                AdversaryAction::Inject { from, to, .. } => {
                    known(field("from"), &Some(from.clone()))?;
                    known(field("to"), &Some(to.clone()))?;
                }
                AdversaryAction::StealCard { employee, .. } => {
                    if !seen.contains(employee) {
                        return Err(invalid(field("employee"), format!("{employee:?} is not a listed employee")));
                    }
                }
                AdversaryAction::StealDevice { slave, .. } => {
                    if !slaves.contains(slave) {
                        return Err(invalid(field("slave"), format!("{slave:?} is not a listed slave")));
                    }
                }
            }
        }
        for (i, kind) in self.expect.iter().enumerate() {
            if !kind.starts_with(|c: char| c.is_ascii_uppercase()) || !kind.chars().all(|c| c.is_ascii_alphanumeric()) {
                return Err(invalid(format!("expect[{i}]"), format!("{kind:?} is not an error kind")));
            }
        }
        Ok(())
    }
}
