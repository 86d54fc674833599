//! Per-role protocol state machines.
//!
//! Each actor owns its state and exposes one method per protocol step. A step
//! either advances the actor or returns an error and leaves it unchanged.

pub mod audit;
pub mod ems;
pub mod handheld;
pub mod slave;
pub mod verifier;

pub use audit::{AuditLog, AuditRecord, AuditStep};
pub use ems::{card_unlock, EmsState, IdCard};
pub use handheld::Handheld;
pub use slave::{Accessor, DeviceDump, SlavePhase, SlaveState, TamperProofStore};
pub use verifier::{DelegationMode, KeySource, Master, MasterLink, PendingPhase, SmState, Verifier};
