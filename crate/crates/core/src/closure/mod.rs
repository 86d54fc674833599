//! Symbolic terms and the adversary's knowledge closure.

mod knowledge;
mod term;

pub use knowledge::{check_secrecy, close, replay, step_is_valid, KnowledgeSet, Rule, SecrecyResult, Step};
pub use term::{private_for, Term};
