//! Employee-trust based commissioning and initial key establishment for
//! industrial field devices.
//!
//! An engineer's ID card carries an EMS-issued secret (APARAM) that a
//! handheld transfers into the device during commissioning. The device then
//! proves that secret to the employee management system, is challenged by the
//! security manager (directly or through a trusted master), and finally
//! receives a symmetric key or runs an authenticated Diffie-Hellman exchange.
//!
//! The crate contains the protocol actors, a deterministic message bus with a
//! scripted Dolev-Yao adversary, a symbolic knowledge-closure engine for
//! secrecy goals, and a scenario harness that ties them together.

pub mod actors;
pub mod closure;
pub mod crypto;
pub mod error;
pub mod harness;
pub mod messages;
pub mod sim;

pub use error::{ProtocolError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/commissioning.md")]
    mod commissioning {}
    #[doc = include_str!("../../../book/src/key-establishment.md")]
    mod key_establishment {}
    #[doc = include_str!("../../../book/src/topologies.md")]
    mod topologies {}
    #[doc = include_str!("../../../book/src/closure.md")]
    mod closure {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
