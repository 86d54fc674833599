use thiserror::Error;

use crate::crypto::CryptoError;
use crate::messages::CodecError;

/// Every way a protocol step can fail. A failed step leaves the actor's state
/// untouched and ends the session.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed packet: {0}")]
    MalformedPacket(&'static str),
    #[error("authentication failed")]
    AuthFail,
    #[error("wrong password")]
    WrongPassword,
    #[error("card payload integrity check failed")]
    IntegrityError,
    #[error("encrypted APARAM does not carry a valid EMS signature")]
    BadCardSignature,
    #[error("slave is already provisioned")]
    AlreadyProvisioned,
    #[error("employee already registered")]
    DuplicateEmployee,
    #[error("employee not registered")]
    UnknownEmployee,
    #[error("APARAM does not match the registered employee")]
    AparamMismatch,
    #[error("joining identity does not match the commissioned configuration")]
    SlaveMismatch,
    #[error("join replay detected")]
    ReplayDetected,
    #[error("unknown master {0}")]
    UnknownMaster(String),
    #[error("master signature invalid")]
    BadMasterSignature,
    #[error("EMS signature invalid")]
    BadEmsSignature,
    #[error("SM signature invalid")]
    BadSmSignature,
    #[error("master is not trusted yet")]
    MasterNotTrusted,
    #[error("challenge did not come from the intended network")]
    WrongNetwork,
    #[error("nonce counter mismatch")]
    CounterMismatch,
    #[error("operation not allowed in phase {actual}, expected {expected}")]
    WrongPhase { expected: &'static str, actual: &'static str },
    #[error("slave has not been verified")]
    NotVerified,
    #[error("operation does not match the slave capability")]
    WrongCapability,
    #[error("degenerate Diffie-Hellman share")]
    DegenerateShare,
    #[error("empty password")]
    EmptyPassword,
    #[error("{0} packet not expected here")]
    UnexpectedPacket(&'static str),
    #[error("no session for {0}")]
    UnknownSession(String),
    #[error("tamper-proof store cannot be read")]
    TamperProofDenied,
}

impl ProtocolError {
    /// Stable name used in reports, audit details and scenario expectations.
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolError::MalformedPacket(_) => "MalformedPacket",
            ProtocolError::AuthFail => "AuthFail",
            ProtocolError::WrongPassword => "WrongPassword",
            ProtocolError::IntegrityError => "IntegrityError",
            ProtocolError::BadCardSignature => "BadCardSignature",
            ProtocolError::AlreadyProvisioned => "AlreadyProvisioned",
            ProtocolError::DuplicateEmployee => "DuplicateEmployee",
            ProtocolError::UnknownEmployee => "UnknownEmployee",
            ProtocolError::AparamMismatch => "AparamMismatch",
            ProtocolError::SlaveMismatch => "SlaveMismatch",
            ProtocolError::ReplayDetected => "ReplayDetected",
            ProtocolError::UnknownMaster(_) => "UnknownMaster",
            ProtocolError::BadMasterSignature => "BadMasterSignature",
            ProtocolError::BadEmsSignature => "BadEmsSignature",
            ProtocolError::BadSmSignature => "BadSmSignature",
            ProtocolError::MasterNotTrusted => "MasterNotTrusted",
            ProtocolError::WrongNetwork => "WrongNetwork",
            ProtocolError::CounterMismatch => "CounterMismatch",
            ProtocolError::WrongPhase { .. } => "WrongPhase",
            ProtocolError::NotVerified => "NotVerified",
            ProtocolError::WrongCapability => "WrongCapability",
            ProtocolError::DegenerateShare => "DegenerateShare",
            ProtocolError::EmptyPassword => "EmptyPassword",
            ProtocolError::UnexpectedPacket(_) => "UnexpectedPacket",
            ProtocolError::UnknownSession(_) => "UnknownSession",
            ProtocolError::TamperProofDenied => "TamperProofDenied",
        }
    }
}

impl From<CodecError> for ProtocolError {
    fn from(e: CodecError) -> Self {
        ProtocolError::MalformedPacket(e.0)
    }
}

impl From<CryptoError> for ProtocolError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::AuthFail => ProtocolError::AuthFail,
            CryptoError::DegenerateShare => ProtocolError::DegenerateShare,
            CryptoError::EmptyPassword => ProtocolError::EmptyPassword,
        }
    }
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;
