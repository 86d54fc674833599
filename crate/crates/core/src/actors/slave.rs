//! The joining field device.
//!
//! A slave walks the phases `Empty → Provisioned → JoinSent → Challenged →
//! (Verified →) Keyed` and never moves backwards. Every counter it checks is
//! an offset from its own `NONCE_S`:
//!
//! | step                | counter       |
//! |---------------------|---------------|
//! | Challenge           | `NONCE_S + 1` |
//! | ChallengeResponse   | `NONCE_S + 2` |
//! | KeyDelivery / PDh1  | `NONCE_S + 3` |
//! | PDh2                | `NONCE_S + 4` |
//! | PDh3                | `NONCE_S + 5` |

use num_bigint::BigUint;
use rand::RngCore;

use crate::crypto::{dh_gen, dh_shared, DhParams, Envelope, Nonce, PublicKey, SymKey};
use crate::error::{ProtocolError, Result};
use crate::messages::layout::{
    open_challenge, open_dh1, open_dh3, open_key_delivery, seal_dh2, seal_join, seal_response,
};
use crate::messages::{ConfigurationData, Packet, PrincipalId};

pub const CHALLENGE_OFFSET: u128 = 1;
pub const RESPONSE_OFFSET: u128 = 2;
pub const KEY_OFFSET: u128 = 3;
pub const DH_CONFIRM_OFFSET: u128 = 4;
pub const DH_FINISH_OFFSET: u128 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlavePhase {
    Empty,
    Provisioned,
    JoinSent,
    Challenged,
    Verified,
    Keyed,
}

impl SlavePhase {
    pub fn as_str(self) -> &'static str {
        match self {
            SlavePhase::Empty => "EMPTY",
            SlavePhase::Provisioned => "PROVISIONED",
            SlavePhase::JoinSent => "JOIN_SENT",
            SlavePhase::Challenged => "CHALLENGED",
            SlavePhase::Verified => "VERIFIED",
            SlavePhase::Keyed => "KEYED",
        }
    }
}

/// What the handheld downloads into the device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TamperProofStore {
    pub auth_comm: Envelope,
    pub cd: ConfigurationData,
    pub ems_pub: PublicKey,
}

/// Who is asking to read the tamper-proof store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accessor {
    Firmware,
    External,
}

/// Everything a thief can read off a captured device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceDump {
    pub id: PrincipalId,
    pub phase: SlavePhase,
    pub nonce_s: Option<Nonce>,
    pub rnd_s: Option<Nonce>,
    pub pending_key: Option<SymKey>,
    pub session_key: Option<SymKey>,
}

#[derive(Debug, Clone)]
pub struct SlaveState {
    pub id: PrincipalId,
    store: Option<TamperProofStore>,
    nonce_s: Option<Nonce>,
    rnd_s: Option<Nonce>,
    phase: SlavePhase,
    pending_key: Option<SymKey>,
    session_key: Option<SymKey>,
}

impl SlaveState {
    pub fn new(id: PrincipalId) -> Self {
        SlaveState {
            id,
            store: None,
            nonce_s: None,
            rnd_s: None,
            phase: SlavePhase::Empty,
            pending_key: None,
            session_key: None,
        }
    }

    pub fn phase(&self) -> SlavePhase {
        self.phase
    }

    pub fn session_key(&self) -> Option<SymKey> {
        self.session_key
    }

    pub fn nonce_s(&self) -> Option<Nonce> {
        self.nonce_s
    }

    pub fn rnd_s(&self) -> Option<Nonce> {
        self.rnd_s
    }

    pub fn tamper_proof_store(&self, accessor: Accessor) -> Result<&TamperProofStore> {
        match accessor {
            Accessor::Firmware => self.store.as_ref().ok_or(ProtocolError::WrongPhase {
                expected: SlavePhase::Provisioned.as_str(),
                actual: self.phase.as_str(),
            }),
            Accessor::External => Err(ProtocolError::TamperProofDenied),
        }
    }

    /// Fields outside the tamper-proof store.
    pub fn dump(&self) -> DeviceDump {
        DeviceDump {
            id: self.id.clone(),
            phase: self.phase,
            nonce_s: self.nonce_s,
            rnd_s: self.rnd_s,
            pending_key: self.pending_key,
            session_key: self.session_key,
        }
    }

    fn expect_phase(&self, expected: SlavePhase) -> Result<()> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(ProtocolError::WrongPhase { expected: expected.as_str(), actual: self.phase.as_str() })
        }
    }

    fn session_nonce(&self) -> Nonce {
        self.nonce_s.expect("nonce is set from JoinSent onwards")
    }

    fn session_rnd(&self) -> Nonce {
        self.rnd_s.expect("rnd is set from Challenged onwards")
    }

    pub(crate) fn install(&mut self, store: TamperProofStore) -> Result<()> {
        if self.phase != SlavePhase::Empty {
            return Err(ProtocolError::AlreadyProvisioned);
        }
        self.store = Some(store);
        self.phase = SlavePhase::Provisioned;
        Ok(())
    }

    /// Abandons the current session so a fresh join can be built. Only the
    /// harness calls this; it is the one transition that lowers the phase.
    pub fn restart(&mut self) {
        if self.store.is_some() {
            self.phase = SlavePhase::Provisioned;
            self.nonce_s = None;
            self.rnd_s = None;
            self.pending_key = None;
            self.session_key = None;
        }
    }

    /// `P_join = E(K_pub(EMS), (P_authComm, S_ID, NONCE_S))` with a fresh `NONCE_S`.
    pub fn build_join(&mut self, rng: &mut impl RngCore) -> Result<Packet> {
        self.expect_phase(SlavePhase::Provisioned)?;
        let store = self.tamper_proof_store(Accessor::Firmware)?;
        let nonce = Nonce::generate(rng);
        let pkt = seal_join(&store.ems_pub, &store.auth_comm, &self.id, &nonce, rng);
        self.nonce_s = Some(nonce);
        self.phase = SlavePhase::JoinSent;
        Ok(pkt)
    }

    /// Accepts a challenge only if it decrypts under `NONCE_S` and carries
    /// `NONCE_S + 1`; anything else means the verifier is not the network
    /// the slave was commissioned for.
    pub fn answer_challenge(&mut self, ch: &Packet, rng: &mut impl RngCore) -> Result<Packet> {
        let Packet::Challenge { ct } = ch else {
            return Err(ProtocolError::UnexpectedPacket(ch.name()));
        };
        self.expect_phase(SlavePhase::JoinSent)?;
        let nonce = self.session_nonce();
        let (challenger, counter) = open_challenge(&nonce, ct).map_err(|_| ProtocolError::WrongNetwork)?;
        if counter != nonce.offset(CHALLENGE_OFFSET) {
            return Err(ProtocolError::WrongNetwork);
        }
        let rnd = Nonce::generate(rng);
        let resp = seal_response(&challenger, &rnd, &nonce.offset(RESPONSE_OFFSET));
        self.rnd_s = Some(rnd);
        self.phase = SlavePhase::Challenged;
        Ok(resp)
    }

    pub fn accept_key(&mut self, kd: &Packet) -> Result<()> {
        let Packet::KeyDelivery { ct } = kd else {
            return Err(ProtocolError::UnexpectedPacket(kd.name()));
        };
        self.expect_phase(SlavePhase::Challenged)?;
        let (key, counter) = open_key_delivery(&self.session_rnd(), ct)?;
        if counter != self.session_nonce().offset(KEY_OFFSET) {
            return Err(ProtocolError::CounterMismatch);
        }
        self.session_key = Some(key);
        self.phase = SlavePhase::Keyed;
        Ok(())
    }

    pub fn dh_respond(&mut self, p1: &Packet, rng: &mut impl RngCore) -> Result<Packet> {
        let Packet::PDh1 { ct } = p1 else {
            return Err(ProtocolError::UnexpectedPacket(p1.name()));
        };
        self.expect_phase(SlavePhase::Challenged)?;
        let rnd = self.session_rnd();
        let (params, share_a, counter) = open_dh1(&rnd, ct)?;
        if counter != self.session_nonce().offset(KEY_OFFSET) {
            return Err(ProtocolError::CounterMismatch);
        }
        let (k_s, share_b) = self.dh_derive(&params, &share_a, rng)?;
        let out = seal_dh2(&k_s, &self.session_nonce().offset(DH_CONFIRM_OFFSET), &rnd, &params, &share_b);
        self.pending_key = Some(k_s);
        self.phase = SlavePhase::Verified;
        Ok(out)
    }

    fn dh_derive(&self, params: &DhParams, share_a: &BigUint, rng: &mut impl RngCore) -> Result<(SymKey, BigUint)> {
        if !params.in_range(share_a) {
            return Err(ProtocolError::DegenerateShare);
        }
        let mine = dh_gen(params, rng);
        Ok((dh_shared(params, &mine.secret, share_a)?, mine.share))
    }

    pub fn dh_confirm(&mut self, p3: &Packet) -> Result<()> {
        let Packet::PDh3 { ct } = p3 else {
            return Err(ProtocolError::UnexpectedPacket(p3.name()));
        };
        self.expect_phase(SlavePhase::Verified)?;
        let k_s = self.pending_key.expect("pending key is set in Verified");
        let counter = open_dh3(&k_s, ct)?;
        if counter != self.session_nonce().offset(DH_FINISH_OFFSET) {
            return Err(ProtocolError::CounterMismatch);
        }
        self.session_key = Some(k_s);
        self.pending_key = None;
        self.phase = SlavePhase::Keyed;
        Ok(())
    }

    /// Routes an incoming packet to the matching step. Returns the reply, if any.
    pub fn handle(&mut self, pkt: &Packet, rng: &mut impl RngCore) -> Result<Option<Packet>> {
        match pkt {
            Packet::Challenge { .. } => self.answer_challenge(pkt, rng).map(Some),
            Packet::KeyDelivery { .. } => self.accept_key(pkt).map(|_| None),
            Packet::PDh1 { .. } => self.dh_respond(pkt, rng).map(Some),
            Packet::PDh3 { .. } => self.dh_confirm(pkt).map(|_| None),
            other => Err(ProtocolError::UnexpectedPacket(other.name())),
        }
    }
}
