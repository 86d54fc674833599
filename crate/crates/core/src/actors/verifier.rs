//! The two verifying roles: the security manager and a trusted master.
//!
//! Both run the same challenge-response and key-establishment machinery,
//! held in [`Verifier`]. The SM challenges directly-connected slaves itself
//! and delegates hierarchical ones to the slave's master.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::audit::{AuditLog, AuditStep};
use super::slave::{CHALLENGE_OFFSET, DH_CONFIRM_OFFSET, DH_FINISH_OFFSET, KEY_OFFSET, RESPONSE_OFFSET};
use crate::crypto::{dh_gen, dh_shared, sign, verify, DhKeyPair, DhParams, KeyPair, Nonce, PublicKey, SymKey};
use crate::error::{ProtocolError, Result};
use crate::messages::layout::{
    open_auth_dev, open_delegation, open_dh2_counter, open_dh2_share, open_response, seal_challenge, seal_delegation,
    seal_dh1, seal_dh3, seal_join_fwd, seal_key_delivery, DelegationContents, DelegationOpen, DelegationSeal,
};
use crate::messages::{Capability, ConfigurationData, Packet, PrincipalId, Role, Signed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DelegationMode {
    #[default]
    PublicKey,
    Preshared,
}

/// Who generates the hierarchical session key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KeySource {
    #[default]
    Master,
    Sm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PendingPhase {
    Challenged,
    Verified,
    DhOffered,
    Keyed,
}

impl PendingPhase {
    fn as_str(self) -> &'static str {
        match self {
            PendingPhase::Challenged => "CHALLENGED",
            PendingPhase::Verified => "VERIFIED",
            PendingPhase::DhOffered => "DH_OFFERED",
            PendingPhase::Keyed => "KEYED",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PendingSession {
    pub cd: ConfigurationData,
    pub nonce_s: Nonce,
    pub challenger_nonce: Nonce,
    pub rnd_s: Option<Nonce>,
    pub phase: PendingPhase,
    preset_key: Option<SymKey>,
    dh: Option<DhKeyPair>,
}

/// Per-slave verification sessions and the keys issued through them.
#[derive(Debug, Clone)]
pub struct Verifier {
    pub id: PrincipalId,
    dh_params: DhParams,
    pending: BTreeMap<PrincipalId, PendingSession>,
    issued_keys: BTreeMap<PrincipalId, SymKey>,
}

impl Verifier {
    pub fn new(id: PrincipalId, dh_params: DhParams) -> Self {
        Verifier { id, dh_params, pending: BTreeMap::new(), issued_keys: BTreeMap::new() }
    }

    pub fn issued_key(&self, slave: &PrincipalId) -> Option<SymKey> {
        self.issued_keys.get(slave).copied()
    }

    pub fn issued_keys(&self) -> &BTreeMap<PrincipalId, SymKey> {
        &self.issued_keys
    }

    pub fn session(&self, slave: &PrincipalId) -> Option<&PendingSession> {
        self.pending.get(slave)
    }

    /// Starts (or restarts) a session: `E(NONCE_S, (challenger_nonce, NONCE_S + 1))`.
    pub fn open_session(
        &mut self,
        cd: ConfigurationData,
        nonce_s: Nonce,
        preset_key: Option<SymKey>,
        rng: &mut impl RngCore,
    ) -> Packet {
        let challenger_nonce = Nonce::generate(rng);
        let pkt = seal_challenge(&nonce_s, &challenger_nonce, &nonce_s.offset(CHALLENGE_OFFSET));
        self.pending.insert(
            cd.slave_id.clone(),
            PendingSession {
                cd,
                nonce_s,
                challenger_nonce,
                rnd_s: None,
                phase: PendingPhase::Challenged,
                preset_key,
                dh: None,
            },
        );
        pkt
    }

    fn session_in(&self, slave: &PrincipalId, phase: PendingPhase) -> Result<&PendingSession> {
        let s = self.pending.get(slave).ok_or_else(|| ProtocolError::UnknownSession(slave.to_string()))?;
        if s.phase != phase {
            return Err(ProtocolError::WrongPhase { expected: phase.as_str(), actual: s.phase.as_str() });
        }
        Ok(s)
    }

    fn audited<T>(&self, slave: &PrincipalId, audit: &mut AuditLog, result: Result<T>) -> Result<T> {
        if let Err(e) = &result {
            let cd = self.pending.get(slave).map(|s| &s.cd);
            audit.reject(cd, Some(slave), format!("{}: {}", self.id, e.kind()));
        }
        result
    }

    /// Checks `E(challenger_nonce, (RND_S, NONCE_S + 2))` and returns `RND_S`.
    pub fn check_response(&mut self, slave: &PrincipalId, resp: &Packet, audit: &mut AuditLog) -> Result<Nonce> {
        let result = self.try_check_response(slave, resp);
        let rnd = self.audited(slave, audit, result)?;
        let s = self.pending.get_mut(slave).expect("checked above");
        s.rnd_s = Some(rnd);
        s.phase = PendingPhase::Verified;
        audit.record_cd(AuditStep::Verified, &s.cd, format!("verified by {}", self.id));
        Ok(rnd)
    }

    fn try_check_response(&self, slave: &PrincipalId, resp: &Packet) -> Result<Nonce> {
        let Packet::ChallengeResponse { ct } = resp else {
            return Err(ProtocolError::UnexpectedPacket(resp.name()));
        };
        let s = self.session_in(slave, PendingPhase::Challenged)?;
        let (rnd, counter) = open_response(&s.challenger_nonce, ct)?;
        if counter != s.nonce_s.offset(RESPONSE_OFFSET) {
            return Err(ProtocolError::CounterMismatch);
        }
        Ok(rnd)
    }

    fn verified(&self, slave: &PrincipalId, capability: Capability) -> Result<&PendingSession> {
        let s = self.pending.get(slave).ok_or_else(|| ProtocolError::UnknownSession(slave.to_string()))?;
        if s.phase != PendingPhase::Verified {
            return Err(ProtocolError::NotVerified);
        }
        if s.cd.capability != capability {
            return Err(ProtocolError::WrongCapability);
        }
        Ok(s)
    }

    /// `E(RND_S, (K, NONCE_S + 3))` for a verified symmetric-only slave.
    pub fn issue_symmetric_key(
        &mut self,
        slave: &PrincipalId,
        audit: &mut AuditLog,
        rng: &mut impl RngCore,
    ) -> Result<Packet> {
        let result = self.verified(slave, Capability::SymOnly).map(|s| (s.preset_key, s.rnd_s, s.nonce_s));
        let (preset, rnd, nonce) = self.audited(slave, audit, result)?;
        let key = preset.unwrap_or_else(|| SymKey::generate(rng));
        let pkt = seal_key_delivery(&rnd.expect("verified session has RND_S"), &key, &nonce.offset(KEY_OFFSET));
        let s = self.pending.get_mut(slave).expect("checked above");
        s.phase = PendingPhase::Keyed;
        self.issued_keys.insert(slave.clone(), key);
        let source = if preset.is_some() { "SM-supplied" } else { "generated" };
        audit.record_cd(AuditStep::KeyIssued, &s.cd, format!("symmetric key {source} by {}", self.id));
        Ok(pkt)
    }

    /// `E(RND_S, (p, g, A, NONCE_S + 3))` for a verified asymmetric-capable slave.
    pub fn dh_init(&mut self, slave: &PrincipalId, audit: &mut AuditLog, rng: &mut impl RngCore) -> Result<Packet> {
        let result = self.verified(slave, Capability::AsymCapable).map(|s| (s.rnd_s, s.nonce_s));
        let (rnd, nonce) = self.audited(slave, audit, result)?;
        let mine = dh_gen(&self.dh_params, rng);
        let pkt = seal_dh1(&rnd.expect("verified"), &self.dh_params, &mine.share, &nonce.offset(KEY_OFFSET));
        let s = self.pending.get_mut(slave).expect("checked above");
        s.dh = Some(mine);
        s.phase = PendingPhase::DhOffered;
        Ok(pkt)
    }

    /// Recovers `B`, derives `K_S`, checks the slave's key confirmation
    /// `E(K_S, NONCE_S + 4)` and answers `E(K_S, NONCE_S + 5)`.
    pub fn dh_finish(&mut self, slave: &PrincipalId, p2: &Packet, audit: &mut AuditLog) -> Result<Packet> {
        let result = self.try_dh_finish(slave, p2);
        let (k_s, pkt) = self.audited(slave, audit, result)?;
        let s = self.pending.get_mut(slave).expect("checked above");
        s.phase = PendingPhase::Keyed;
        s.dh = None;
        self.issued_keys.insert(slave.clone(), k_s);
        audit.record_cd(AuditStep::KeyIssued, &s.cd, format!("DH key agreed with {}", self.id));
        Ok(pkt)
    }

    fn try_dh_finish(&self, slave: &PrincipalId, p2: &Packet) -> Result<(SymKey, Packet)> {
        let Packet::PDh2 { ct_nonce, ct_share } = p2 else {
            return Err(ProtocolError::UnexpectedPacket(p2.name()));
        };
        let s = self.session_in(slave, PendingPhase::DhOffered)?;
        let rnd = s.rnd_s.expect("offered session has RND_S");
        let share_b = open_dh2_share(&rnd, ct_share)?;
        let mine = s.dh.as_ref().expect("offered session has a DH secret");
        let k_s = dh_shared(&self.dh_params, &mine.secret, &share_b)?;
        let counter = open_dh2_counter(&k_s, ct_nonce)?;
        if counter != s.nonce_s.offset(DH_CONFIRM_OFFSET) {
            return Err(ProtocolError::CounterMismatch);
        }
        Ok((k_s, seal_dh3(&k_s, &s.nonce_s.offset(DH_FINISH_OFFSET))))
    }

    /// Picks the key-establishment path from the slave's capability.
    pub fn establish(&mut self, slave: &PrincipalId, audit: &mut AuditLog, rng: &mut impl RngCore) -> Result<Packet> {
        let capability = self.pending.get(slave).map(|s| s.cd.capability);
        match capability {
            Some(Capability::AsymCapable) => self.dh_init(slave, audit, rng),
            _ => self.issue_symmetric_key(slave, audit, rng),
        }
    }

    /// Handles a packet from a slave in session; returns the reply.
    pub fn handle(
        &mut self,
        slave: &PrincipalId,
        pkt: &Packet,
        audit: &mut AuditLog,
        rng: &mut impl RngCore,
    ) -> Result<Packet> {
        match pkt {
            Packet::ChallengeResponse { .. } => {
                self.check_response(slave, pkt, audit)?;
                self.establish(slave, audit, rng)
            }
            Packet::PDh2 { .. } => self.dh_finish(slave, pkt, audit),
            other => {
                let e = ProtocolError::UnexpectedPacket(other.name());
                self.audited(slave, audit, Err(e))
            }
        }
    }
}

fn signed_identity(keypair: &KeyPair, id: &PrincipalId) -> Signed {
    let body = id.encode();
    Signed { signature: sign(&keypair.private, &body), body }
}

fn check_signed_identity(signed: &Signed, role: Role, public: &PublicKey) -> bool {
    matches!(PrincipalId::decode(&signed.body), Ok(id) if id.role == role)
        && verify(public, &signed.body, &signed.signature)
}

/// Key material the SM holds for a master.
#[derive(Debug, Clone)]
pub struct MasterLink {
    pub public: PublicKey,
    pub psk: Option<SymKey>,
}

#[derive(Debug, Clone)]
pub struct SmState {
    keypair: KeyPair,
    ems_pub: PublicKey,
    known_masters: BTreeMap<PrincipalId, MasterLink>,
    delegation_mode: DelegationMode,
    key_source: KeySource,
    seen: BTreeSet<(PrincipalId, Nonce)>,
    supplied_keys: BTreeMap<PrincipalId, SymKey>,
    pub verifier: Verifier,
}

impl SmState {
    pub fn new(id: PrincipalId, keypair: KeyPair, ems_pub: PublicKey, dh_params: DhParams) -> Self {
        SmState {
            keypair,
            ems_pub,
            known_masters: BTreeMap::new(),
            delegation_mode: DelegationMode::default(),
            key_source: KeySource::default(),
            seen: BTreeSet::new(),
            supplied_keys: BTreeMap::new(),
            verifier: Verifier::new(id, dh_params),
        }
    }

    pub fn with_delegation(mut self, mode: DelegationMode, key_source: KeySource) -> Self {
        self.delegation_mode = mode;
        self.key_source = key_source;
        self
    }

    pub fn id(&self) -> &PrincipalId {
        &self.verifier.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn enroll_master(&mut self, master: PrincipalId, link: MasterLink) {
        self.known_masters.insert(master, link);
    }

    /// Keys the SM handed to masters for hierarchical slaves.
    pub fn supplied_key(&self, slave: &PrincipalId) -> Option<SymKey> {
        self.supplied_keys.get(slave).copied()
    }

    /// Opens `P_authDev` and either challenges the slave directly or delegates
    /// the challenge to the slave's master. Returns the recipient and packet.
    pub fn begin_verification(
        &mut self,
        pkt: &Packet,
        audit: &mut AuditLog,
        rng: &mut impl RngCore,
    ) -> Result<(PrincipalId, Packet)> {
        let mut known_cd = None;
        let result = self.try_begin(pkt, &mut known_cd, rng);
        if let Err(e) = &result {
            audit.reject(known_cd.as_ref(), None, format!("{}: {}", self.id(), e.kind()));
        }
        result
    }

    fn try_begin(
        &mut self,
        pkt: &Packet,
        known_cd: &mut Option<ConfigurationData>,
        rng: &mut impl RngCore,
    ) -> Result<(PrincipalId, Packet)> {
        let Packet::PAuthDev { env } = pkt else {
            return Err(ProtocolError::UnexpectedPacket(pkt.name()));
        };
        let (cd, nonce_s, ems_sig) = open_auth_dev(&self.keypair.private, env)?;
        *known_cd = Some(cd.clone());
        if !check_signed_identity(&ems_sig, Role::Ems, &self.ems_pub) {
            return Err(ProtocolError::BadEmsSignature);
        }
        let replay_key = (cd.slave_id.clone(), nonce_s);
        if self.seen.contains(&replay_key) {
            return Err(ProtocolError::ReplayDetected);
        }

        let Some(master) = cd.master() else {
            self.seen.insert(replay_key);
            let slave = cd.slave_id.clone();
            return Ok((slave, self.verifier.open_session(cd, nonce_s, None, rng)));
        };

        let link = self.known_masters.get(&master).ok_or_else(|| ProtocolError::UnknownMaster(master.to_string()))?;
        let seal = match self.delegation_mode {
            DelegationMode::PublicKey => DelegationSeal::Public(&link.public),
            DelegationMode::Preshared => DelegationSeal::Preshared(
                link.psk.as_ref().ok_or_else(|| ProtocolError::UnknownMaster(master.to_string()))?,
            ),
        };
        let preset_key = match (self.key_source, cd.capability) {
            (KeySource::Sm, Capability::SymOnly) => Some(SymKey::generate(rng)),
            _ => None,
        };
        let contents =
            DelegationContents { nonce_s, sm_sig: signed_identity(&self.keypair, self.id()), cd, preset_key };
        let out = seal_delegation(seal, &contents, rng);
        if let Some(k) = preset_key {
            self.supplied_keys.insert(contents.cd.slave_id.clone(), k);
        }
        self.seen.insert(replay_key);
        Ok((master, out))
    }
}

/// A Level-1 device that relays joins and verifies slaves below it.
#[derive(Debug, Clone)]
pub struct Master {
    keypair: KeyPair,
    ems_pub: PublicKey,
    sm_pub: PublicKey,
    psk: Option<SymKey>,
    delegation_mode: DelegationMode,
    trusted: bool,
    seen: BTreeSet<(PrincipalId, Nonce)>,
    pub verifier: Verifier,
}

impl Master {
    pub fn new(id: PrincipalId, keypair: KeyPair, ems_pub: PublicKey, sm_pub: PublicKey, dh_params: DhParams) -> Self {
        Master {
            keypair,
            ems_pub,
            sm_pub,
            psk: None,
            delegation_mode: DelegationMode::default(),
            trusted: false,
            seen: BTreeSet::new(),
            verifier: Verifier::new(id, dh_params),
        }
    }

    pub fn id(&self) -> &PrincipalId {
        &self.verifier.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn is_trusted(&self) -> bool {
        self.trusted
    }

    pub fn set_delegation(&mut self, mode: DelegationMode, psk: Option<SymKey>) {
        self.delegation_mode = mode;
        self.psk = psk;
    }

    /// Marks the master's own trust establishment with EMS and SM as complete.
    pub fn mark_trusted(&mut self) {
        self.trusted = true;
    }

    /// `P_joinFwd = E(K_pub(EMS), (P_join, sign(M_ID)))`.
    pub fn forward(&self, pjoin: &Packet, rng: &mut impl RngCore) -> Result<Packet> {
        if !self.trusted {
            return Err(ProtocolError::MasterNotTrusted);
        }
        let Packet::PJoin { .. } = pjoin else {
            return Err(ProtocolError::UnexpectedPacket(pjoin.name()));
        };
        Ok(seal_join_fwd(&self.ems_pub, &pjoin.encode(), &signed_identity(&self.keypair, self.id()), rng))
    }

    /// Opens the SM's delegation and challenges the slave. Returns the slave
    /// and the challenge.
    pub fn challenge(
        &mut self,
        delegation: &Packet,
        audit: &mut AuditLog,
        rng: &mut impl RngCore,
    ) -> Result<(PrincipalId, Packet)> {
        let result = self.try_challenge(delegation);
        let contents = match result {
            Ok(c) => c,
            Err(e) => {
                audit.reject(None, None, format!("{}: {}", self.id(), e.kind()));
                return Err(e);
            }
        };
        self.seen.insert((contents.cd.slave_id.clone(), contents.nonce_s));
        let slave = contents.cd.slave_id.clone();
        let pkt = self.verifier.open_session(contents.cd, contents.nonce_s, contents.preset_key, rng);
        Ok((slave, pkt))
    }

    fn try_challenge(&self, delegation: &Packet) -> Result<DelegationContents> {
        let Packet::Delegation { env } = delegation else {
            return Err(ProtocolError::UnexpectedPacket(delegation.name()));
        };
        let open = match (self.delegation_mode, &self.psk) {
            (DelegationMode::Preshared, Some(k)) => DelegationOpen::Preshared(k),
            _ => DelegationOpen::Private(&self.keypair.private),
        };
        let contents = open_delegation(open, env)?;
        if !check_signed_identity(&contents.sm_sig, Role::Sm, &self.sm_pub) {
            return Err(ProtocolError::BadSmSignature);
        }
        if self.seen.contains(&(contents.cd.slave_id.clone(), contents.nonce_s)) {
            return Err(ProtocolError::ReplayDetected);
        }
        Ok(contents)
    }
}
