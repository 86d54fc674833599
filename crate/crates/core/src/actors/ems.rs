//! Employee management system and the ID cards it issues.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use sha2::{Digest, Sha256};

use super::audit::{AuditLog, AuditStep};
use crate::crypto::{
    derive_card_key, pk_decrypt, pk_encrypt, sign, sym_decrypt, sym_encrypt, verify, KeyPair, Nonce, PublicKey, SymKey,
    KEY_LEN,
};
use crate::error::{ProtocolError, Result};
use crate::messages::codec::{Reader, Writer};
use crate::messages::layout::{open_auth_comm, open_join, open_join_fwd, seal_auth_dev};
use crate::messages::{encode_envelope, Aparam, ConfigurationData, EncAparam, Packet, PrincipalId, Role, Signed};

/// An employee's ID card. The encrypted APARAM is locked under a key derived
/// from the employee's password; `check` lets the card tell a wrong password
/// apart from a corrupted payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdCard {
    pub employee_id: PrincipalId,
    pub salt: [u8; KEY_LEN],
    pub check: [u8; 32],
    pub locked_payload: Vec<u8>,
}

fn password_check(key: &SymKey) -> [u8; 32] {
    Sha256::new().chain_update(b"trustdeploy/card-check/v1").chain_update(key.0).finalize().into()
}

impl IdCard {
    /// Raw card contents, as an attacker holding the card would see them.
    pub fn encode(&self) -> Vec<u8> {
        Writer::new()
            .bytes(&self.employee_id.encode())
            .bytes(&self.salt)
            .bytes(&self.check)
            .bytes(&self.locked_payload)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let employee_id = PrincipalId::decode(r.bytes()?)?;
        let salt = r.bytes()?.try_into().map_err(|_| ProtocolError::MalformedPacket("card salt"))?;
        let check = r.bytes()?.try_into().map_err(|_| ProtocolError::MalformedPacket("card check"))?;
        let locked_payload = r.bytes()?.to_vec();
        r.finish()?;
        Ok(IdCard { employee_id, salt, check, locked_payload })
    }
}

/// Recovers the EMS-signed encrypted APARAM from a card.
pub fn card_unlock(card: &IdCard, password: &[u8]) -> Result<EncAparam> {
    let key = derive_card_key(password, &card.salt).map_err(|_| ProtocolError::WrongPassword)?;
    if password_check(&key) != card.check {
        return Err(ProtocolError::WrongPassword);
    }
    let plain = sym_decrypt(&key, &card.locked_payload).map_err(|_| ProtocolError::IntegrityError)?;
    EncAparam::decode(&plain).map_err(|_| ProtocolError::IntegrityError)
}

#[derive(Debug)]
pub struct EmsState {
    pub id: PrincipalId,
    keypair: KeyPair,
    registry: BTreeMap<PrincipalId, Aparam>,
    seen_joins: BTreeSet<(PrincipalId, Nonce)>,
    known_masters: BTreeMap<PrincipalId, PublicKey>,
    sm_pub: PublicKey,
}

/// Whatever was learned about a join before it failed, for the audit trail.
#[derive(Default)]
struct JoinTrace {
    slave: Option<PrincipalId>,
    cd: Option<ConfigurationData>,
}

impl EmsState {
    pub fn new(id: PrincipalId, keypair: KeyPair, sm_pub: PublicKey) -> Self {
        EmsState {
            id,
            keypair,
            registry: BTreeMap::new(),
            seen_joins: BTreeSet::new(),
            known_masters: BTreeMap::new(),
            sm_pub,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn seen_joins(&self) -> &BTreeSet<(PrincipalId, Nonce)> {
        &self.seen_joins
    }

    pub fn aparam(&self, employee: &PrincipalId) -> Option<Aparam> {
        self.registry.get(employee).copied()
    }

    pub fn enroll_master(&mut self, master: PrincipalId, public: PublicKey) {
        self.known_masters.insert(master, public);
    }

    /// Registers an employee and issues their ID card.
    pub fn register_employee(
        &mut self,
        employee_id: PrincipalId,
        password: &[u8],
        rng: &mut impl RngCore,
    ) -> Result<IdCard> {
        if self.registry.contains_key(&employee_id) {
            return Err(ProtocolError::DuplicateEmployee);
        }
        let mut secret = [0u8; KEY_LEN];
        rng.fill_bytes(&mut secret);
        let aparam = Aparam(secret);

        let env = pk_encrypt(&self.keypair.public, &aparam.0, rng);
        let ems_signature = sign(&self.keypair.private, &encode_envelope(&env));
        let enc = EncAparam { env, ems_signature };

        let mut salt = [0u8; KEY_LEN];
        rng.fill_bytes(&mut salt);
        let key = derive_card_key(password, &salt)?;
        let card = IdCard {
            employee_id: employee_id.clone(),
            salt,
            check: password_check(&key),
            locked_payload: sym_encrypt(&key, &enc.encode()),
        };
        self.registry.insert(employee_id, aparam);
        Ok(card)
    }

    /// Authenticates a direct or forwarded join and produces `P_authDev` for the SM.
    pub fn process_join(&mut self, pkt: &Packet, audit: &mut AuditLog, rng: &mut impl RngCore) -> Result<Packet> {
        let mut trace = JoinTrace::default();
        match self.try_process_join(pkt, &mut trace, rng) {
            Ok((out, cd, via)) => {
                let detail = match via {
                    Some(m) => format!("join via {m}"),
                    None => "direct join".to_string(),
                };
                audit.record_cd(AuditStep::Authenticated, &cd, detail);
                Ok(out)
            }
            Err(e) => {
                audit.reject(trace.cd.as_ref(), trace.slave.as_ref(), format!("EMS: {}", e.kind()));
                Err(e)
            }
        }
    }

    fn try_process_join(
        &mut self,
        pkt: &Packet,
        trace: &mut JoinTrace,
        rng: &mut impl RngCore,
    ) -> Result<(Packet, ConfigurationData, Option<PrincipalId>)> {
        let (join_env, via) = match pkt {
            Packet::PJoin { env } => (env.clone(), None),
            Packet::PJoinFwd { env } => {
                let (inner, master_sig) = open_join_fwd(&self.keypair.private, env)?;
                let master = PrincipalId::decode(&master_sig.body)?;
                let master_pub =
                    self.known_masters.get(&master).ok_or_else(|| ProtocolError::UnknownMaster(master.to_string()))?;
                if master.role != Role::Master || !verify(master_pub, &master_sig.body, &master_sig.signature) {
                    return Err(ProtocolError::BadMasterSignature);
                }
                match Packet::decode(&inner)? {
                    Packet::PJoin { env } => (env, Some(master)),
                    other => return Err(ProtocolError::UnexpectedPacket(other.name())),
                }
            }
            other => return Err(ProtocolError::UnexpectedPacket(other.name())),
        };

        let join = open_join(&self.keypair.private, &join_env)?;
        trace.slave = Some(join.slave_id.clone());
        let replay_key = (join.slave_id.clone(), join.nonce_s);
        if self.seen_joins.contains(&replay_key) {
            return Err(ProtocolError::ReplayDetected);
        }

        let (cd, enc) = open_auth_comm(&self.keypair.private, &join.auth_comm)?;
        trace.cd = Some(cd.clone());
        if cd.slave_id != join.slave_id {
            return Err(ProtocolError::SlaveMismatch);
        }
        let aparam = pk_decrypt(&self.keypair.private, &enc.env)?;
        let registered = self.registry.get(&cd.employee_id).ok_or(ProtocolError::UnknownEmployee)?;
        if aparam != registered.0 {
            return Err(ProtocolError::AparamMismatch);
        }

        self.seen_joins.insert(replay_key);
        let body = self.id.encode();
        let ems_sig = Signed { signature: sign(&self.keypair.private, &body), body };
        let out = seal_auth_dev(&self.sm_pub, &cd, &join.nonce_s, &ems_sig, rng);
        Ok((out, cd, via))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::layout::{seal_auth_comm, seal_join};
    use crate::messages::Capability;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        rng: ChaCha20Rng,
        ems: EmsState,
        card: IdCard,
    }

    fn fixture() -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let kp = KeyPair::generate(&mut rng);
        let sm = KeyPair::generate(&mut rng);
        let mut ems = EmsState::new(PrincipalId::ems("ems"), kp, sm.public);
        let card = ems.register_employee(PrincipalId::employee("alice"), b"pw", &mut rng).unwrap();
        Fixture { rng, ems, card }
    }

    fn cd(employee: &str) -> ConfigurationData {
        ConfigurationData {
            slave_id: PrincipalId::slave("s1"),
            employee_id: PrincipalId::employee(employee),
            handheld_id: None,
            capability: Capability::SymOnly,
            settings: vec![],
        }
    }

    fn pjoin(f: &mut Fixture, cd: &ConfigurationData, enc: &EncAparam, nonce: u128) -> Packet {
        let ems_pub = f.ems.public_key();
        let auth_comm = seal_auth_comm(&ems_pub, cd, enc, &mut f.rng);
        seal_join(&ems_pub, &auth_comm, &cd.slave_id, &Nonce::from_u128(nonce), &mut f.rng)
    }

    #[test]
    fn card_unlock_paths() {
        let f = fixture();
        let enc = card_unlock(&f.card, b"pw").unwrap();
        assert!(verify(&f.ems.public_key(), &enc.signed_body(), &enc.ems_signature));
        assert_eq!(card_unlock(&f.card, b"guess"), Err(ProtocolError::WrongPassword));
        assert_eq!(card_unlock(&f.card, b""), Err(ProtocolError::WrongPassword));

        let mut tampered = f.card.clone();
        tampered.locked_payload[3] ^= 1;
        assert_eq!(card_unlock(&tampered, b"pw"), Err(ProtocolError::IntegrityError));
        assert_eq!(IdCard::decode(&f.card.encode()).unwrap(), f.card);
    }

    #[test]
    fn duplicate_employee() {
        let mut f = fixture();
        assert_eq!(
            f.ems.register_employee(PrincipalId::employee("alice"), b"x", &mut f.rng),
            Err(ProtocolError::DuplicateEmployee)
        );
    }

    #[test]
    fn join_accepted_once() {
        let mut f = fixture();
        let enc = card_unlock(&f.card, b"pw").unwrap();
        let pkt = pjoin(&mut f, &cd("alice"), &enc, 5);
        let mut audit = AuditLog::new();
        let out = f.ems.process_join(&pkt, &mut audit, &mut f.rng).unwrap();
        assert_eq!(out.tag(), 0x04);
        assert_eq!(f.ems.seen_joins().len(), 1);
        assert_eq!(f.ems.process_join(&pkt, &mut audit, &mut f.rng), Err(ProtocolError::ReplayDetected));
        assert_eq!(f.ems.seen_joins().len(), 1);
        let steps: Vec<_> = audit.records().iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![AuditStep::Authenticated, AuditStep::Rejected]);
    }

    #[test]
    fn join_with_unregistered_or_mismatched_employee() {
        let mut f = fixture();
        let enc = card_unlock(&f.card, b"pw").unwrap();
        let mut audit = AuditLog::new();
        let pkt = pjoin(&mut f, &cd("mallory"), &enc, 1);
        assert_eq!(f.ems.process_join(&pkt, &mut audit, &mut f.rng), Err(ProtocolError::UnknownEmployee));

        let other = f.ems.register_employee(PrincipalId::employee("bob"), b"b", &mut f.rng).unwrap();
        let bob_enc = card_unlock(&other, b"b").unwrap();
        let pkt = pjoin(&mut f, &cd("alice"), &bob_enc, 2);
        assert_eq!(f.ems.process_join(&pkt, &mut audit, &mut f.rng), Err(ProtocolError::AparamMismatch));
        assert!(f.ems.seen_joins().is_empty());
        assert_eq!(audit.records()[1].employee_id, Some(PrincipalId::employee("alice")));
    }

    #[test]
    fn join_identity_must_match_cd() {
        let mut f = fixture();
        let enc = card_unlock(&f.card, b"pw").unwrap();
        let ems_pub = f.ems.public_key();
        let auth_comm = seal_auth_comm(&ems_pub, &cd("alice"), &enc, &mut f.rng);
        let pkt = seal_join(&ems_pub, &auth_comm, &PrincipalId::slave("s2"), &Nonce::from_u128(1), &mut f.rng);
        assert_eq!(f.ems.process_join(&pkt, &mut AuditLog::new(), &mut f.rng), Err(ProtocolError::SlaveMismatch));
    }

    #[test]
    fn undecryptable_join() {
        let mut f = fixture();
        let stranger = KeyPair::generate(&mut f.rng);
        let pkt = Packet::PJoin { env: pk_encrypt(&stranger.public, b"junk", &mut f.rng) };
        let mut audit = AuditLog::new();
        assert_eq!(f.ems.process_join(&pkt, &mut audit, &mut f.rng), Err(ProtocolError::AuthFail));
        assert_eq!(audit.records()[0].slave_id, None);
        let wrong = Packet::Challenge { ct: vec![] };
        assert_eq!(
            f.ems.process_join(&wrong, &mut audit, &mut f.rng),
            Err(ProtocolError::UnexpectedPacket("Challenge"))
        );
    }
}
