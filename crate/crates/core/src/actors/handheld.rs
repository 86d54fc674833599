//! The commissioning handheld: reads the card, builds `P_authComm`, downloads
//! it into the slave, then forgets the card contents.

use rand::RngCore;

use super::audit::{AuditLog, AuditStep};
use super::ems::{card_unlock, IdCard};
use super::slave::{SlavePhase, SlaveState, TamperProofStore};
use crate::crypto::{verify, PublicKey};
use crate::error::{ProtocolError, Result};
use crate::messages::codec::Writer;
use crate::messages::layout::seal_auth_comm;
use crate::messages::{ConfigurationData, EncAparam, PrincipalId};

#[derive(Debug, Clone)]
pub struct Handheld {
    pub id: PrincipalId,
    scratch: Option<EncAparam>,
}

impl Handheld {
    pub fn new(id: PrincipalId) -> Self {
        Handheld { id, scratch: None }
    }

    /// Serialized device memory, for checking that nothing from the card lingers.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.id.encode());
        match &self.scratch {
            Some(enc) => w.u8(1).bytes(&enc.encode()),
            None => w.u8(0),
        };
        w.finish()
    }

    fn wipe(&mut self) {
        if let Some(enc) = self.scratch.as_mut() {
            enc.env.wrapped_key.fill(0);
            enc.env.body.fill(0);
            enc.ems_signature.fill(0);
        }
        self.scratch = None;
    }

    /// `P_authComm = E(K_pub(EMS), (CD, ENC_APARAM))`, downloaded with CD and
    /// `K_pub(EMS)` into the slave's tamper-proof store.
    #[allow(clippy::too_many_arguments)]
    pub fn commission(
        &mut self,
        card: &IdCard,
        password: &[u8],
        cd: ConfigurationData,
        ems_pub: &PublicKey,
        slave: &mut SlaveState,
        audit: &mut AuditLog,
        rng: &mut impl RngCore,
    ) -> Result<()> {
        if slave.phase() != SlavePhase::Empty {
            return Err(ProtocolError::AlreadyProvisioned);
        }
        self.scratch = Some(card_unlock(card, password)?);
        let result = self.transfer(cd, ems_pub, slave, audit, rng);
        self.wipe();
        result
    }

    fn transfer(
        &self,
        cd: ConfigurationData,
        ems_pub: &PublicKey,
        slave: &mut SlaveState,
        audit: &mut AuditLog,
        rng: &mut impl RngCore,
    ) -> Result<()> {
        let enc = self.scratch.as_ref().expect("card was just read");
        if !verify(ems_pub, &enc.signed_body(), &enc.ems_signature) {
            return Err(ProtocolError::BadCardSignature);
        }
        let auth_comm = seal_auth_comm(ems_pub, &cd, enc, rng);
        slave.install(TamperProofStore { auth_comm, cd: cd.clone(), ems_pub: *ems_pub })?;
        audit.record_cd(AuditStep::Provisioned, &cd, format!("commissioned with {}", self.id));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::ems::EmsState;
    use crate::crypto::{derive_card_key, sym_encrypt, KeyPair};
    use crate::messages::Capability;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (ChaCha20Rng, EmsState, IdCard, ConfigurationData) {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let kp = KeyPair::generate(&mut rng);
        let sm = KeyPair::generate(&mut rng);
        let mut ems = EmsState::new(PrincipalId::ems("ems"), kp, sm.public);
        let card = ems.register_employee(PrincipalId::employee("alice"), b"pw", &mut rng).unwrap();
        let cd = ConfigurationData {
            slave_id: PrincipalId::slave("s1"),
            employee_id: PrincipalId::employee("alice"),
            handheld_id: Some(PrincipalId::handheld("hh")),
            capability: Capability::SymOnly,
            settings: vec![],
        };
        (rng, ems, card, cd)
    }

    #[test]
    fn commission_provisions_and_wipes() {
        let (mut rng, ems, card, cd) = setup();
        let mut hh = Handheld::new(PrincipalId::handheld("hh"));
        let mut slave = SlaveState::new(PrincipalId::slave("s1"));
        let mut audit = AuditLog::new();
        hh.commission(&card, b"pw", cd.clone(), &ems.public_key(), &mut slave, &mut audit, &mut rng).unwrap();
        assert_eq!(slave.phase(), SlavePhase::Provisioned);
        assert_eq!(audit.records()[0].employee_id, Some(cd.employee_id.clone()));
        assert_eq!(hh.snapshot(), Handheld::new(PrincipalId::handheld("hh")).snapshot());

        let again = hh.commission(&card, b"pw", cd, &ems.public_key(), &mut slave, &mut audit, &mut rng);
        assert_eq!(again, Err(ProtocolError::AlreadyProvisioned));
    }

    #[test]
    fn wrong_password_creates_nothing() {
        let (mut rng, ems, card, cd) = setup();
        let mut hh = Handheld::new(PrincipalId::handheld("hh"));
        let mut slave = SlaveState::new(PrincipalId::slave("s1"));
        let mut audit = AuditLog::new();
        let r = hh.commission(&card, b"guess", cd, &ems.public_key(), &mut slave, &mut audit, &mut rng);
        assert_eq!(r, Err(ProtocolError::WrongPassword));
        assert_eq!(slave.phase(), SlavePhase::Empty);
        assert!(audit.records().is_empty());
    }

    #[test]
    fn forged_card_signature() {
        let (mut rng, ems, card, cd) = setup();
        let mut enc = card_unlock(&card, b"pw").unwrap();
        enc.ems_signature[0] ^= 1;
        let key = derive_card_key(b"pw", &card.salt).unwrap();
        let forged = IdCard { locked_payload: sym_encrypt(&key, &enc.encode()), ..card };
        let mut hh = Handheld::new(PrincipalId::handheld("hh"));
        let mut slave = SlaveState::new(PrincipalId::slave("s1"));
        let r = hh.commission(&forged, b"pw", cd, &ems.public_key(), &mut slave, &mut AuditLog::new(), &mut rng);
        assert_eq!(r, Err(ProtocolError::BadCardSignature));
        assert_eq!(slave.phase(), SlavePhase::Empty);
        assert_eq!(hh.snapshot(), Handheld::new(PrincipalId::handheld("hh")).snapshot());
    }
}
