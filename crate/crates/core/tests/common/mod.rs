#![allow(dead_code)]

use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use trustdeploy::actors::{AuditLog, EmsState, Handheld, SlaveState, SmState};
use trustdeploy::crypto::{DhParams, KeyPair};
use trustdeploy::harness::{run_scenario, Run, ScenarioConfig};
use trustdeploy::messages::{Capability, ConfigurationData, Packet, PrincipalId};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn run(name: &str) -> Run {
    run_scenario(scenario(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub const HAPPY_PATHS: [(&str, usize); 4] = [
    ("direct-symmetric.toml", 5),
    ("hierarchical-symmetric.toml", 7),
    ("direct-dh.toml", 7),
    ("hierarchical-dh.toml", 9),
];

/// Fills every request with one byte. A single fill of width one is how the
/// toy group samples an exponent, so byte `e - 2` yields exponent `e`.
pub struct FixedRng(pub u8);

impl RngCore for FixedRng {
    fn next_u32(&mut self) -> u32 {
        u32::from_ne_bytes([self.0; 4])
    }
    fn next_u64(&mut self) -> u64 {
        u64::from_ne_bytes([self.0; 8])
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        dest.fill(self.0);
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// One slave joining an EMS and SM directly, driven step by step so tests can
/// stop at any point and tamper with the next packet.
pub struct Flow {
    pub ems: EmsState,
    pub sm: SmState,
    pub slave: SlaveState,
    pub slave_id: PrincipalId,
    pub audit: AuditLog,
    pub rng: ChaCha20Rng,
}

impl Flow {
    pub fn commissioned(seed: u64, capability: Capability, params: DhParams) -> Flow {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ems_kp = KeyPair::generate(&mut rng);
        let sm_kp = KeyPair::generate(&mut rng);
        let mut ems = EmsState::new(PrincipalId::ems("ems"), ems_kp.clone(), sm_kp.public);
        let sm = SmState::new(PrincipalId::sm("sm"), sm_kp, ems_kp.public, params);
        let employee = PrincipalId::employee("alice");
        let card = ems.register_employee(employee.clone(), b"pw", &mut rng).unwrap();
        let slave_id = PrincipalId::slave("s1");
        let hh_id = PrincipalId::handheld("hh1");
        let cd = ConfigurationData {
            slave_id: slave_id.clone(),
            employee_id: employee,
            handheld_id: Some(hh_id.clone()),
            capability,
            settings: vec![],
        };
        let mut slave = SlaveState::new(slave_id.clone());
        let mut audit = AuditLog::new();
        Handheld::new(hh_id).commission(&card, b"pw", cd, &ems_kp.public, &mut slave, &mut audit, &mut rng).unwrap();
        Flow { ems, sm, slave, slave_id, audit, rng }
    }

    pub fn join(&mut self) -> Packet {
        self.slave.build_join(&mut self.rng).unwrap()
    }

    /// Join through the EMS and SM; returns the Challenge, undelivered.
    pub fn challenge(&mut self) -> Packet {
        let pjoin = self.join();
        let pdev = self.ems.process_join(&pjoin, &mut self.audit, &mut self.rng).unwrap();
        let (to, ch) = self.sm.begin_verification(&pdev, &mut self.audit, &mut self.rng).unwrap();
        assert_eq!(to, self.slave_id);
        ch
    }

    /// Returns the slave's Response, undelivered.
    pub fn response(&mut self) -> Packet {
        let ch = self.challenge();
        self.slave.answer_challenge(&ch, &mut self.rng).unwrap()
    }

    /// Delivers the Response; returns the key step (KeyDelivery or PDh1), undelivered.
    pub fn key_step(&mut self) -> Packet {
        let resp = self.response();
        let id = self.slave_id.clone();
        self.sm.verifier.handle(&id, &resp, &mut self.audit, &mut self.rng).unwrap()
    }

    /// Delivers PDh1; returns PDh2, undelivered.
    pub fn dh2(&mut self) -> Packet {
        let p1 = self.key_step();
        self.slave.dh_respond(&p1, &mut self.rng).unwrap()
    }

    /// Delivers PDh2; returns PDh3, undelivered.
    pub fn dh3(&mut self) -> Packet {
        let p2 = self.dh2();
        let id = self.slave_id.clone();
        self.sm.verifier.dh_finish(&id, &p2, &mut self.audit).unwrap()
    }
}
