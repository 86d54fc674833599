//! One scenario: setup, the delivery loop, and adversary actions.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::{DhProfile, ScenarioConfig, SecrecyGoal};
use super::lift::{self, Lifter};
use super::HarnessError;
use crate::actors::{
    card_unlock, Accessor, AuditLog, EmsState, Handheld, IdCard, Master, MasterLink, SlaveState, SmState, Verifier,
};
use crate::closure::{check_secrecy, SecrecyResult, Term};
use crate::crypto::{DhParams, KeyPair, PublicKey, SymKey};
use crate::error::ProtocolError;
use crate::messages::{Capability, ConfigurationData, Packet, PrincipalId, Role, SETTING_MASTER};
use crate::sim::{AdversaryAction, Bus, BusEvent};

/// Upper bound on deliveries, so a replay loop cannot spin forever.
const MAX_DELIVERIES: usize = 10_000;

/// A step some actor refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub tick: u64,
    pub at: PrincipalId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slave: Option<PrincipalId>,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct World {
    pub config: ScenarioConfig,
    pub dh_params: DhParams,
    pub ems: EmsState,
    pub sm: SmState,
    pub masters: BTreeMap<PrincipalId, Master>,
    pub slaves: BTreeMap<PrincipalId, SlaveState>,
    pub handhelds: BTreeMap<PrincipalId, Handheld>,
    pub cards: BTreeMap<PrincipalId, IdCard>,
    pub audit: AuditLog,
    pub bus: Bus,
    pub lifter: Lifter,
    pub rejections: Vec<Rejection>,
    /// Attacks that got through.
    pub breaches: Vec<String>,
    /// Terms the adversary obtained off the wire (stolen cards, device dumps).
    pub stolen: Vec<Term>,
    /// Slaves whose unprotected memory the adversary has read.
    pub compromised: BTreeSet<PrincipalId>,
    rng: ChaCha20Rng,
    pending: Vec<AdversaryAction>,
}

fn setup_error(what: impl Into<String>) -> impl FnOnce(ProtocolError) -> HarnessError {
    let what = what.into();
    move |error| HarnessError::Setup { what, error }
}

impl World {
    /// Generates keys, registers employees and commissions every slave.
    pub fn build(config: ScenarioConfig) -> Result<World, HarnessError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let dh_params = match config.dh_profile {
            DhProfile::Toy => DhParams::toy(),
            DhProfile::Standard => DhParams::standard(),
        };
        let mut lifter = Lifter::new();

        let ems_id = config.ems_id();
        let sm_id = config.sm_id();
        let ems_kp = KeyPair::generate(&mut rng);
        let sm_kp = KeyPair::generate(&mut rng);
        let (ems_pub, sm_pub) = (ems_kp.public, sm_kp.public);
        lifter.add_keypair(ems_id.clone(), ems_kp.clone());
        lifter.add_keypair(sm_id.clone(), sm_kp.clone());
        let mut ems = EmsState::new(ems_id, ems_kp, sm_pub);
        let mut sm = SmState::new(sm_id, sm_kp, ems_pub, dh_params.clone())
            .with_delegation(config.delegation_mode, config.key_source);

        let mut masters = BTreeMap::new();
        for name in &config.masters {
            let id = PrincipalId::master(name);
            let kp = KeyPair::generate(&mut rng);
            let psk = match config.delegation_mode {
                crate::actors::DelegationMode::Preshared => Some(SymKey::generate(&mut rng)),
                crate::actors::DelegationMode::PublicKey => None,
            };
            if let Some(k) = psk {
                lifter.name_value(k.0, lift::PSK, name);
            }
            lifter.add_keypair(id.clone(), kp.clone());
            ems.enroll_master(id.clone(), kp.public);
            sm.enroll_master(id.clone(), MasterLink { public: kp.public, psk });
            let mut m = Master::new(id.clone(), kp, ems_pub, sm_pub, dh_params.clone());
            m.set_delegation(config.delegation_mode, psk);
            m.mark_trusted();
            masters.insert(id, m);
        }

        let mut cards = BTreeMap::new();
        for e in &config.employees {
            let id = PrincipalId::employee(&e.id);
            let card = ems
                .register_employee(id.clone(), e.password.as_bytes(), &mut rng)
                .map_err(setup_error(format!("registering {id}")))?;
            let aparam = ems.aparam(&id).expect("just registered");
            lifter.name_value(aparam.0, lift::APARAM, &e.id);
            cards.insert(id, card);
        }

        let mut world = World {
            dh_params,
            ems,
            sm,
            masters,
            slaves: BTreeMap::new(),
            handhelds: BTreeMap::new(),
            cards,
            audit: AuditLog::new(),
            bus: Bus::new(),
            lifter,
            rejections: Vec::new(),
            breaches: Vec::new(),
            stolen: Vec::new(),
            compromised: BTreeSet::new(),
            rng,
            pending: Vec::new(),
            config,
        };
        world.commission_all()?;
        for id in world.config.principals() {
            world.bus.register(id);
        }
        for rule in world.config.adversary.drop_rules() {
            world.bus.add_drop_rule(rule.clone());
        }
        world.pending = world
            .config
            .adversary
            .actions
            .iter()
            .filter(|a| !matches!(a, AdversaryAction::Observe | AdversaryAction::Drop { .. }))
            .cloned()
            .collect();
        Ok(world)
    }

    fn ems_pub(&self) -> PublicKey {
        self.ems.public_key()
    }

    fn commission_all(&mut self) -> Result<(), HarnessError> {
        let ems_pub = self.ems_pub();
        for s in self.config.slaves.clone() {
            let slave_id = PrincipalId::slave(&s.id);
            let employee_id = PrincipalId::employee(&s.employee);
            let hh_id = PrincipalId::handheld(&s.handheld);
            let settings = match self.config.master_of(&s) {
                Some(m) => vec![(SETTING_MASTER.to_vec(), m.into_bytes())],
                None => vec![],
            };
            let cd = ConfigurationData {
                slave_id: slave_id.clone(),
                employee_id: employee_id.clone(),
                handheld_id: Some(hh_id.clone()),
                capability: s.capability,
                settings,
            };
            let password = self.password(&s.employee).to_string();
            let card = &self.cards[&employee_id];
            let hh = self.handhelds.entry(hh_id.clone()).or_insert_with(|| Handheld::new(hh_id));
            let mut slave = SlaveState::new(slave_id.clone());
            hh.commission(card, password.as_bytes(), cd, &ems_pub, &mut slave, &mut self.audit, &mut self.rng)
                .map_err(setup_error(format!("commissioning {slave_id}")))?;
            self.slaves.insert(slave_id, slave);
        }
        Ok(())
    }

    fn password(&self, employee: &str) -> &str {
        self.config.employees.iter().find(|e| e.id == employee).map(|e| e.password.as_str()).unwrap_or_default()
    }

    /// Where a slave's join goes first.
    pub fn join_target(&self, slave: &PrincipalId) -> PrincipalId {
        let cfg = self.config.slaves.iter().find(|s| s.id == slave.name).expect("configured slave");
        match self.config.master_of(cfg) {
            Some(m) => PrincipalId::master(&m),
            None => self.config.ems_id(),
        }
    }

    /// The verifier responsible for a slave's challenge and key.
    pub fn verifier_for(&self, slave: &PrincipalId) -> &Verifier {
        let target = self.join_target(slave);
        match self.masters.get(&target) {
            Some(m) => &m.verifier,
            None => &self.sm.verifier,
        }
    }

    /// Records the current secret values under their symbolic names.
    fn learn(&mut self) {
        let l = &mut self.lifter;
        for (id, s) in &self.slaves {
            let dump = s.dump();
            if let Some(n) = dump.nonce_s {
                l.name_value(n.0, lift::NONCE_S, &id.name);
            }
            if let Some(n) = dump.rnd_s {
                l.name_value(n.0, lift::RND_S, &id.name);
            }
            for k in [dump.pending_key, dump.session_key].into_iter().flatten() {
                l.name_value(k.0, lift::SESSION_KEY, &id.name);
            }
        }
        let verifiers = std::iter::once(&self.sm.verifier).chain(self.masters.values().map(|m| &m.verifier));
        for v in verifiers {
            for id in self.slaves.keys() {
                if let Some(s) = v.session(id) {
                    l.name_value(s.challenger_nonce.0, lift::CHALLENGER, &id.name);
                }
                if let Some(k) = v.issued_key(id) {
                    l.name_value(k.0, lift::SESSION_KEY, &id.name);
                }
            }
        }
        for id in self.slaves.keys() {
            if let Some(k) = self.sm.supplied_key(id) {
                l.name_value(k.0, lift::SESSION_KEY, &id.name);
            }
        }
    }

    fn send(&mut self, from: &PrincipalId, to: &PrincipalId, pkt: &Packet) -> Result<(), HarnessError> {
        self.learn();
        let term = self.lifter.lift(pkt);
        self.bus.send(from, to, pkt, Some(term))?;
        Ok(())
    }

    fn reject(&mut self, at: &PrincipalId, slave: Option<PrincipalId>, error: &ProtocolError) {
        self.rejections.push(Rejection {
            tick: self.bus.len().saturating_sub(1) as u64,
            at: at.clone(),
            slave,
            kind: error.kind().to_string(),
            detail: error.to_string(),
        });
    }

    /// Every slave sends its join.
    fn start(&mut self) -> Result<(), HarnessError> {
        let ids: Vec<PrincipalId> = self.slaves.keys().cloned().collect();
        let ordered = self.config.slaves.iter().map(|s| PrincipalId::slave(&s.id)).filter(|id| ids.contains(id));
        for id in ordered.collect::<Vec<_>>() {
            let pkt = self
                .slaves
                .get_mut(&id)
                .expect("commissioned")
                .build_join(&mut self.rng)
                .map_err(setup_error(format!("joining {id}")))?;
            let to = self.join_target(&id);
            self.send(&id, &to, &pkt)?;
        }
        Ok(())
    }

    /// Runs until no message is in flight and every adversary action has fired.
    pub fn run(&mut self) -> Result<(), HarnessError> {
        self.start()?;
        let mut deliveries = 0;
        loop {
            self.fire_due()?;
            if let Some(ev) = self.bus.next_delivery().cloned() {
                deliveries += 1;
                if deliveries > MAX_DELIVERIES {
                    return Err(HarnessError::Runaway(MAX_DELIVERIES));
                }
                self.deliver(ev)?;
                continue;
            }
            if self.pending.is_empty() {
                return Ok(());
            }
            let next = self.pending.iter().position(|a| a.at().is_none()).unwrap_or(0);
            let action = self.pending.remove(next);
            self.fire(action)?;
        }
    }

    fn fire_due(&mut self) -> Result<(), HarnessError> {
        let len = self.bus.len();
        while let Some(pos) = self.pending.iter().position(|a| a.at().is_some_and(|t| t <= len)) {
            let action = self.pending.remove(pos);
            self.fire(action)?;
        }
        Ok(())
    }

    fn deliver(&mut self, ev: BusEvent) -> Result<(), HarnessError> {
        self.audit.set_tick(ev.tick);
        let slave_hint = [&ev.to, &ev.from].into_iter().find(|p| p.role == Role::Slave).cloned();
        let pkt = match Packet::decode(&ev.bytes) {
            Ok(p) => p,
            Err(e) => {
                let e = ProtocolError::from(e);
                if ev.to.role != Role::Slave {
                    self.audit.reject(None, slave_hint.as_ref(), format!("{}: {}", ev.to, e.kind()));
                }
                self.reject(&ev.to, slave_hint, &e);
                return Ok(());
            }
        };
        match self.step(&ev, &pkt) {
            Ok(Some((to, out))) => self.send(&ev.to, &to, &out)?,
            Ok(None) => {}
            Err(e) => self.reject(&ev.to, slave_hint, &e),
        }
        Ok(())
    }

    /// Hands one packet to its receiver. Returns the reply and its recipient.
    fn step(&mut self, ev: &BusEvent, pkt: &Packet) -> crate::Result<Option<(PrincipalId, Packet)>> {
        let rng = &mut self.rng;
        let audit = &mut self.audit;
        match ev.to.role {
            Role::Ems => {
                let out = self.ems.process_join(pkt, audit, rng)?;
                Ok(Some((self.config.sm_id(), out)))
            }
            Role::Sm => match pkt {
                Packet::PAuthDev { .. } => self.sm.begin_verification(pkt, audit, rng).map(Some),
                _ => self.sm.verifier.handle(&ev.from, pkt, audit, rng).map(|out| Some((ev.from.clone(), out))),
            },
            Role::Master => {
                let ems_id = self.config.ems_id();
                let m = self.masters.get_mut(&ev.to).expect("masters are registered");
                match pkt {
                    Packet::PJoin { .. } => m.forward(pkt, rng).map(|out| Some((ems_id, out))),
                    Packet::Delegation { .. } => m.challenge(pkt, audit, rng).map(Some),
                    _ => m.verifier.handle(&ev.from, pkt, audit, rng).map(|out| Some((ev.from.clone(), out))),
                }
            }
            Role::Slave => {
                let s = self.slaves.get_mut(&ev.to).expect("slaves are registered");
                Ok(s.handle(pkt, rng)?.map(|out| (ev.from.clone(), out)))
            }
            Role::Handheld | Role::IdCard | Role::Employee => Err(ProtocolError::UnexpectedPacket(pkt.name())),
        }
    }

    fn fire(&mut self, action: AdversaryAction) -> Result<(), HarnessError> {
        match action {
            AdversaryAction::Observe | AdversaryAction::Drop { .. } => {}
            AdversaryAction::Replay { event, to, .. } => {
                self.bus.replay(event, &to)?;
            }
            AdversaryAction::Inject { from, to, bytes, .. } => {
                let term = self.lifter.lift_bytes(&bytes);
                self.bus.inject(&from, &to, bytes, Some(term))?;
            }
            AdversaryAction::StealCard { employee, password_guess, .. } => self.steal_card(&employee, &password_guess),
            AdversaryAction::StealDevice { slave, .. } => self.steal_device(&slave),
        }
        Ok(())
    }

    /// The thief learns the card bytes and tries to commission a rogue device.
    fn steal_card(&mut self, employee: &str, guess: &str) {
        let emp = PrincipalId::employee(employee);
        let card = self.cards[&emp].clone();
        let real = card_unlock(&card, self.password(employee).as_bytes()).expect("issued cards unlock");
        let inner = self.lifter.enc_aparam(&real.encode());
        self.stolen.push(Term::sym_enc(Term::atom(format!("card:{employee}")), inner));
        self.stolen.push(Term::atom(format!("salt:{employee}")));

        let rogue_id = PrincipalId::slave(&format!("rogue-{employee}"));
        let mut rogue = SlaveState::new(rogue_id.clone());
        let mut hh = Handheld::new(PrincipalId::handheld("rogue"));
        let cd = ConfigurationData {
            slave_id: rogue_id.clone(),
            employee_id: emp,
            handheld_id: Some(hh.id.clone()),
            capability: Capability::SymOnly,
            settings: vec![],
        };
        let ems_pub = self.ems_pub();
        match hh.commission(&card, guess.as_bytes(), cd, &ems_pub, &mut rogue, &mut self.audit, &mut self.rng) {
            Ok(()) => self.breaches.push(format!("{rogue_id} commissioned with {employee}'s stolen card")),
            Err(e) => {
                let at = hh.id.clone();
                self.reject(&at, Some(rogue_id), &e);
            }
        }
    }

    /// The thief reads the device's unprotected memory.
    fn steal_device(&mut self, name: &str) {
        let id = PrincipalId::slave(name);
        let s = &self.slaves[&id];
        let denied = s.tamper_proof_store(Accessor::External).err();
        let dump = s.dump();
        let values = [dump.nonce_s.map(|n| n.0), dump.rnd_s.map(|n| n.0), dump.pending_key.map(|k| k.0)]
            .into_iter()
            .chain([dump.session_key.map(|k| k.0)])
            .flatten();
        self.learn();
        for v in values.collect::<Vec<_>>() {
            self.stolen.push(self.lifter.value(&v));
        }
        self.compromised.insert(id.clone());
        match denied {
            Some(e) => self.reject(&id, Some(id.clone()), &e),
            None => self.breaches.push(format!("tamper-proof store of {id} was read")),
        }
    }

    /// What any outsider knows: public keys, identities, configuration
    /// labels and the DH group.
    pub fn public_knowledge(&self) -> Vec<Term> {
        let mut out: Vec<Term> = self.config.principals().iter().map(lift::id_atom).collect();
        out.extend(self.config.principals().iter().map(|p| Term::atom(lift::pk_label(p))));
        out.extend(self.slaves.keys().map(|s| Term::atom(format!("cd:{}", s.name))));
        out.push(Term::atom("dh_p"));
        out.push(Term::atom("dh_g"));
        out
    }

    /// The configured secrecy goals, minus the session secrets of slaves whose
    /// memory was read.
    pub fn secrets(&self) -> Vec<Term> {
        let mut out = Vec::new();
        for goal in &self.config.checks {
            if *goal == SecrecyGoal::Aparam {
                out.extend(self.config.employees.iter().map(|e| lift::secret_atom(lift::APARAM, &e.id)));
                continue;
            }
            let kind = match goal {
                SecrecyGoal::NonceS => lift::NONCE_S,
                SecrecyGoal::RndS => lift::RND_S,
                SecrecyGoal::ChallengerNonce => lift::CHALLENGER,
                _ => lift::SESSION_KEY,
            };
            for id in self.slaves.keys().filter(|id| !self.compromised.contains(*id)) {
                out.push(lift::secret_atom(kind, &id.name));
            }
        }
        out
    }

    /// Terms of every event, delivered or intercepted.
    pub fn transcript_terms(&self) -> Vec<Term> {
        self.bus.events().iter().filter_map(|e| e.term.clone()).collect()
    }

    /// Adversary knowledge at the end of the run.
    pub fn adversary_initial(&self) -> Vec<Term> {
        let mut out = self.public_knowledge();
        out.extend(self.stolen.iter().cloned());
        out
    }

    pub fn secrecy(&self) -> Vec<SecrecyResult> {
        check_secrecy(&self.transcript_terms(), &self.adversary_initial(), &self.secrets())
    }

    /// Whether a slave and its verifier hold the same key (and, for
    /// SM-supplied keys, the SM agrees too).
    pub fn keys_agree(&self, slave: &PrincipalId) -> bool {
        let Some(k) = self.slaves.get(slave).and_then(SlaveState::session_key) else {
            return false;
        };
        let verifier_ok = self.verifier_for(slave).issued_key(slave) == Some(k);
        let sm_ok = self.sm.supplied_key(slave).is_none_or(|s| s == k);
        verifier_ok && sm_ok
    }
}
