//! The canonical attack batteries, derived from a clean run of a base config.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::ScenarioConfig;
use super::{run_scenario, HarnessError, Run};
use crate::crypto::Envelope;
use crate::messages::Packet;
use crate::sim::{AdversaryAction, AdversaryScript, BusEvent, DropRule};

/// One attack scenario and its result. A battery passes when its run exits
/// with code 2.
#[derive(Debug)]
pub struct Battery {
    pub name: String,
    pub expected: Vec<String>,
    pub config: ScenarioConfig,
    pub run: Run,
}

impl Battery {
    pub fn blocked(&self) -> bool {
        self.run.exit_code() == 2
    }
}

fn random_like(bytes: &[u8], rng: &mut impl RngCore) -> Vec<u8> {
    let mut out = vec![0u8; bytes.len()];
    rng.fill_bytes(&mut out);
    out
}

/// Same packet type and field lengths, random contents.
fn scramble(pkt: &Packet, rng: &mut impl RngCore) -> Packet {
    let mut env =
        |e: &Envelope| Envelope { wrapped_key: random_like(&e.wrapped_key, rng), body: random_like(&e.body, rng) };
    match pkt {
        Packet::PAuthComm { env: e } => Packet::PAuthComm { env: env(e) },
        Packet::PJoin { env: e } => Packet::PJoin { env: env(e) },
        Packet::PJoinFwd { env: e } => Packet::PJoinFwd { env: env(e) },
        Packet::PAuthDev { env: e } => Packet::PAuthDev { env: env(e) },
        Packet::Delegation { env: e } => Packet::Delegation { env: env(e) },
        Packet::Challenge { ct } => Packet::Challenge { ct: random_like(ct, rng) },
        Packet::ChallengeResponse { ct } => Packet::ChallengeResponse { ct: random_like(ct, rng) },
        Packet::KeyDelivery { ct } => Packet::KeyDelivery { ct: random_like(ct, rng) },
        Packet::PDh1 { ct } => Packet::PDh1 { ct: random_like(ct, rng) },
        Packet::PDh2 { ct_nonce, ct_share } => {
            Packet::PDh2 { ct_nonce: random_like(ct_nonce, rng), ct_share: random_like(ct_share, rng) }
        }
        Packet::PDh3 { ct } => Packet::PDh3 { ct: random_like(ct, rng) },
    }
}

fn first<'a>(events: &'a [BusEvent], packet: &str) -> Option<&'a BusEvent> {
    events.iter().find(|e| e.packet.as_deref() == Some(packet))
}

/// Drops the message at `e.tick` and delivers `bytes` in its place.
fn replace(e: &BusEvent, bytes: Vec<u8>) -> Vec<AdversaryAction> {
    vec![
        AdversaryAction::Drop { rule: DropRule { tick: Some(e.tick), ..Default::default() } },
        AdversaryAction::Inject { from: e.from.clone(), to: e.to.clone(), bytes, at: Some(e.tick as usize + 1) },
    ]
}

struct Plan {
    name: String,
    actions: Vec<AdversaryAction>,
    expected: &'static [&'static str],
}

/// Runs every battery against `base`: join replay, challenge replay, raw and
/// well-framed random injection in place of each hop of the clean run,
/// commissioning with a stolen card and a guessed password, and a stolen
/// device.
pub fn replay_attack_suite(base: &ScenarioConfig) -> Result<Vec<Battery>, HarnessError> {
    let mut clean = base.clone();
    clean.adversary = AdversaryScript::default();
    clean.expect.clear();
    let baseline = run_scenario(clean.clone())?;
    let events = baseline.events();
    let mut plans = Vec::new();

    if let Some(e) = first(events, "PJoin") {
        plans.push(Plan {
            name: "pjoin-replay".into(),
            actions: vec![AdversaryAction::Replay { event: e.tick as usize, to: clean.ems_id(), at: None }],
            expected: &["ReplayDetected"],
        });
    }
    if let Some(e) = first(events, "Challenge") {
        plans.push(Plan {
            name: "challenge-replay".into(),
            actions: vec![AdversaryAction::Replay { event: e.tick as usize, to: e.to.clone(), at: None }],
            expected: &["WrongPhase"],
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(base.seed.rotate_left(17) ^ 0x0bad_5eed);
    for e in events {
        let packet = e.packet.as_deref().unwrap_or("raw");
        let len = rng.gen_range(1..=96);
        let mut raw = vec![0u8; len];
        rng.fill_bytes(&mut raw);
        plans.push(Plan {
            name: format!("inject-raw-{:02}-{packet}", e.tick),
            actions: replace(e, raw),
            expected: &["MalformedPacket", "AuthFail", "WrongNetwork"],
        });
        let pkt = Packet::decode(&e.bytes).expect("honest traffic decodes");
        plans.push(Plan {
            name: format!("inject-framed-{:02}-{packet}", e.tick),
            actions: replace(e, scramble(&pkt, &mut rng).encode()),
            expected: &["AuthFail", "WrongNetwork"],
        });
    }

    let victim = &clean.slaves[0];
    let password = &clean.employees.iter().find(|e| e.id == victim.employee).expect("validated").password;
    plans.push(Plan {
        name: "stolen-card".into(),
        actions: vec![AdversaryAction::StealCard {
            employee: victim.employee.clone(),
            password_guess: format!("{password}?"),
            at: None,
        }],
        expected: &["WrongPassword"],
    });
    plans.push(Plan {
        name: "stolen-device".into(),
        actions: vec![AdversaryAction::StealDevice { slave: victim.id.clone(), at: None }],
        expected: &["TamperProofDenied"],
    });

    plans
        .into_iter()
        .map(|plan| {
            let mut config = clean.clone();
            config.adversary.actions = plan.actions;
            config.expect = plan.expected.iter().map(|s| s.to_string()).collect();
            let run = run_scenario(config.clone())?;
            Ok(Battery { name: plan.name, expected: config.expect.clone(), config, run })
        })
        .collect()
}
