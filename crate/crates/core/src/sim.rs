//! Deterministic message bus with a scripted Dolev-Yao adversary.
//!
//! Every send, drop, replay and injection becomes one [`BusEvent`] in an
//! append-only transcript; the event's index is its tick. Deliveries are
//! strictly first-in first-out, so a run is a pure function of its inputs.
//! The adversary observes every event; it can only suppress, replay or forge
//! messages through explicit script actions.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closure::Term;
use crate::messages::{tag_name, Packet, PrincipalId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("principal {0} is not registered on the bus")]
    UnknownPrincipal(PrincipalId),
    #[error("event index {index} is out of range (transcript has {len} events)")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Disposition {
    Delivered,
    Dropped,
    Injected,
    Replayed,
}

impl Disposition {
    /// Whether the bytes reached the receiver.
    pub fn on_wire(self) -> bool {
        self != Disposition::Dropped
    }
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Disposition::Delivered => "DELIVERED",
            Disposition::Dropped => "DROPPED",
            Disposition::Injected => "INJECTED",
            Disposition::Replayed => "REPLAYED",
        })
    }
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusEvent {
    pub tick: u64,
    pub from: PrincipalId,
    pub to: PrincipalId,
    pub disposition: Disposition,
    /// Packet name from the tag byte, if the tag is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet: Option<String>,
    #[serde(with = "hex")]
    pub bytes: Vec<u8>,
    /// Symbolic structure of `bytes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term: Option<Term>,
}

/// Suppresses matching sends. Unset fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropRule {
    #[serde(default)]
    pub from: Option<PrincipalId>,
    #[serde(default)]
    pub to: Option<PrincipalId>,
    /// Packet name, e.g. `"Challenge"`.
    #[serde(default)]
    pub packet: Option<String>,
    /// Only the send that would land at this tick.
    #[serde(default)]
    pub tick: Option<u64>,
}

impl DropRule {
    pub fn matches(&self, tick: u64, from: &PrincipalId, to: &PrincipalId, bytes: &[u8]) -> bool {
        let packet = bytes.first().copied().and_then(tag_name);
        self.from.as_ref().is_none_or(|f| f == from)
            && self.to.as_ref().is_none_or(|t| t == to)
            && self.packet.as_deref().is_none_or(|p| Some(p) == packet)
            && self.tick.is_none_or(|t| t == tick)
    }
}

/// A scripted adversary step. Actions with `at` fire once the transcript has
/// at least that many events; the rest fire, in order, when the network goes
/// quiet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum AdversaryAction {
    /// Passive listening. Always on; accepted for explicitness.
    Observe,
    Drop {
        #[serde(flatten)]
        rule: DropRule,
    },
    Replay {
        event: usize,
        to: PrincipalId,
        #[serde(default)]
        at: Option<usize>,
    },
    Inject {
        /// Claimed sender; replies go here.
        from: PrincipalId,
        to: PrincipalId,
        #[serde(with = "hex")]
        bytes: Vec<u8>,
        #[serde(default)]
        at: Option<usize>,
    },
    /// Takes an employee's card and tries to commission a rogue device with a
    /// guessed password.
    StealCard {
        employee: String,
        password_guess: String,
        #[serde(default)]
        at: Option<usize>,
    },
    /// Reads everything outside the device's tamper-proof store.
    StealDevice {
        slave: String,
        #[serde(default)]
        at: Option<usize>,
    },
}

impl AdversaryAction {
    pub fn at(&self) -> Option<usize> {
        match self {
            AdversaryAction::Observe | AdversaryAction::Drop { .. } => None,
            AdversaryAction::Replay { at, .. }
            | AdversaryAction::Inject { at, .. }
            | AdversaryAction::StealCard { at, .. }
            | AdversaryAction::StealDevice { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryScript {
    #[serde(default)]
    pub actions: Vec<AdversaryAction>,
}

impl AdversaryScript {
    pub fn drop_rules(&self) -> impl Iterator<Item = &DropRule> {
        self.actions.iter().filter_map(|a| match a {
            AdversaryAction::Drop { rule } => Some(rule),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Bus {
    principals: BTreeSet<PrincipalId>,
    drop_rules: Vec<DropRule>,
    events: Vec<BusEvent>,
    queue: VecDeque<usize>,
}

impl Bus {
    pub fn new() -> Self {
        Bus::default()
    }

    pub fn register(&mut self, id: PrincipalId) {
        self.principals.insert(id);
    }

    pub fn is_registered(&self, id: &PrincipalId) -> bool {
        self.principals.contains(id)
    }

    pub fn add_drop_rule(&mut self, rule: DropRule) {
        self.drop_rules.push(rule);
    }

    pub fn events(&self) -> &[BusEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Undelivered events addressed to `id`.
    pub fn inbox_len(&self, id: &PrincipalId) -> usize {
        self.queue.iter().filter(|&&i| &self.events[i].to == id).count()
    }

    fn check(&self, id: &PrincipalId) -> Result<(), SimError> {
        if self.is_registered(id) {
            Ok(())
        } else {
            Err(SimError::UnknownPrincipal(id.clone()))
        }
    }

    fn append(
        &mut self,
        from: PrincipalId,
        to: PrincipalId,
        bytes: Vec<u8>,
        term: Option<Term>,
        disposition: Disposition,
    ) -> &BusEvent {
        let index = self.events.len();
        let packet = bytes.first().copied().and_then(tag_name).map(str::to_string);
        self.events.push(BusEvent { tick: index as u64, from, to, disposition, packet, bytes, term });
        if disposition.on_wire() {
            self.queue.push_back(index);
        }
        &self.events[index]
    }

    /// Sends an honest packet; drop rules decide whether it is delivered.
    pub fn send(
        &mut self,
        from: &PrincipalId,
        to: &PrincipalId,
        pkt: &Packet,
        term: Option<Term>,
    ) -> Result<&BusEvent, SimError> {
        self.check(from)?;
        self.check(to)?;
        let bytes = pkt.encode();
        let tick = self.events.len() as u64;
        let dropped = self.drop_rules.iter().any(|r| r.matches(tick, from, to, &bytes));
        let disposition = if dropped { Disposition::Dropped } else { Disposition::Delivered };
        Ok(self.append(from.clone(), to.clone(), bytes, term, disposition))
    }

    /// Re-delivers the bytes of event `index` to `to`.
    pub fn replay(&mut self, index: usize, to: &PrincipalId) -> Result<&BusEvent, SimError> {
        self.check(to)?;
        let Some(original) = self.events.get(index) else {
            return Err(SimError::IndexOutOfRange { index, len: self.events.len() });
        };
        let (from, bytes, term) = (original.from.clone(), original.bytes.clone(), original.term.clone());
        Ok(self.append(from, to.clone(), bytes, term, Disposition::Replayed))
    }

    /// Delivers adversary-chosen bytes under a claimed sender.
    pub fn inject(
        &mut self,
        from: &PrincipalId,
        to: &PrincipalId,
        bytes: Vec<u8>,
        term: Option<Term>,
    ) -> Result<&BusEvent, SimError> {
        self.check(from)?;
        self.check(to)?;
        Ok(self.append(from.clone(), to.clone(), bytes, term, Disposition::Injected))
    }

    /// The next event to hand to its receiver.
    pub fn next_delivery(&mut self) -> Option<&BusEvent> {
        self.queue.pop_front().map(|i| &self.events[i])
    }

    /// Every byte string the listening adversary saw reach a receiver.
    pub fn observed(&self) -> Vec<&[u8]> {
        self.events.iter().filter(|e| e.disposition.on_wire()).map(|e| e.bytes.as_slice()).collect()
    }

    /// Messages the adversary intercepted and withheld.
    pub fn intercepted(&self) -> Vec<&[u8]> {
        self.events.iter().filter(|e| !e.disposition.on_wire()).map(|e| e.bytes.as_slice()).collect()
    }

    /// Events that reached a receiver.
    pub fn wire_message_count(&self) -> usize {
        self.events.iter().filter(|e| e.disposition.on_wire()).count()
    }

    pub fn transcript_lines(&self) -> String {
        transcript_lines(&self.events)
    }
}

pub fn transcript_lines(events: &[BusEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_transcript(text: &str) -> Result<Vec<BusEvent>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Nonce;
    use crate::messages::layout::seal_challenge;

    fn ids() -> (PrincipalId, PrincipalId) {
        (PrincipalId::sm("sm"), PrincipalId::slave("s1"))
    }

    fn bus() -> Bus {
        let (a, b) = ids();
        let mut bus = Bus::new();
        bus.register(a);
        bus.register(b);
        bus
    }

    fn challenge() -> Packet {
        let n = Nonce::from_u128(9);
        seal_challenge(&n, &Nonce::from_u128(4), &n.offset(1))
    }

    #[test]
    fn send_delivers() {
        let (a, b) = ids();
        let mut bus = bus();
        let e = bus.send(&a, &b, &challenge(), None).unwrap();
        assert_eq!(e.disposition, Disposition::Delivered);
        assert_eq!(e.packet.as_deref(), Some("Challenge"));
        assert_eq!(bus.inbox_len(&b), 1);
        assert_eq!(bus.next_delivery().unwrap().tick, 0);
        assert_eq!(bus.inbox_len(&b), 0);
    }

    #[test]
    fn drop_rule_suppresses() {
        let (a, b) = ids();
        let mut bus = bus();
        bus.add_drop_rule(DropRule { packet: Some("Challenge".into()), ..Default::default() });
        let e = bus.send(&a, &b, &challenge(), None).unwrap();
        assert_eq!(e.disposition, Disposition::Dropped);
        assert_eq!(bus.inbox_len(&b), 0);
        assert_eq!(bus.wire_message_count(), 0);
        assert_eq!(bus.intercepted().len(), 1);
    }

    #[test]
    fn unknown_principal() {
        let (a, _) = ids();
        let mut bus = bus();
        let stranger = PrincipalId::master("m9");
        assert_eq!(
            bus.send(&a, &stranger, &challenge(), None).unwrap_err(),
            SimError::UnknownPrincipal(stranger.clone())
        );
        assert!(bus.is_empty());
    }

    #[test]
    fn replay_and_range() {
        let (a, b) = ids();
        let mut bus = bus();
        bus.send(&a, &b, &challenge(), None).unwrap();
        let r = bus.replay(0, &b).unwrap();
        assert_eq!((r.tick, r.disposition), (1, Disposition::Replayed));
        assert_eq!(bus.replay(5, &b).unwrap_err(), SimError::IndexOutOfRange { index: 5, len: 2 });
    }

    #[test]
    fn observed_matches_on_wire_events() {
        let (a, b) = ids();
        let mut bus = bus();
        bus.add_drop_rule(DropRule { tick: Some(1), ..Default::default() });
        bus.send(&a, &b, &challenge(), None).unwrap();
        bus.send(&b, &a, &challenge(), None).unwrap();
        bus.inject(&a, &b, vec![1, 2, 3], None).unwrap();
        bus.replay(1, &a).unwrap();
        let mut seen: Vec<Vec<u8>> = bus.observed().into_iter().map(<[u8]>::to_vec).collect();
        let mut wire: Vec<Vec<u8>> =
            bus.events().iter().filter(|e| e.disposition != Disposition::Dropped).map(|e| e.bytes.clone()).collect();
        seen.sort();
        wire.sort();
        assert_eq!(seen, wire);
        assert_eq!(bus.wire_message_count(), 3);
    }

    #[test]
    fn transcript_round_trip() {
        let (a, b) = ids();
        let mut bus = bus();
        bus.send(&a, &b, &challenge(), Some(Term::atom("x"))).unwrap();
        bus.inject(&b, &a, vec![0xff], None).unwrap();
        let text = bus.transcript_lines();
        assert_eq!(parse_transcript(&text).unwrap(), bus.events());
        assert!(text.lines().next().unwrap().contains("\"disposition\":\"DELIVERED\""));
    }

    #[test]
    fn script_parses_from_toml() {
        let script: AdversaryScript = toml::from_str(
            r#"
            [[actions]]
            kind = "REPLAY"
            event = 0
            to = "EMS:ems"

            [[actions]]
            kind = "DROP"
            packet = "PJoin"
            tick = 3

            [[actions]]
            kind = "INJECT"
            from = "SM:sm"
            to = "SLAVE:s1"
            bytes = "0601"
            at = 2
            "#,
        )
        .unwrap();
        assert_eq!(script.actions.len(), 3);
        assert_eq!(script.drop_rules().count(), 1);
        assert_eq!(script.actions[2].at(), Some(2));
    }
}
