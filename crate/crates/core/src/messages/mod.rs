//! Identities, configuration data and the closed set of on-wire packets.
//!
//! Every packet encodes as a tag byte (`0x01..=0x0B`) followed by its fields,
//! each prefixed with a big-endian `u32` length. Decoding is strict: unknown
//! tags, truncation and trailing bytes are all rejected.

pub mod codec;
pub mod layout;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{Envelope, KEY_LEN};
pub use codec::CodecError;
use codec::{Reader, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Ems,
    Sm,
    Handheld,
    IdCard,
    Slave,
    Master,
    Employee,
}

impl Role {
    const ALL: [Role; 7] =
        [Role::Ems, Role::Sm, Role::Handheld, Role::IdCard, Role::Slave, Role::Master, Role::Employee];

    fn code(self) -> u8 {
        match self {
            Role::Ems => 1,
            Role::Sm => 2,
            Role::Handheld => 3,
            Role::IdCard => 4,
            Role::Slave => 5,
            Role::Master => 6,
            Role::Employee => 7,
        }
    }

    fn from_code(code: u8) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Ems => "EMS",
            Role::Sm => "SM",
            Role::Handheld => "HH",
            Role::IdCard => "ID_CARD",
            Role::Slave => "SLAVE",
            Role::Master => "MASTER",
            Role::Employee => "EMPLOYEE",
        }
    }
}

/// Role-tagged identity of an actor. Displays as `ROLE:name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrincipalId {
    pub role: Role,
    pub name: String,
}

impl PrincipalId {
    pub fn new(role: Role, name: impl Into<String>) -> Self {
        PrincipalId { role, name: name.into() }
    }

    pub fn ems(name: &str) -> Self {
        Self::new(Role::Ems, name)
    }
    pub fn sm(name: &str) -> Self {
        Self::new(Role::Sm, name)
    }
    pub fn handheld(name: &str) -> Self {
        Self::new(Role::Handheld, name)
    }
    pub fn slave(name: &str) -> Self {
        Self::new(Role::Slave, name)
    }
    pub fn master(name: &str) -> Self {
        Self::new(Role::Master, name)
    }
    pub fn employee(name: &str) -> Self {
        Self::new(Role::Employee, name)
    }

    pub fn encode(&self) -> Vec<u8> {
        Writer::new().u8(self.role.code()).bytes(self.name.as_bytes()).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let id = Self::read(&mut r)?;
        r.finish()?;
        Ok(id)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let role = Role::from_code(r.u8()?).ok_or(CodecError("unknown role"))?;
        let name = std::str::from_utf8(r.bytes()?).map_err(|_| CodecError("identity is not utf-8"))?;
        Ok(PrincipalId::new(role, name))
    }
}

impl fmt::Display for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.role.as_str(), self.name)
    }
}

impl FromStr for PrincipalId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (role, name) = s.split_once(':').ok_or_else(|| format!("expected ROLE:name, got {s:?}"))?;
        let role =
            Role::ALL.into_iter().find(|r| r.as_str() == role).ok_or_else(|| format!("unknown role {role:?}"))?;
        Ok(PrincipalId::new(role, name))
    }
}

impl Serialize for PrincipalId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PrincipalId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Capability {
    SymOnly,
    AsymCapable,
}

/// Setting key naming the master a hierarchical slave joins through.
pub const SETTING_MASTER: &[u8] = b"master";

/// Configuration data commissioned into a slave.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfigurationData {
    pub slave_id: PrincipalId,
    pub employee_id: PrincipalId,
    pub handheld_id: Option<PrincipalId>,
    pub capability: Capability,
    pub settings: Vec<(Vec<u8>, Vec<u8>)>,
}

impl ConfigurationData {
    pub fn setting(&self, key: &[u8]) -> Option<&[u8]> {
        self.settings.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_slice())
    }

    /// The master named in the settings, if the slave is commissioned for the
    /// hierarchical topology.
    pub fn master(&self) -> Option<PrincipalId> {
        let name = std::str::from_utf8(self.setting(SETTING_MASTER)?).ok()?;
        Some(PrincipalId::master(name))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.slave_id.encode()).bytes(&self.employee_id.encode());
        match &self.handheld_id {
            Some(hh) => w.u8(1).bytes(&hh.encode()),
            None => w.u8(0),
        };
        w.u8(match self.capability {
            Capability::SymOnly => 1,
            Capability::AsymCapable => 2,
        });
        let count = u32::try_from(self.settings.len()).expect("settings count");
        w.bytes(&count.to_be_bytes());
        for (k, v) in &self.settings {
            w.bytes(k).bytes(v);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let slave_id = PrincipalId::decode(r.bytes()?)?;
        let employee_id = PrincipalId::decode(r.bytes()?)?;
        if employee_id.role != Role::Employee {
            return Err(CodecError("configuration employee is not an EMPLOYEE"));
        }
        let handheld_id = match r.u8()? {
            0 => None,
            1 => Some(PrincipalId::decode(r.bytes()?)?),
            _ => return Err(CodecError("bad optional flag")),
        };
        let capability = match r.u8()? {
            1 => Capability::SymOnly,
            2 => Capability::AsymCapable,
            _ => return Err(CodecError("unknown capability")),
        };
        let count: [u8; 4] = r.bytes()?.try_into().map_err(|_| CodecError("bad settings count"))?;
        let count = u32::from_be_bytes(count);
        let mut settings = Vec::new();
        for _ in 0..count {
            settings.push((r.bytes()?.to_vec(), r.bytes()?.to_vec()));
        }
        r.finish()?;
        Ok(ConfigurationData { slave_id, employee_id, handheld_id, capability, settings })
    }
}

/// Per-employee authentication parameter issued by the EMS.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Aparam(pub [u8; KEY_LEN]);

impl fmt::Debug for Aparam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Aparam(..)")
    }
}

/// A body together with a signature over it. The body travels with the
/// signature, so `sign(X)` reveals `X`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signed {
    pub body: Vec<u8>,
    pub signature: Vec<u8>,
}

impl Signed {
    pub fn encode(&self) -> Vec<u8> {
        codec::encode_tuple(&[&self.body, &self.signature])
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut f = codec::decode_tuple(bytes, 2)?.into_iter();
        Ok(Signed { body: f.next().expect("arity 2"), signature: f.next().expect("arity 2") })
    }
}

pub fn encode_envelope(env: &Envelope) -> Vec<u8> {
    Writer::new().bytes(&env.wrapped_key).bytes(&env.body).finish()
}

pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, CodecError> {
    let mut r = Reader::new(bytes);
    let env = read_envelope(&mut r)?;
    r.finish()?;
    Ok(env)
}

fn read_envelope(r: &mut Reader<'_>) -> Result<Envelope, CodecError> {
    Ok(Envelope { wrapped_key: r.bytes()?.to_vec(), body: r.bytes()?.to_vec() })
}

/// APARAM encrypted to the EMS, signed by the EMS over the envelope encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncAparam {
    pub env: Envelope,
    pub ems_signature: Vec<u8>,
}

impl EncAparam {
    pub fn signed_body(&self) -> Vec<u8> {
        encode_envelope(&self.env)
    }

    pub fn encode(&self) -> Vec<u8> {
        Signed { body: self.signed_body(), signature: self.ems_signature.clone() }.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let signed = Signed::decode(bytes)?;
        Ok(EncAparam { env: decode_envelope(&signed.body)?, ems_signature: signed.signature })
    }
}

/// Every message that crosses the simulated network.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Packet {
    PAuthComm { env: Envelope },
    PJoin { env: Envelope },
    PJoinFwd { env: Envelope },
    PAuthDev { env: Envelope },
    Delegation { env: Envelope },
    Challenge { ct: Vec<u8> },
    ChallengeResponse { ct: Vec<u8> },
    KeyDelivery { ct: Vec<u8> },
    PDh1 { ct: Vec<u8> },
    PDh2 { ct_nonce: Vec<u8>, ct_share: Vec<u8> },
    PDh3 { ct: Vec<u8> },
}

impl Packet {
    pub fn tag(&self) -> u8 {
        match self {
            Packet::PAuthComm { .. } => 0x01,
            Packet::PJoin { .. } => 0x02,
            Packet::PJoinFwd { .. } => 0x03,
            Packet::PAuthDev { .. } => 0x04,
            Packet::Delegation { .. } => 0x05,
            Packet::Challenge { .. } => 0x06,
            Packet::ChallengeResponse { .. } => 0x07,
            Packet::KeyDelivery { .. } => 0x08,
            Packet::PDh1 { .. } => 0x09,
            Packet::PDh2 { .. } => 0x0A,
            Packet::PDh3 { .. } => 0x0B,
        }
    }

    pub fn name(&self) -> &'static str {
        tag_name(self.tag()).expect("every variant has a name")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.tag());
        match self {
            Packet::PAuthComm { env }
            | Packet::PJoin { env }
            | Packet::PJoinFwd { env }
            | Packet::PAuthDev { env }
            | Packet::Delegation { env } => {
                w.bytes(&env.wrapped_key).bytes(&env.body);
            }
            Packet::Challenge { ct }
            | Packet::ChallengeResponse { ct }
            | Packet::KeyDelivery { ct }
            | Packet::PDh1 { ct }
            | Packet::PDh3 { ct } => {
                w.bytes(ct);
            }
            Packet::PDh2 { ct_nonce, ct_share } => {
                w.bytes(ct_nonce).bytes(ct_share);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let tag = r.u8()?;
        let packet = match tag {
            0x01 => Packet::PAuthComm { env: read_envelope(&mut r)? },
            0x02 => Packet::PJoin { env: read_envelope(&mut r)? },
            0x03 => Packet::PJoinFwd { env: read_envelope(&mut r)? },
            0x04 => Packet::PAuthDev { env: read_envelope(&mut r)? },
            0x05 => Packet::Delegation { env: read_envelope(&mut r)? },
            0x06 => Packet::Challenge { ct: r.bytes()?.to_vec() },
            0x07 => Packet::ChallengeResponse { ct: r.bytes()?.to_vec() },
            0x08 => Packet::KeyDelivery { ct: r.bytes()?.to_vec() },
            0x09 => Packet::PDh1 { ct: r.bytes()?.to_vec() },
            0x0A => Packet::PDh2 { ct_nonce: r.bytes()?.to_vec(), ct_share: r.bytes()?.to_vec() },
            0x0B => Packet::PDh3 { ct: r.bytes()?.to_vec() },
            _ => return Err(CodecError("unknown tag")),
        };
        r.finish()?;
        Ok(packet)
    }

    /// The envelope carried by the five public-key variants.
    pub fn envelope(&self) -> Option<&Envelope> {
        match self {
            Packet::PAuthComm { env }
            | Packet::PJoin { env }
            | Packet::PJoinFwd { env }
            | Packet::PAuthDev { env }
            | Packet::Delegation { env } => Some(env),
            _ => None,
        }
    }
}

pub fn tag_name(tag: u8) -> Option<&'static str> {
    Some(match tag {
        0x01 => "PAuthComm",
        0x02 => "PJoin",
        0x03 => "PJoinFwd",
        0x04 => "PAuthDev",
        0x05 => "Delegation",
        0x06 => "Challenge",
        0x07 => "ChallengeResponse",
        0x08 => "KeyDelivery",
        0x09 => "PDh1",
        0x0A => "PDh2",
        0x0B => "PDh3",
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env(a: &[u8], b: &[u8]) -> Envelope {
        Envelope { wrapped_key: a.to_vec(), body: b.to_vec() }
    }

    fn one_of_each() -> Vec<Packet> {
        let e = env(b"wk", b"body");
        vec![
            Packet::PAuthComm { env: e.clone() },
            Packet::PJoin { env: e.clone() },
            Packet::PJoinFwd { env: e.clone() },
            Packet::PAuthDev { env: e.clone() },
            Packet::Delegation { env: e },
            Packet::Challenge { ct: b"c".to_vec() },
            Packet::ChallengeResponse { ct: b"r".to_vec() },
            Packet::KeyDelivery { ct: b"k".to_vec() },
            Packet::PDh1 { ct: b"1".to_vec() },
            Packet::PDh2 { ct_nonce: b"n".to_vec(), ct_share: b"s".to_vec() },
            Packet::PDh3 { ct: b"3".to_vec() },
        ]
    }

    #[test]
    fn tags_are_distinct_and_dense() {
        let tags: Vec<u8> = one_of_each().iter().map(|p| p.encode()[0]).collect();
        assert_eq!(tags, (0x01..=0x0B).collect::<Vec<u8>>());
    }

    #[test]
    fn decode_is_strict() {
        assert_eq!(Packet::decode(&[0xFF, 0, 0, 0, 0]), Err(CodecError("unknown tag")));
        assert!(Packet::decode(&[]).is_err());
        for p in one_of_each() {
            let mut bytes = p.encode();
            bytes.push(0);
            assert_eq!(Packet::decode(&bytes), Err(CodecError("trailing bytes")), "{}", p.name());
            bytes.truncate(bytes.len() - 2);
            assert!(Packet::decode(&bytes).is_err(), "{}", p.name());
        }
    }

    #[test]
    fn equal_packets_encode_identically() {
        let a = Packet::Challenge { ct: vec![1, 2, 3] };
        let b = Packet::Challenge { ct: vec![1, 2, 3] };
        assert_eq!(a.encode(), b.encode());
    }

    #[test]
    fn principal_text_form() {
        let id = PrincipalId::slave("boiler-7");
        assert_eq!(id.to_string(), "SLAVE:boiler-7");
        assert_eq!("SLAVE:boiler-7".parse::<PrincipalId>().unwrap(), id);
        assert!("NOPE:x".parse::<PrincipalId>().is_err());
        assert_eq!(PrincipalId::decode(&id.encode()).unwrap(), id);
    }

    #[test]
    fn configuration_data_round_trip() {
        let cd = ConfigurationData {
            slave_id: PrincipalId::slave("s1"),
            employee_id: PrincipalId::employee("alice"),
            handheld_id: Some(PrincipalId::handheld("hh1")),
            capability: Capability::AsymCapable,
            settings: vec![(SETTING_MASTER.to_vec(), b"m1".to_vec()), (b"rate".to_vec(), b"10".to_vec())],
        };
        let back = ConfigurationData::decode(&cd.encode()).unwrap();
        assert_eq!(back, cd);
        assert_eq!(back.master(), Some(PrincipalId::master("m1")));

        let mut bad = cd.clone();
        bad.employee_id = PrincipalId::slave("alice");
        assert!(ConfigurationData::decode(&bad.encode()).is_err());
    }

    fn bytes() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(any::<u8>(), 0..96)
    }

    fn packet() -> impl Strategy<Value = Packet> {
        fn env() -> impl Strategy<Value = Envelope> {
            (bytes(), bytes()).prop_map(|(a, b)| Envelope { wrapped_key: a, body: b })
        }
        prop_oneof![
            env().prop_map(|env| Packet::PAuthComm { env }),
            env().prop_map(|env| Packet::PJoin { env }),
            env().prop_map(|env| Packet::PJoinFwd { env }),
            env().prop_map(|env| Packet::PAuthDev { env }),
            env().prop_map(|env| Packet::Delegation { env }),
            bytes().prop_map(|ct| Packet::Challenge { ct }),
            bytes().prop_map(|ct| Packet::ChallengeResponse { ct }),
            bytes().prop_map(|ct| Packet::KeyDelivery { ct }),
            bytes().prop_map(|ct| Packet::PDh1 { ct }),
            (bytes(), bytes()).prop_map(|(ct_nonce, ct_share)| Packet::PDh2 { ct_nonce, ct_share }),
            bytes().prop_map(|ct| Packet::PDh3 { ct }),
        ]
    }

    proptest! {
        #[test]
        fn codec_round_trip(p in packet()) {
            let bytes = p.encode();
            let back = Packet::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
            prop_assert_eq!(back, p);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            if let Ok(p) = Packet::decode(&bytes) {
                prop_assert_eq!(p.encode(), bytes);
            }
        }
    }
}
