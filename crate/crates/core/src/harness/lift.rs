//! Lifting wire bytes into symbolic terms.
//!
//! The simulator knows every key, so it can open any protocol message and
//! name each field by what it is. A field is named after the secret it equals
//! (`nonce_s:s1`), or as a counter over a known nonce (`inc(nonce_s:s1, 2)`);
//! anything that does not open or is not recognised becomes an `opaque:`
//! atom named by a digest of its bytes. Lifting is total, and lifting the same
//! bytes with the same keyring is deterministic, which is what the
//! conformance check relies on.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use sha2::{Digest, Sha256};

use crate::closure::Term;
use crate::crypto::{pk_decrypt, sym_decrypt, verify, DhParams, Envelope, KeyPair, SymKey, KEY_LEN};
use crate::messages::codec::decode_tuple_any;
use crate::messages::{decode_envelope, ConfigurationData, EncAparam, Packet, PrincipalId, Signed};

/// Highest counter offset recognised as `inc(nonce, k)`.
const MAX_COUNTER_OFFSET: u128 = 8;

pub fn opaque(bytes: &[u8]) -> Term {
    let digest = Sha256::digest(bytes);
    Term::atom(format!("opaque:{}", hex::encode(&digest[..6])))
}

pub fn pk_label(id: &PrincipalId) -> String {
    format!("pk:{id}")
}

pub fn sk_label(id: &PrincipalId) -> String {
    format!("sk:{id}")
}

pub fn id_atom(id: &PrincipalId) -> Term {
    Term::atom(format!("id:{id}"))
}

/// The per-slave or per-employee secret families.
pub fn secret_atom(kind: &str, owner: &str) -> Term {
    Term::atom(format!("{kind}:{owner}"))
}

pub const APARAM: &str = "aparam";
pub const NONCE_S: &str = "nonce_s";
pub const RND_S: &str = "rnd_s";
pub const CHALLENGER: &str = "chal";
pub const SESSION_KEY: &str = "key";
pub const PSK: &str = "psk";
pub const DH_A: &str = "dh_a";
pub const DH_B: &str = "dh_b";

/// God-view key material and the names of every secret value seen so far.
#[derive(Debug, Clone, Default)]
pub struct Lifter {
    keypairs: Vec<(PrincipalId, KeyPair)>,
    values: BTreeMap<[u8; KEY_LEN], String>,
    nonces: BTreeMap<String, u128>,
    shares: BTreeMap<BigUint, String>,
    groups: Vec<DhParams>,
}

impl Lifter {
    pub fn new() -> Self {
        Lifter { groups: vec![DhParams::toy(), DhParams::standard()], ..Default::default() }
    }

    pub fn add_keypair(&mut self, id: PrincipalId, kp: KeyPair) {
        self.keypairs.push((id, kp));
    }

    /// Names a 16-byte secret. The first name given to a value sticks.
    pub fn name_value(&mut self, bytes: [u8; KEY_LEN], kind: &str, owner: &str) {
        let label = format!("{kind}:{owner}");
        if kind == NONCE_S {
            self.nonces.entry(owner.to_string()).or_insert(u128::from_be_bytes(bytes));
        }
        self.values.entry(bytes).or_insert(label);
    }

    pub fn label_of(&self, bytes: &[u8; KEY_LEN]) -> Option<&str> {
        self.values.get(bytes).map(String::as_str)
    }

    pub(crate) fn value(&self, bytes: &[u8]) -> Term {
        let Ok(arr) = <[u8; KEY_LEN]>::try_from(bytes) else {
            return opaque(bytes);
        };
        if let Some(label) = self.values.get(&arr) {
            return Term::atom(label.clone());
        }
        let v = u128::from_be_bytes(arr);
        for (owner, n) in &self.nonces {
            let k = v.wrapping_sub(*n);
            if (1..=MAX_COUNTER_OFFSET).contains(&k) {
                return Term::inc(secret_atom(NONCE_S, owner), k as u64);
            }
        }
        opaque(bytes)
    }

    /// The owner part of a per-slave label (`rnd_s:s1` gives `s1`).
    fn owner(label: &str) -> Option<&str> {
        label.split_once(':').map(|(_, o)| o)
    }

    fn share(&mut self, bytes: &[u8], kind: &str, owner: Option<&str>) -> Term {
        let v = BigUint::from_bytes_be(bytes);
        if let Some(label) = self.shares.get(&v) {
            return Term::atom(label.clone());
        }
        match owner {
            Some(o) => {
                let label = format!("{kind}:{o}");
                self.shares.insert(v, label.clone());
                Term::atom(label)
            }
            None => opaque(bytes),
        }
    }

    fn group_field(&self, bytes: &[u8], p: bool) -> Term {
        let v = BigUint::from_bytes_be(bytes);
        let known = self.groups.iter().any(|g| if p { g.p == v } else { g.g == v });
        match (known, p) {
            (true, true) => Term::atom("dh_p"),
            (true, false) => Term::atom("dh_g"),
            _ => opaque(bytes),
        }
    }

    fn open_pk(&self, env: &Envelope) -> Option<(&PrincipalId, Vec<u8>)> {
        self.keypairs.iter().find_map(|(id, kp)| pk_decrypt(&kp.private, env).ok().map(|p| (id, p)))
    }

    /// Tries every named value as a symmetric key.
    fn open_sym(&self, ct: &[u8]) -> Option<(String, Vec<u8>)> {
        self.values.iter().find_map(|(k, label)| sym_decrypt(&SymKey(*k), ct).ok().map(|p| (label.clone(), p)))
    }

    fn signature(&self, signed: &Signed, body: Term) -> Term {
        self.keypairs
            .iter()
            .find(|(_, kp)| verify(&kp.public, &signed.body, &signed.signature))
            .map(|(id, _)| Term::sig(sk_label(id), body))
            .unwrap_or_else(|| Term::pair(Term::atom("unsigned"), opaque(&signed.signature)))
    }

    fn signed_identity(&self, bytes: &[u8]) -> Term {
        let Ok(signed) = Signed::decode(bytes) else {
            return opaque(bytes);
        };
        let body = match PrincipalId::decode(&signed.body) {
            Ok(id) => id_atom(&id),
            Err(_) => opaque(&signed.body),
        };
        self.signature(&signed, body)
    }

    fn cd(&self, bytes: &[u8]) -> Term {
        match ConfigurationData::decode(bytes) {
            Ok(cd) => Term::atom(format!("cd:{}", cd.slave_id.name)),
            Err(_) => opaque(bytes),
        }
    }

    /// `sig(sk:EMS, aenc(pk:EMS, aparam))`.
    pub(crate) fn enc_aparam(&self, bytes: &[u8]) -> Term {
        let Ok(enc) = EncAparam::decode(bytes) else {
            return opaque(bytes);
        };
        let inner = self.envelope(&enc.env, |l, plain| l.value(plain));
        let signed = Signed { body: enc.signed_body(), signature: enc.ems_signature.clone() };
        self.signature(&signed, inner)
    }

    fn envelope(&self, env: &Envelope, body: impl FnOnce(&Self, &[u8]) -> Term) -> Term {
        match self.open_pk(env) {
            Some((id, plain)) => Term::pk_enc(pk_label(id), body(self, &plain)),
            None => opaque(&[env.wrapped_key.as_slice(), &env.body].concat()),
        }
    }

    fn fields(plain: &[u8], arity: usize) -> Option<Vec<Vec<u8>>> {
        decode_tuple_any(plain).ok().filter(|f| f.len() == arity)
    }

    fn auth_comm(&self, env: &Envelope) -> Term {
        self.envelope(env, |l, plain| match Self::fields(plain, 2) {
            Some(f) => Term::tuple([l.cd(&f[0]), l.enc_aparam(&f[1])]),
            None => opaque(plain),
        })
    }

    fn join(&self, env: &Envelope) -> Term {
        self.envelope(env, |l, plain| match Self::fields(plain, 3) {
            Some(f) => {
                let ac = decode_envelope(&f[0]).map(|e| l.auth_comm(&e)).unwrap_or_else(|_| opaque(&f[0]));
                let id = PrincipalId::decode(&f[1]).map(|id| id_atom(&id)).unwrap_or_else(|_| opaque(&f[1]));
                Term::tuple([ac, id, l.value(&f[2])])
            }
            None => opaque(plain),
        })
    }

    fn lift_sym(&mut self, ct: &[u8], body: impl FnOnce(&mut Self, &str, &[u8]) -> Term) -> Term {
        match self.open_sym(ct) {
            Some((label, plain)) => {
                let inner = body(self, &label, &plain);
                Term::sym_enc(Term::atom(label), inner)
            }
            None => opaque(ct),
        }
    }

    fn pair_of_values(&mut self, plain: &[u8]) -> Term {
        match Self::fields(plain, 2) {
            Some(f) => Term::tuple([self.value(&f[0]), self.value(&f[1])]),
            None => opaque(plain),
        }
    }

    fn single_value(&mut self, plain: &[u8]) -> Term {
        match Self::fields(plain, 1) {
            Some(f) => self.value(&f[0]),
            None => opaque(plain),
        }
    }

    pub fn lift(&mut self, pkt: &Packet) -> Term {
        match pkt {
            Packet::PAuthComm { env } => self.auth_comm(env),
            Packet::PJoin { env } => self.join(env),
            Packet::PJoinFwd { env } => self.envelope(env, |l, plain| match Self::fields(plain, 2) {
                Some(f) => {
                    let inner = match Packet::decode(&f[0]) {
                        Ok(Packet::PJoin { env }) => l.join(&env),
                        _ => opaque(&f[0]),
                    };
                    Term::tuple([inner, l.signed_identity(&f[1])])
                }
                None => opaque(plain),
            }),
            Packet::PAuthDev { env } => self.envelope(env, |l, plain| match Self::fields(plain, 3) {
                Some(f) => Term::tuple([l.cd(&f[0]), l.value(&f[1]), l.signed_identity(&f[2])]),
                None => opaque(plain),
            }),
            Packet::Delegation { env } => {
                let contents = |l: &Self, plain: &[u8]| match Self::fields(plain, 4) {
                    Some(f) => {
                        let mut items = vec![l.value(&f[0]), l.signed_identity(&f[1]), l.cd(&f[2])];
                        if !f[3].is_empty() {
                            items.push(l.value(&f[3]));
                        }
                        Term::tuple(items)
                    }
                    None => opaque(plain),
                };
                if env.wrapped_key.is_empty() {
                    match self.open_sym(&env.body) {
                        Some((label, plain)) => Term::sym_enc(Term::atom(label), contents(self, &plain)),
                        None => opaque(&env.body),
                    }
                } else {
                    self.envelope(env, contents)
                }
            }
            Packet::Challenge { ct } | Packet::ChallengeResponse { ct } | Packet::KeyDelivery { ct } => {
                self.lift_sym(ct, |l, _, plain| l.pair_of_values(plain))
            }
            Packet::PDh1 { ct } => self.lift_sym(ct, |l, key, plain| match Self::fields(plain, 4) {
                Some(f) => {
                    let owner = Self::owner(key).map(str::to_string);
                    Term::tuple([
                        l.group_field(&f[0], true),
                        l.group_field(&f[1], false),
                        l.share(&f[2], DH_A, owner.as_deref()),
                        l.value(&f[3]),
                    ])
                }
                None => opaque(plain),
            }),
            Packet::PDh2 { ct_nonce, ct_share } => {
                let counter = self.lift_sym(ct_nonce, |l, _, plain| l.single_value(plain));
                let share = self.lift_sym(ct_share, |l, key, plain| match Self::fields(plain, 1) {
                    Some(f) => {
                        let owner = Self::owner(key).map(str::to_string);
                        l.share(&f[0], DH_B, owner.as_deref())
                    }
                    None => opaque(plain),
                });
                Term::pair(counter, share)
            }
            Packet::PDh3 { ct } => self.lift_sym(ct, |l, _, plain| l.single_value(plain)),
        }
    }

    /// Lifts raw bytes; undecodable ones become a single opaque atom.
    pub fn lift_bytes(&mut self, bytes: &[u8]) -> Term {
        match Packet::decode(bytes) {
            Ok(pkt) => self.lift(&pkt),
            Err(_) => opaque(bytes),
        }
    }

    /// Whether `term` is exactly what `bytes` lift to under this keyring.
    pub fn conforms(&mut self, term: &Term, bytes: &[u8]) -> bool {
        self.lift_bytes(bytes) == *term
    }
}
