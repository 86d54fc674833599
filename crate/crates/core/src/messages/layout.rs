//! Inner plaintext layouts of every packet, sealed and opened.
//!
//! Each encryption protects a tuple whose fields appear in the order the
//! protocol writes them. The `seal_*` functions are what the actors send; the
//! matching `open_*` functions check the tuple arity and field widths and map
//! failures onto [`ProtocolError::AuthFail`] (wrong key or tampering) or
//! [`ProtocolError::MalformedPacket`] (authentic but ill-formed plaintext).

use num_bigint::BigUint;
use rand::RngCore;

use super::codec::{decode_tuple, encode_tuple};
use super::{decode_envelope, encode_envelope, ConfigurationData, EncAparam, Packet, PrincipalId, Signed};
use crate::crypto::{
    pk_decrypt, pk_encrypt, sym_decrypt, sym_encrypt, DhParams, Envelope, Nonce, PrivateKey, PublicKey, SymKey,
};
use crate::error::{ProtocolError, Result};

fn nonce_field(bytes: &[u8]) -> Result<Nonce> {
    Nonce::from_slice(bytes).ok_or(ProtocolError::MalformedPacket("nonce field has wrong width"))
}

fn key_field(bytes: &[u8]) -> Result<SymKey> {
    SymKey::from_slice(bytes).ok_or(ProtocolError::MalformedPacket("key field has wrong width"))
}

fn open_sym(key: &SymKey, ct: &[u8], arity: usize) -> Result<Vec<Vec<u8>>> {
    let plain = sym_decrypt(key, ct)?;
    Ok(decode_tuple(&plain, arity)?)
}

fn open_pk(private: &PrivateKey, env: &Envelope, arity: usize) -> Result<Vec<Vec<u8>>> {
    let plain = pk_decrypt(private, env)?;
    Ok(decode_tuple(&plain, arity)?)
}

/// `P_authComm = E(K_pub(EMS), (CD, ENC_APARAM))`.
pub fn seal_auth_comm(
    ems: &PublicKey,
    cd: &ConfigurationData,
    enc_aparam: &EncAparam,
    rng: &mut impl RngCore,
) -> Envelope {
    pk_encrypt(ems, &encode_tuple(&[cd.encode(), enc_aparam.encode()]), rng)
}

pub fn open_auth_comm(ems: &PrivateKey, env: &Envelope) -> Result<(ConfigurationData, EncAparam)> {
    let f = open_pk(ems, env, 2)?;
    Ok((ConfigurationData::decode(&f[0])?, EncAparam::decode(&f[1])?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinContents {
    pub auth_comm: Envelope,
    pub slave_id: PrincipalId,
    pub nonce_s: Nonce,
}

/// `P_join = E(K_pub(EMS), (P_authComm, S_ID, NONCE_S))`.
pub fn seal_join(
    ems: &PublicKey,
    auth_comm: &Envelope,
    slave_id: &PrincipalId,
    nonce_s: &Nonce,
    rng: &mut impl RngCore,
) -> Packet {
    let plain = encode_tuple(&[encode_envelope(auth_comm), slave_id.encode(), nonce_s.0.to_vec()]);
    Packet::PJoin { env: pk_encrypt(ems, &plain, rng) }
}

pub fn open_join(ems: &PrivateKey, env: &Envelope) -> Result<JoinContents> {
    let f = open_pk(ems, env, 3)?;
    Ok(JoinContents {
        auth_comm: decode_envelope(&f[0])?,
        slave_id: PrincipalId::decode(&f[1])?,
        nonce_s: nonce_field(&f[2])?,
    })
}

/// `P_joinFwd = E(K_pub(EMS), (P_join, sign(M_ID)))`. The first field is the
/// forwarded packet's encoding, untouched.
pub fn seal_join_fwd(ems: &PublicKey, pjoin_bytes: &[u8], master_sig: &Signed, rng: &mut impl RngCore) -> Packet {
    let plain = encode_tuple(&[pjoin_bytes.to_vec(), master_sig.encode()]);
    Packet::PJoinFwd { env: pk_encrypt(ems, &plain, rng) }
}

pub fn open_join_fwd(ems: &PrivateKey, env: &Envelope) -> Result<(Vec<u8>, Signed)> {
    let mut f = open_pk(ems, env, 2)?;
    let sig = Signed::decode(&f[1])?;
    Ok((std::mem::take(&mut f[0]), sig))
}

/// `P_authDev = E(K_pub(SM), (CD, NONCE_S, sign(EMS_ID)))`.
pub fn seal_auth_dev(
    sm: &PublicKey,
    cd: &ConfigurationData,
    nonce_s: &Nonce,
    ems_sig: &Signed,
    rng: &mut impl RngCore,
) -> Packet {
    let plain = encode_tuple(&[cd.encode(), nonce_s.0.to_vec(), ems_sig.encode()]);
    Packet::PAuthDev { env: pk_encrypt(sm, &plain, rng) }
}

pub fn open_auth_dev(sm: &PrivateKey, env: &Envelope) -> Result<(ConfigurationData, Nonce, Signed)> {
    let f = open_pk(sm, env, 3)?;
    Ok((ConfigurationData::decode(&f[0])?, nonce_field(&f[1])?, Signed::decode(&f[2])?))
}

/// Contents of the SM-to-master delegation. The algorithm's tuple is
/// `(NONCE_S, sign(SM_ID))`; the slave's CD and an optional SM-supplied session
/// key follow it so the master can address the slave and pick the key mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelegationContents {
    pub nonce_s: Nonce,
    pub sm_sig: Signed,
    pub cd: ConfigurationData,
    pub preset_key: Option<SymKey>,
}

/// How the delegation is protected for a given master.
#[derive(Debug, Clone, Copy)]
pub enum DelegationSeal<'a> {
    Public(&'a PublicKey),
    Preshared(&'a SymKey),
}

#[derive(Debug, Clone, Copy)]
pub enum DelegationOpen<'a> {
    Private(&'a PrivateKey),
    Preshared(&'a SymKey),
}

fn delegation_plaintext(c: &DelegationContents) -> Vec<u8> {
    let key = c.preset_key.map(|k| k.0.to_vec()).unwrap_or_default();
    encode_tuple(&[c.nonce_s.0.to_vec(), c.sm_sig.encode(), c.cd.encode(), key])
}

/// In preshared mode the envelope's `wrapped_key` is empty and `body` is the
/// symmetric ciphertext under the SM-master key.
pub fn seal_delegation(seal: DelegationSeal<'_>, c: &DelegationContents, rng: &mut impl RngCore) -> Packet {
    let plain = delegation_plaintext(c);
    let env = match seal {
        DelegationSeal::Public(pk) => pk_encrypt(pk, &plain, rng),
        DelegationSeal::Preshared(k) => Envelope { wrapped_key: Vec::new(), body: sym_encrypt(k, &plain) },
    };
    Packet::Delegation { env }
}

pub fn open_delegation(open: DelegationOpen<'_>, env: &Envelope) -> Result<DelegationContents> {
    let f = match open {
        DelegationOpen::Private(sk) => open_pk(sk, env, 4)?,
        DelegationOpen::Preshared(k) => {
            if !env.wrapped_key.is_empty() {
                return Err(ProtocolError::AuthFail);
            }
            open_sym(k, &env.body, 4)?
        }
    };
    let preset_key = match f[3].len() {
        0 => None,
        _ => Some(key_field(&f[3])?),
    };
    Ok(DelegationContents {
        nonce_s: nonce_field(&f[0])?,
        sm_sig: Signed::decode(&f[1])?,
        cd: ConfigurationData::decode(&f[2])?,
        preset_key,
    })
}

/// `E(NONCE_S, (challenger_nonce, counter))`.
pub fn seal_challenge(nonce_s: &Nonce, challenger: &Nonce, counter: &Nonce) -> Packet {
    Packet::Challenge { ct: sym_encrypt(&nonce_s.as_key(), &encode_tuple(&[challenger.0, counter.0])) }
}

pub fn open_challenge(nonce_s: &Nonce, ct: &[u8]) -> Result<(Nonce, Nonce)> {
    let f = open_sym(&nonce_s.as_key(), ct, 2)?;
    Ok((nonce_field(&f[0])?, nonce_field(&f[1])?))
}

/// `E(challenger_nonce, (RND_S, counter))`.
pub fn seal_response(challenger: &Nonce, rnd_s: &Nonce, counter: &Nonce) -> Packet {
    Packet::ChallengeResponse { ct: sym_encrypt(&challenger.as_key(), &encode_tuple(&[rnd_s.0, counter.0])) }
}

pub fn open_response(challenger: &Nonce, ct: &[u8]) -> Result<(Nonce, Nonce)> {
    let f = open_sym(&challenger.as_key(), ct, 2)?;
    Ok((nonce_field(&f[0])?, nonce_field(&f[1])?))
}

/// `E(RND_S, (K, counter))`.
pub fn seal_key_delivery(rnd_s: &Nonce, key: &SymKey, counter: &Nonce) -> Packet {
    Packet::KeyDelivery { ct: sym_encrypt(&rnd_s.as_key(), &encode_tuple(&[key.0, counter.0])) }
}

pub fn open_key_delivery(rnd_s: &Nonce, ct: &[u8]) -> Result<(SymKey, Nonce)> {
    let f = open_sym(&rnd_s.as_key(), ct, 2)?;
    Ok((key_field(&f[0])?, nonce_field(&f[1])?))
}

/// `E(RND_S, (p, g, A, counter))`.
pub fn seal_dh1(rnd_s: &Nonce, params: &DhParams, share: &BigUint, counter: &Nonce) -> Packet {
    let plain = encode_tuple(&[
        params.p.to_bytes_be(),
        params.g.to_bytes_be(),
        params.encode_element(share),
        counter.0.to_vec(),
    ]);
    Packet::PDh1 { ct: sym_encrypt(&rnd_s.as_key(), &plain) }
}

pub fn open_dh1(rnd_s: &Nonce, ct: &[u8]) -> Result<(DhParams, BigUint, Nonce)> {
    let f = open_sym(&rnd_s.as_key(), ct, 4)?;
    let p = BigUint::from_bytes_be(&f[0]);
    let g = BigUint::from_bytes_be(&f[1]);
    let params = DhParams { p, g };
    if params.p < BigUint::from(5u32) || !params.in_range(&params.g) {
        return Err(ProtocolError::MalformedPacket("invalid group parameters"));
    }
    Ok((params, BigUint::from_bytes_be(&f[2]), nonce_field(&f[3])?))
}

/// `(E(K_S, counter), E(RND_S, B))`.
pub fn seal_dh2(k_s: &SymKey, counter: &Nonce, rnd_s: &Nonce, params: &DhParams, share: &BigUint) -> Packet {
    Packet::PDh2 {
        ct_nonce: sym_encrypt(k_s, &encode_tuple(&[counter.0])),
        ct_share: sym_encrypt(&rnd_s.as_key(), &encode_tuple(&[params.encode_element(share)])),
    }
}

pub fn open_dh2_share(rnd_s: &Nonce, ct_share: &[u8]) -> Result<BigUint> {
    let f = open_sym(&rnd_s.as_key(), ct_share, 1)?;
    Ok(BigUint::from_bytes_be(&f[0]))
}

pub fn open_dh2_counter(k_s: &SymKey, ct_nonce: &[u8]) -> Result<Nonce> {
    let f = open_sym(k_s, ct_nonce, 1)?;
    nonce_field(&f[0])
}

/// `E(K_S, counter)`.
pub fn seal_dh3(k_s: &SymKey, counter: &Nonce) -> Packet {
    Packet::PDh3 { ct: sym_encrypt(k_s, &encode_tuple(&[counter.0])) }
}

pub fn open_dh3(k_s: &SymKey, ct: &[u8]) -> Result<Nonce> {
    let f = open_sym(k_s, ct, 1)?;
    nonce_field(&f[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::messages::Capability;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn cd() -> ConfigurationData {
        ConfigurationData {
            slave_id: PrincipalId::slave("s1"),
            employee_id: PrincipalId::employee("e1"),
            handheld_id: None,
            capability: Capability::SymOnly,
            settings: vec![],
        }
    }

    #[test]
    fn delegation_modes() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let master = KeyPair::generate(&mut rng);
        let psk = SymKey::generate(&mut rng);
        let contents = DelegationContents {
            nonce_s: Nonce::from_u128(9),
            sm_sig: Signed { body: b"sm".to_vec(), signature: vec![1; 64] },
            cd: cd(),
            preset_key: Some(SymKey([3; 16])),
        };
        let Packet::Delegation { env } = seal_delegation(DelegationSeal::Public(&master.public), &contents, &mut rng)
        else {
            unreachable!()
        };
        assert_eq!(open_delegation(DelegationOpen::Private(&master.private), &env).unwrap(), contents);
        assert!(open_delegation(DelegationOpen::Preshared(&psk), &env).is_err());

        let plain = DelegationContents { preset_key: None, ..contents };
        let Packet::Delegation { env } = seal_delegation(DelegationSeal::Preshared(&psk), &plain, &mut rng) else {
            unreachable!()
        };
        assert!(env.wrapped_key.is_empty());
        assert_eq!(open_delegation(DelegationOpen::Preshared(&psk), &env).unwrap(), plain);
        assert_eq!(open_delegation(DelegationOpen::Private(&master.private), &env), Err(ProtocolError::AuthFail));
    }

    #[test]
    fn challenge_layout() {
        let n = Nonce::from_u128(41);
        let Packet::Challenge { ct } = seal_challenge(&n, &Nonce::from_u128(7), &n.offset(1)) else { unreachable!() };
        assert_eq!(open_challenge(&n, &ct).unwrap(), (Nonce::from_u128(7), Nonce::from_u128(42)));
        assert_eq!(open_challenge(&Nonce::from_u128(40), &ct), Err(ProtocolError::AuthFail));
    }

    #[test]
    fn authentic_but_ill_formed_plaintext_is_malformed() {
        let n = Nonce::from_u128(5);
        let ct = sym_encrypt(&n.as_key(), &encode_tuple(&[b"short".as_slice(), b"x"]));
        assert!(matches!(open_challenge(&n, &ct), Err(ProtocolError::MalformedPacket(_))));
    }

    #[test]
    fn dh1_rejects_bad_group() {
        let r = Nonce::from_u128(5);
        let bad = DhParams { p: BigUint::from(23u32), g: BigUint::from(1u32) };
        let Packet::PDh1 { ct } = seal_dh1(&r, &bad, &BigUint::from(8u32), &r) else { unreachable!() };
        assert!(matches!(open_dh1(&r, &ct), Err(ProtocolError::MalformedPacket(_))));
    }
}
