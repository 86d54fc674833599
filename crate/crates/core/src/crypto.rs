//! Concrete primitives behind the protocol's abstract `E`, `D`, `sign`, `inc`
//! and `KeyGen` operations.
//!
//! Nothing in here knows about protocol phases. Every function is pure given
//! its explicit inputs; the only source of randomness is the `RngCore` the
//! caller passes in, which lets a scenario reproduce a run byte for byte.
//!
//! * Symmetric encryption is AES-128-GCM with a synthetic IV, so it is both
//!   authenticated and deterministic for a fixed `(key, plaintext)` pair.
//! * Public-key encryption is a hybrid envelope: an ephemeral [`SymKey`] is
//!   wrapped for the recipient's X25519 key, the payload is sealed under the
//!   ephemeral key.
//! * Signatures are Ed25519.
//! * Diffie-Hellman runs over a classic multiplicative group (`p`, `g`), either
//!   the oracle-checkable toy group or the 2048-bit MODP group.

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce as GcmNonce};
use ed25519_dalek::{Signer, Verifier};
use hmac::{Hmac, Mac};
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Length of every symmetric key and nonce, in bytes.
pub const KEY_LEN: usize = 16;

const IV_LEN: usize = 12;
const TAG_LEN: usize = 16;
const X25519_LEN: usize = 32;

/// PBKDF2 iteration count for ID-card keys.
pub const CARD_KDF_ROUNDS: u32 = 4096;

const DH_KDF_LABEL: &[u8] = b"trustdeploy/dh-shared/v1";
const WRAP_KDF_LABEL: &[u8] = b"trustdeploy/envelope-wrap/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication failed")]
    AuthFail,
    #[error("degenerate Diffie-Hellman share")]
    DegenerateShare,
    #[error("empty password")]
    EmptyPassword,
}

/// A 128-bit symmetric key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymKey(pub [u8; KEY_LEN]);

impl SymKey {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        SymKey(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(SymKey)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymKey({})", hex::encode(self.0))
    }
}

/// A 128-bit random value, also usable as a [`SymKey`].
///
/// The increment function treats the bytes as a big-endian integer and wraps
/// modulo 2^128.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Nonce(pub [u8; KEY_LEN]);

impl Nonce {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Nonce(bytes)
    }

    pub fn from_u128(value: u128) -> Self {
        Nonce(value.to_be_bytes())
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Nonce)
    }

    pub fn to_u128(self) -> u128 {
        u128::from_be_bytes(self.0)
    }

    /// `self + k mod 2^128`.
    pub fn offset(self, k: u128) -> Self {
        Nonce::from_u128(self.to_u128().wrapping_add(k))
    }

    pub fn as_key(&self) -> SymKey {
        SymKey(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", hex::encode(self.0))
    }
}

/// Increment function for nonces.
pub fn inc(n: Nonce) -> Nonce {
    n.offset(1)
}

fn synthetic_iv(key: &SymKey, plaintext: &[u8]) -> [u8; IV_LEN] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&key.0).expect("hmac takes any key length");
    mac.update(b"siv");
    mac.update(plaintext);
    let tag = mac.finalize().into_bytes();
    let mut iv = [0u8; IV_LEN];
    iv.copy_from_slice(&tag[..IV_LEN]);
    iv
}

/// Authenticated symmetric encryption. Output layout: `iv || ciphertext || tag`.
pub fn sym_encrypt(key: &SymKey, plaintext: &[u8]) -> Vec<u8> {
    let cipher = Aes128Gcm::new_from_slice(&key.0).expect("16-byte key");
    let iv = synthetic_iv(key, plaintext);
    let sealed = cipher
        .encrypt(GcmNonce::from_slice(&iv), plaintext)
        .expect("AES-GCM encryption of in-memory buffers cannot fail");
    let mut out = Vec::with_capacity(IV_LEN + sealed.len());
    out.extend_from_slice(&iv);
    out.extend_from_slice(&sealed);
    out
}

pub fn sym_decrypt(key: &SymKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < IV_LEN + TAG_LEN {
        return Err(CryptoError::AuthFail);
    }
    let (iv, sealed) = ciphertext.split_at(IV_LEN);
    let cipher = Aes128Gcm::new_from_slice(&key.0).expect("16-byte key");
    cipher.decrypt(GcmNonce::from_slice(iv), sealed).map_err(|_| CryptoError::AuthFail)
}

/// Public half of an actor's key material: an X25519 key for envelopes and
/// an Ed25519 key for signatures.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey {
    pub enc: [u8; 32],
    pub sig: [u8; 32],
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.enc);
        out.extend_from_slice(&self.sig);
        out
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.enc[..8]))
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey {
    enc: [u8; 32],
    sig: [u8; 32],
}

impl PrivateKey {
    /// Raw key bytes. Only used to model key compromise in tests and attack scripts.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.enc);
        out.extend_from_slice(&self.sig);
        out
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

impl KeyPair {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut enc = [0u8; 32];
        let mut sig = [0u8; 32];
        rng.fill_bytes(&mut enc);
        rng.fill_bytes(&mut sig);
        let enc_pub = x25519_dalek::PublicKey::from(&x25519_dalek::StaticSecret::from(enc));
        let sig_pub = ed25519_dalek::SigningKey::from_bytes(&sig).verifying_key();
        KeyPair {
            public: PublicKey { enc: enc_pub.to_bytes(), sig: sig_pub.to_bytes() },
            private: PrivateKey { enc, sig },
        }
    }
}

/// Hybrid public-key ciphertext.
///
/// `wrapped_key` is `ephemeral_x25519_pub || sym_encrypt(kek, session_key)`;
/// `body` is `sym_encrypt(session_key, plaintext)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Envelope {
    pub wrapped_key: Vec<u8>,
    pub body: Vec<u8>,
}

fn wrap_kek(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> SymKey {
    let digest = Sha256::new()
        .chain_update(WRAP_KDF_LABEL)
        .chain_update(shared)
        .chain_update(ephemeral)
        .chain_update(recipient)
        .finalize();
    let mut key = [0u8; KEY_LEN];
    key.copy_from_slice(&digest[..KEY_LEN]);
    SymKey(key)
}

pub fn pk_encrypt(public: &PublicKey, plaintext: &[u8], rng: &mut impl RngCore) -> Envelope {
    let mut eph = [0u8; 32];
    rng.fill_bytes(&mut eph);
    let eph_secret = x25519_dalek::StaticSecret::from(eph);
    let eph_public = x25519_dalek::PublicKey::from(&eph_secret).to_bytes();
    let shared = eph_secret.diffie_hellman(&x25519_dalek::PublicKey::from(public.enc));
    let kek = wrap_kek(shared.as_bytes(), &eph_public, &public.enc);

    let session = SymKey::generate(rng);
    let mut wrapped_key = eph_public.to_vec();
    wrapped_key.extend_from_slice(&sym_encrypt(&kek, &session.0));
    Envelope { wrapped_key, body: sym_encrypt(&session, plaintext) }
}

pub fn pk_decrypt(private: &PrivateKey, env: &Envelope) -> Result<Vec<u8>, CryptoError> {
    if env.wrapped_key.len() < X25519_LEN {
        return Err(CryptoError::AuthFail);
    }
    let (eph, wrapped) = env.wrapped_key.split_at(X25519_LEN);
    let eph: [u8; 32] = eph.try_into().expect("split at 32");
    let secret = x25519_dalek::StaticSecret::from(private.enc);
    let recipient = x25519_dalek::PublicKey::from(&secret).to_bytes();
    let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(eph));
    let kek = wrap_kek(shared.as_bytes(), &eph, &recipient);
    let session = sym_decrypt(&kek, wrapped)?;
    let session = SymKey::from_slice(&session).ok_or(CryptoError::AuthFail)?;
    sym_decrypt(&session, &env.body)
}

pub fn sign(private: &PrivateKey, message: &[u8]) -> Vec<u8> {
    ed25519_dalek::SigningKey::from_bytes(&private.sig).sign(message).to_bytes().to_vec()
}

/// Malformed keys or signatures verify as `false`.
pub fn verify(public: &PublicKey, message: &[u8], signature: &[u8]) -> bool {
    let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&public.sig) else {
        return false;
    };
    let Ok(signature) = ed25519_dalek::Signature::from_slice(signature) else {
        return false;
    };
    key.verify(message, &signature).is_ok()
}

/// Password-based key for unlocking an ID card (PBKDF2-HMAC-SHA256).
pub fn derive_card_key(password: &[u8], salt: &[u8]) -> Result<SymKey, CryptoError> {
    if password.is_empty() {
        return Err(CryptoError::EmptyPassword);
    }
    let mut key = [0u8; KEY_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(password, salt, CARD_KDF_ROUNDS, &mut key);
    Ok(SymKey(key))
}

/// Diffie-Hellman group parameters.
#[derive(Clone, PartialEq, Eq)]
pub struct DhParams {
    pub p: BigUint,
    pub g: BigUint,
}

// RFC 3526, group 14.
const MODP_2048: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1\
29024E088A67CC74020BBEA63B139B22514A08798E3404DD\
EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245\
E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D\
C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F\
83655D23DCA3AD961C62F356208552BB9ED529077096966D\
670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9\
DE2BCBF6955817183995497CEA956AE515D2261898FA0510\
15728E5A8AACAA68FFFFFFFFFFFFFFFF";

impl DhParams {
    /// `p = 23, g = 5`.
    pub fn toy() -> Self {
        DhParams { p: BigUint::from(23u32), g: BigUint::from(5u32) }
    }

    /// The 2048-bit MODP safe-prime group with generator 2.
    pub fn standard() -> Self {
        DhParams {
            p: BigUint::parse_bytes(MODP_2048.as_bytes(), 16).expect("valid hex constant"),
            g: BigUint::from(2u32),
        }
    }

    /// True if `value` lies in `[2, p-2]`.
    pub fn in_range(&self, value: &BigUint) -> bool {
        let two = BigUint::from(2u32);
        *value >= two && *value <= &self.p - &two
    }

    pub fn share(&self, secret: &BigUint) -> BigUint {
        self.g.modpow(secret, &self.p)
    }

    /// Width of the big-endian encoding of a group element.
    pub fn element_len(&self) -> usize {
        self.p.bits().div_ceil(8) as usize
    }

    /// Fixed-width big-endian encoding of a value below `p`.
    pub fn encode_element(&self, value: &BigUint) -> Vec<u8> {
        let raw = value.to_bytes_be();
        let width = self.element_len().max(raw.len());
        let mut out = vec![0u8; width - raw.len()];
        out.extend_from_slice(&raw);
        out
    }
}

impl fmt::Debug for DhParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.p.to_u64() {
            Some(p) => write!(f, "DhParams {{ p: {p}, g: {} }}", self.g),
            None => write!(f, "DhParams {{ p: <{} bits>, g: {} }}", self.p.bits(), self.g),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct DhKeyPair {
    pub secret: BigUint,
    pub share: BigUint,
}

impl fmt::Debug for DhKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DhKeyPair").field("share", &self.share).finish_non_exhaustive()
    }
}

/// Samples a secret uniformly from `[2, p-2]` by rejection and computes its
/// share. Secrets whose share the peer would refuse (`p-1` for an odd
/// exponent in a group where `g` generates everything) are resampled too.
pub fn dh_gen(params: &DhParams, rng: &mut impl RngCore) -> DhKeyPair {
    let span = &params.p - BigUint::from(3u32); // |[2, p-2]|
    let bits = span.bits();
    let byte_len = bits.div_ceil(8) as usize;
    let excess = (byte_len as u64) * 8 - bits;
    let mut buf = vec![0u8; byte_len];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xFF >> excess;
        let candidate = BigUint::from_bytes_be(&buf);
        if candidate >= span {
            continue;
        }
        let secret = candidate + BigUint::from(2u32);
        let share = params.share(&secret);
        if params.in_range(&share) {
            return DhKeyPair { secret, share };
        }
    }
}

/// Hashes a group element into a [`SymKey`].
pub fn dh_kdf(params: &DhParams, element: &BigUint) -> SymKey {
    let digest = Sha256::new().chain_update(DH_KDF_LABEL).chain_update(params.encode_element(element)).finalize();
    let mut key = [0u8; KEY_LEN];
    key.copy_from_slice(&digest[..KEY_LEN]);
    SymKey(key)
}

pub fn dh_shared(params: &DhParams, secret: &BigUint, peer_share: &BigUint) -> Result<SymKey, CryptoError> {
    if !params.in_range(peer_share) {
        return Err(CryptoError::DegenerateShare);
    }
    Ok(dh_kdf(params, &peer_share.modpow(secret, &params.p)))
}
