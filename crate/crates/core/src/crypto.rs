//! Primitives used by the distribution protocol.
//!
//! * signatures: Ed25519
//! * sealing short strings to a public key: X25519 + HKDF-SHA256 + AES-128-GCM
//! * bulk encryption: AES-128-GCM under a per-lane session key
//! * pseudonyms: SHA-256 over `real_id ‖ r`
//!
//! All key generation takes an explicit RNG so a seeded generator yields a
//! fully reproducible run.

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

/// Largest plaintext accepted by [`seal`].
pub const SEAL_LIMIT: usize = 4096;
pub const NONCE_LEN: usize = 12;
const SEAL_HEADER: usize = 32 + NONCE_LEN;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("plaintext of {0} bytes exceeds the {SEAL_LIMIT}-byte public-key limit")]
    Oversize(usize),
    #[error("authenticated decryption failed")]
    Decrypt,
    #[error("nonce reused within the session")]
    NonceReuse,
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("invalid permutation: {0}")]
    Permutation(String),
    #[error("data has {got} items, permutation has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("pseudonym secret must not be empty")]
    EmptySecret,
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}…)", hex(&self.0[..self.0.len().min(6)]))
    }
}

/// Public half of an entity's keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKeys {
    pub verify: [u8; 32],
    pub encrypt: [u8; 32],
}

impl PublicKeys {
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.verify);
        out[32..].copy_from_slice(&self.encrypt);
        out
    }

    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        verify(message, signature, self)
    }
}

/// Signing and decryption keys of one entity. Secret material is never
/// exposed or printed.
pub struct KeyPair {
    signing: SigningKey,
    decryption: StaticSecret,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public())
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut a = [0u8; 32];
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut a);
        rng.fill_bytes(&mut b);
        Self {
            signing: SigningKey::from_bytes(&a),
            decryption: StaticSecret::from(b),
        }
    }

    pub fn public(&self) -> PublicKeys {
        PublicKeys {
            verify: self.signing.verifying_key().to_bytes(),
            encrypt: XPublic::from(&self.decryption).to_bytes(),
        }
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(message, self)
    }

    pub fn open(&self, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        open(ciphertext, self)
    }
}

pub fn sign(message: &[u8], keys: &KeyPair) -> Signature {
    Signature(keys.signing.sign(message).to_bytes().to_vec())
}

pub fn verify(message: &[u8], signature: &Signature, public: &PublicKeys) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&public.verify) else {
        return false;
    };
    let Ok(bytes) = <[u8; 64]>::try_from(signature.0.as_slice()) else {
        return false;
    };
    key.verify(message, &ed25519_dalek::Signature::from_bytes(&bytes))
        .is_ok()
}

fn seal_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> Aes128Gcm {
    let hk = Hkdf::<Sha256>::new(None, shared);
    let mut info = Vec::with_capacity(73);
    info.extend_from_slice(b"psum-seal");
    info.extend_from_slice(ephemeral);
    info.extend_from_slice(recipient);
    let mut key = [0u8; 16];
    hk.expand(&info, &mut key).expect("16 bytes is a valid HKDF length");
    Aes128Gcm::new(&key.into())
}

/// Encrypts a short string to `recipient`: `ephemeral_pk ‖ nonce ‖ AEAD`.
pub fn seal(plaintext: &[u8], recipient: &PublicKeys, rng: &mut impl RngCore) -> Result<Vec<u8>, CryptoError> {
    if plaintext.len() > SEAL_LIMIT {
        return Err(CryptoError::Oversize(plaintext.len()));
    }
    let mut eph = [0u8; 32];
    rng.fill_bytes(&mut eph);
    let eph = StaticSecret::from(eph);
    let eph_pub = XPublic::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&XPublic::from(recipient.encrypt));
    let cipher = seal_key(shared.as_bytes(), &eph_pub, &recipient.encrypt);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let body = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .map_err(|_| CryptoError::Decrypt)?;
    let mut out = Vec::with_capacity(SEAL_HEADER + body.len());
    out.extend_from_slice(&eph_pub);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn open(ciphertext: &[u8], keys: &KeyPair) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < SEAL_HEADER + 16 {
        return Err(CryptoError::Decrypt);
    }
    let eph_pub: [u8; 32] = ciphertext[..32].try_into().expect("slice of 32");
    let shared = keys.decryption.diffie_hellman(&XPublic::from(eph_pub));
    let own = XPublic::from(&keys.decryption).to_bytes();
    let cipher = seal_key(shared.as_bytes(), &eph_pub, &own);
    cipher
        .decrypt(Nonce::from_slice(&ciphertext[32..SEAL_HEADER]), &ciphertext[SEAL_HEADER..])
        .map_err(|_| CryptoError::Decrypt)
}

/// 128-bit symmetric key for one transaction lane.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey([u8; 16]);

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SessionKey(..)")
    }
}

impl SessionKey {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut k = [0u8; 16];
        rng.fill_bytes(&mut k);
        Self(k)
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    /// Raw bytes, for sealing the key to the merchant.
    pub fn to_bytes(&self) -> [u8; 16] {
        self.0
    }

    fn cipher(&self) -> Aes128Gcm {
        Aes128Gcm::new(&self.0.into())
    }
}

/// Encrypting side of a session. Remembers every nonce it has used.
#[derive(Debug)]
pub struct SessionCipher {
    key: SessionKey,
    used: HashSet<[u8; NONCE_LEN]>,
}

impl SessionCipher {
    pub fn new(key: SessionKey) -> Self {
        Self {
            key,
            used: HashSet::new(),
        }
    }

    /// Output is `nonce ‖ AEAD(plaintext)`.
    pub fn encrypt(&mut self, nonce: [u8; NONCE_LEN], plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if !self.used.insert(nonce) {
            return Err(CryptoError::NonceReuse);
        }
        sym_encrypt(plaintext, &self.key, nonce)
    }
}

pub fn sym_encrypt(plaintext: &[u8], key: &SessionKey, nonce: [u8; NONCE_LEN]) -> Result<Vec<u8>, CryptoError> {
    let body = key
        .cipher()
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .map_err(|_| CryptoError::Decrypt)?;
    let mut out = Vec::with_capacity(NONCE_LEN + body.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn sym_decrypt(ciphertext: &[u8], key: &SessionKey) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < NONCE_LEN + 16 {
        return Err(CryptoError::Decrypt);
    }
    key.cipher()
        .decrypt(Nonce::from_slice(&ciphertext[..NONCE_LEN]), &ciphertext[NONCE_LEN..])
        .map_err(|_| CryptoError::Decrypt)
}

pub fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f64s(bytes: &[u8]) -> Result<Vec<f64>, CryptoError> {
    if bytes.len() % 8 != 0 {
        return Err(CryptoError::Malformed(format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Secret `r` shared between a buyer and the registration CA.
#[derive(Clone, PartialEq, Eq)]
pub struct PseudonymSecret(Vec<u8>);

impl fmt::Debug for PseudonymSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PseudonymSecret(..)")
    }
}

impl PseudonymSecret {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut r = vec![0u8; 32];
        rng.fill_bytes(&mut r);
        Self(r)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub(crate) fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// HMAC-SHA256 keyed with `r`; proves knowledge of `r` for `data`.
    pub fn bind(&self, data: &[u8]) -> [u8; 32] {
        let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&self.0).expect("HMAC accepts any key length");
        mac.update(data);
        mac.finalize().into_bytes().into()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pseudonym(pub [u8; 32]);

impl fmt::Debug for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pseudonym({})", &hex(&self.0)[..16])
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex(&self.0))
    }
}

/// `H(real_id ‖ r)` with a 256-bit hash.
pub fn make_pseudonym(real_id: &[u8], r: &PseudonymSecret) -> Result<Pseudonym, CryptoError> {
    if r.0.is_empty() {
        return Err(CryptoError::EmptySecret);
    }
    let mut h = Sha256::new();
    h.update(real_id);
    h.update(&r.0);
    Ok(Pseudonym(h.finalize().into()))
}

fn put(buf: &mut Vec<u8>, field: &[u8]) {
    buf.extend_from_slice(&(field.len() as u32).to_le_bytes());
    buf.extend_from_slice(field);
}

/// CA-signed binding of a public key to a real identity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub subject: Vec<u8>,
    pub keys: PublicKeys,
    pub issuer: String,
    pub expiry: u64,
    pub signature: Signature,
}

impl Certificate {
    fn body(subject: &[u8], keys: &PublicKeys, issuer: &str, expiry: u64) -> Vec<u8> {
        let mut b = b"psum-cert".to_vec();
        put(&mut b, subject);
        put(&mut b, &keys.to_bytes());
        put(&mut b, issuer.as_bytes());
        b.extend_from_slice(&expiry.to_le_bytes());
        b
    }

    pub fn issue(subject: &[u8], keys: PublicKeys, issuer: &str, expiry: u64, ca: &KeyPair) -> Self {
        let signature = ca.sign(&Self::body(subject, &keys, issuer, expiry));
        Self {
            subject: subject.to_vec(),
            keys,
            issuer: issuer.to_string(),
            expiry,
            signature,
        }
    }

    pub fn verify(&self, ca: &PublicKeys, now: u64) -> bool {
        now <= self.expiry
            && ca.verify(
                &Self::body(&self.subject, &self.keys, &self.issuer, self.expiry),
                &self.signature,
            )
    }
}

/// Certificate binding an anonymous key pair to a pseudonym; carries no real
/// identity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymousCert {
    pub anon_keys: PublicKeys,
    pub pseudonym: Pseudonym,
    pub issuer: String,
    pub expiry: u64,
    pub signature: Signature,
}

impl AnonymousCert {
    fn body(keys: &PublicKeys, pseudonym: &Pseudonym, issuer: &str, expiry: u64) -> Vec<u8> {
        let mut b = b"psum-anon-cert".to_vec();
        put(&mut b, &keys.to_bytes());
        put(&mut b, &pseudonym.0);
        put(&mut b, issuer.as_bytes());
        b.extend_from_slice(&expiry.to_le_bytes());
        b
    }

    pub fn issue(anon_keys: PublicKeys, pseudonym: Pseudonym, issuer: &str, expiry: u64, ca: &KeyPair) -> Self {
        let signature = ca.sign(&Self::body(&anon_keys, &pseudonym, issuer, expiry));
        Self {
            anon_keys,
            pseudonym,
            issuer: issuer.to_string(),
            expiry,
            signature,
        }
    }

    pub fn verify(&self, ca: &PublicKeys, now: u64) -> bool {
        now <= self.expiry
            && ca.verify(
                &Self::body(&self.anon_keys, &self.pseudonym, &self.issuer, self.expiry),
                &self.signature,
            )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Self::body(&self.anon_keys, &self.pseudonym, &self.issuer, self.expiry);
        put(&mut b, &self.signature.0);
        b
    }
}

/// Bijection on `0..l`; [`permute`] moves item `i` to position `σ(i)`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationKey(Vec<u32>);

impl fmt::Debug for PermutationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PermutationKey(l={})", self.0.len())
    }
}

impl PermutationKey {
    pub fn identity(len: usize) -> Self {
        Self((0..len as u32).collect())
    }

    /// Uniform permutation (Fisher–Yates).
    pub fn random(len: usize, rng: &mut impl RngCore) -> Self {
        let mut map: Vec<u32> = (0..len as u32).collect();
        for i in (1..len).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            map.swap(i, j);
        }
        Self(map)
    }

    pub fn from_vec(map: Vec<u32>) -> Result<Self, CryptoError> {
        let mut seen = vec![false; map.len()];
        for &v in &map {
            let slot = seen
                .get_mut(v as usize)
                .ok_or_else(|| CryptoError::Permutation(format!("index {v} out of range")))?;
            if *slot {
                return Err(CryptoError::Permutation(format!("index {v} repeated")));
            }
            *slot = true;
        }
        Ok(Self(map))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u32; self.0.len()];
        for (i, &s) in self.0.iter().enumerate() {
            inv[s as usize] = i as u32;
        }
        Self(inv)
    }

    /// `then ∘ self`: apply `self` first.
    pub fn then(&self, then: &PermutationKey) -> Result<Self, CryptoError> {
        if then.len() != self.len() {
            return Err(CryptoError::LengthMismatch {
                expected: self.len(),
                got: then.len(),
            });
        }
        Ok(Self(self.0.iter().map(|&s| then.0[s as usize]).collect()))
    }

    /// `len: u32 ‖ entries: u32…`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(4 + 4 * self.0.len());
        b.extend_from_slice(&(self.0.len() as u32).to_le_bytes());
        for v in &self.0 {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < 4 {
            return Err(CryptoError::Malformed("permutation header truncated".into()));
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 4 + 4 * len {
            return Err(CryptoError::Malformed("permutation length mismatch".into()));
        }
        Self::from_vec(
            bytes[4..]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        )
    }
}

pub fn permute<T: Clone>(data: &[T], sigma: &PermutationKey) -> Result<Vec<T>, CryptoError> {
    if data.len() != sigma.len() {
        return Err(CryptoError::LengthMismatch {
            expected: sigma.len(),
            got: data.len(),
        });
    }
    let mut slots: Vec<Option<T>> = vec![None; data.len()];
    for (item, &to) in data.iter().zip(&sigma.0) {
        slots[to as usize] = Some(item.clone());
    }
    Ok(slots.into_iter().map(|s| s.expect("bijection fills every slot")).collect())
}

pub fn unpermute<T: Clone>(data: &[T], sigma: &PermutationKey) -> Result<Vec<T>, CryptoError> {
    if data.len() != sigma.len() {
        return Err(CryptoError::LengthMismatch {
            expected: sigma.len(),
            got: data.len(),
        });
    }
    Ok(sigma.0.iter().map(|&s| data[s as usize].clone()).collect())
}
