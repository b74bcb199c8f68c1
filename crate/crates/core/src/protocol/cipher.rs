//! Public-key encryption used to carry protocol payloads.
//!
//! Two suites ship: [`X25519Cipher`], an ECIES-style construction (X25519,
//! HKDF-SHA256, ChaCha20-Poly1305), and [`KeystreamCipher`], a deterministic
//! SHA-256 keystream double used where protocol logic is tested in isolation.
//! Encryption randomness is supplied by the caller so seeded runs reproduce
//! byte-identical ciphertexts.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::error::{param, Error, Result};
use crate::seeding::{self, domain};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(Vec<u8>);

impl PublicKey {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        hex::decode(s).map(Self).map_err(|e| param(format!("public key hex: {e}")))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(Vec<u8>);

impl SecretKey {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

pub trait CipherSuite {
    fn name(&self) -> &'static str;

    /// Deterministic key pair for `seed`.
    fn keypair_generate(&self, seed: u64) -> KeyPair;

    fn encrypt(&self, recipient: &PublicKey, plaintext: &[u8], rng: &mut dyn RngCore) -> Result<Vec<u8>>;

    /// Fails with [`Error::Decrypt`] for a wrong key or a modified ciphertext.
    fn decrypt(&self, secret: &SecretKey, ciphertext: &[u8]) -> Result<Vec<u8>>;
}

/// Which suite a simulation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CipherKind {
    #[default]
    Keystream,
    X25519,
}

impl CipherKind {
    pub fn suite(self) -> &'static dyn CipherSuite {
        match self {
            CipherKind::Keystream => &KeystreamCipher,
            CipherKind::X25519 => &X25519Cipher,
        }
    }

    pub fn name(self) -> &'static str {
        self.suite().name()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "keystream" => Some(Self::Keystream),
            "x25519" => Some(Self::X25519),
            _ => None,
        }
    }
}

fn key_bytes(seed: u64, index: u64) -> [u8; 32] {
    let mut bytes = [0u8; 32];
    seeding::stream(seed, domain::KEYS, index).fill_bytes(&mut bytes);
    bytes
}

const KEYSTREAM_NONCE: usize = 16;
const KEYSTREAM_TAG: usize = 16;

/// XOR with a SHA-256 counter-mode keystream keyed by the recipient's public
/// key, plus a plaintext tag so wrong keys and tampering are detected. Not a
/// secure scheme: anyone holding the public key can decrypt.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeystreamCipher;

impl KeystreamCipher {
    fn public_of(secret: &[u8]) -> Vec<u8> {
        Sha256::new().chain_update(b"keystream-pk").chain_update(secret).finalize().to_vec()
    }

    fn apply(pk: &[u8], nonce: &[u8], data: &mut [u8]) {
        for (counter, chunk) in data.chunks_mut(32).enumerate() {
            let block = Sha256::new()
                .chain_update(b"keystream")
                .chain_update(pk)
                .chain_update(nonce)
                .chain_update((counter as u64).to_be_bytes())
                .finalize();
            chunk.iter_mut().zip(block.iter()).for_each(|(b, k)| *b ^= k);
        }
    }

    fn tag(pk: &[u8], nonce: &[u8], plaintext: &[u8]) -> [u8; KEYSTREAM_TAG] {
        let digest = Sha256::new()
            .chain_update(b"keystream-tag")
            .chain_update(pk)
            .chain_update(nonce)
            .chain_update(plaintext)
            .finalize();
        let mut tag = [0u8; KEYSTREAM_TAG];
        tag.copy_from_slice(&digest[..KEYSTREAM_TAG]);
        tag
    }
}

impl CipherSuite for KeystreamCipher {
    fn name(&self) -> &'static str {
        "keystream"
    }

    fn keypair_generate(&self, seed: u64) -> KeyPair {
        let secret = key_bytes(seed, 0).to_vec();
        KeyPair { public: PublicKey(Self::public_of(&secret)), secret: SecretKey(secret) }
    }

    fn encrypt(&self, recipient: &PublicKey, plaintext: &[u8], rng: &mut dyn RngCore) -> Result<Vec<u8>> {
        let mut nonce = [0u8; KEYSTREAM_NONCE];
        rng.fill_bytes(&mut nonce);
        let mut body = plaintext.to_vec();
        Self::apply(&recipient.0, &nonce, &mut body);
        let mut out = Vec::with_capacity(KEYSTREAM_NONCE + body.len() + KEYSTREAM_TAG);
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&body);
        out.extend_from_slice(&Self::tag(&recipient.0, &nonce, plaintext));
        Ok(out)
    }

    fn decrypt(&self, secret: &SecretKey, ciphertext: &[u8]) -> Result<Vec<u8>> {
        if ciphertext.len() < KEYSTREAM_NONCE + KEYSTREAM_TAG {
            return Err(Error::Decrypt);
        }
        let pk = Self::public_of(&secret.0);
        let (nonce, rest) = ciphertext.split_at(KEYSTREAM_NONCE);
        let (body, tag) = rest.split_at(rest.len() - KEYSTREAM_TAG);
        let mut plaintext = body.to_vec();
        Self::apply(&pk, nonce, &mut plaintext);
        if Self::tag(&pk, nonce, &plaintext) != tag {
            return Err(Error::Decrypt);
        }
        Ok(plaintext)
    }
}

/// Ephemeral-static X25519 key agreement, HKDF-SHA256 key derivation and
/// ChaCha20-Poly1305 sealing. Ciphertext layout: `ephemeral_pk || sealed`.
#[derive(Debug, Clone, Copy, Default)]
pub struct X25519Cipher;

impl X25519Cipher {
    fn aead(shared: &[u8], eph: &[u8], recipient: &[u8]) -> ChaCha20Poly1305 {
        let mut salt = Vec::with_capacity(64);
        salt.extend_from_slice(eph);
        salt.extend_from_slice(recipient);
        let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
        let mut key = [0u8; 32];
        hk.expand(b"reram-puf x25519 payload", &mut key).expect("32 bytes is a valid length");
        ChaCha20Poly1305::new(Key::from_slice(&key))
    }
}

impl CipherSuite for X25519Cipher {
    fn name(&self) -> &'static str {
        "x25519"
    }

    fn keypair_generate(&self, seed: u64) -> KeyPair {
        let secret = x25519_dalek::StaticSecret::from(key_bytes(seed, 1));
        let public = x25519_dalek::PublicKey::from(&secret);
        KeyPair {
            public: PublicKey(public.as_bytes().to_vec()),
            secret: SecretKey(secret.to_bytes().to_vec()),
        }
    }

    fn encrypt(&self, recipient: &PublicKey, plaintext: &[u8], rng: &mut dyn RngCore) -> Result<Vec<u8>> {
        let recipient_bytes: [u8; 32] = recipient
            .0
            .as_slice()
            .try_into()
            .map_err(|_| param("x25519 public key must be 32 bytes"))?;
        let mut eph_bytes = [0u8; 32];
        rng.fill_bytes(&mut eph_bytes);
        let eph = x25519_dalek::StaticSecret::from(eph_bytes);
        let eph_pk = x25519_dalek::PublicKey::from(&eph);
        let shared = eph.diffie_hellman(&x25519_dalek::PublicKey::from(recipient_bytes));
        // Each message uses a fresh ephemeral key, so a fixed nonce is safe.
        let sealed = Self::aead(shared.as_bytes(), eph_pk.as_bytes(), &recipient_bytes)
            .encrypt(Nonce::from_slice(&[0u8; 12]), plaintext)
            .map_err(|_| param("payload too large"))?;
        let mut out = eph_pk.as_bytes().to_vec();
        out.extend_from_slice(&sealed);
        Ok(out)
    }

    fn decrypt(&self, secret: &SecretKey, ciphertext: &[u8]) -> Result<Vec<u8>> {
        let secret_bytes: [u8; 32] = secret.0.as_slice().try_into().map_err(|_| Error::Decrypt)?;
        if ciphertext.len() < 32 + 16 {
            return Err(Error::Decrypt);
        }
        let (eph, sealed) = ciphertext.split_at(32);
        let eph: [u8; 32] = eph.try_into().expect("split at 32");
        let secret = x25519_dalek::StaticSecret::from(secret_bytes);
        let own_pk = x25519_dalek::PublicKey::from(&secret);
        let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(eph));
        Self::aead(shared.as_bytes(), &eph, own_pk.as_bytes())
            .decrypt(Nonce::from_slice(&[0u8; 12]), sealed)
            .map_err(|_| Error::Decrypt)
    }
}
