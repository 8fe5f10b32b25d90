//! Record envelopes: the encrypted original records that travel next to
//! each perturbed vector. The cipher is pluggable and treated as opaque
//! bytes everywhere else; the provided implementation is ChaCha20-Poly1305
//! with a random nonce prepended to the ciphertext.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use rand::Rng;

use crate::error::{Error, Result};

pub const ENVELOPE_KEY_LEN: usize = 32;
const NONCE_LEN: usize = 12;

/// Authenticated symmetric cipher for record envelopes.
pub trait EnvelopeCipher {
    fn seal(&self, plaintext: &[u8], rng: &mut dyn rand::RngCore) -> Vec<u8>;
    fn open(&self, sealed: &[u8]) -> Result<Vec<u8>>;
}

/// Default envelope cipher.
#[derive(Clone)]
pub struct ChaChaEnvelope {
    key: [u8; ENVELOPE_KEY_LEN],
}

impl ChaChaEnvelope {
    pub fn new(key: [u8; ENVELOPE_KEY_LEN]) -> Self {
        ChaChaEnvelope { key }
    }

    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut key = [0u8; ENVELOPE_KEY_LEN];
        rng.fill(&mut key[..]);
        ChaChaEnvelope { key }
    }

    pub fn key_bytes(&self) -> &[u8; ENVELOPE_KEY_LEN] {
        &self.key
    }
}

impl EnvelopeCipher for ChaChaEnvelope {
    fn seal(&self, plaintext: &[u8], rng: &mut dyn rand::RngCore) -> Vec<u8> {
        let cipher = ChaCha20Poly1305::new(self.key.as_ref().into());
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let ct = cipher
            .encrypt(Nonce::from_slice(&nonce), plaintext)
            .expect("chacha20poly1305 encryption is infallible for in-memory data");
        let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&ct);
        out
    }

    fn open(&self, sealed: &[u8]) -> Result<Vec<u8>> {
        if sealed.len() < NONCE_LEN {
            return Err(Error::EnvelopeFormat);
        }
        let (nonce, ct) = sealed.split_at(NONCE_LEN);
        let cipher = ChaCha20Poly1305::new(self.key.as_ref().into());
        cipher
            .decrypt(Nonce::from_slice(nonce), ct)
            .map_err(|_| Error::EnvelopeDecrypt)
    }
}

impl std::fmt::Debug for ChaChaEnvelope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ChaChaEnvelope {{ key: <redacted> }}")
    }
}
