//! Nonce-based AEAD with detached 16-byte tags, behind a small enum so the
//! algorithm can be swapped without touching callers.

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use chacha20poly1305::ChaCha20Poly1305;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("authentication failed")]
pub struct AuthError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AeadAlgorithm {
    #[default]
    Aes256Gcm,
    ChaCha20Poly1305,
}

#[derive(Clone)]
pub enum Aead {
    Aes256Gcm(Box<Aes256Gcm>),
    ChaCha20Poly1305(Box<ChaCha20Poly1305>),
}

impl std::fmt::Debug for Aead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Aead::Aes256Gcm(_) => f.write_str("Aead(AES-256-GCM)"),
            Aead::ChaCha20Poly1305(_) => f.write_str("Aead(ChaCha20-Poly1305)"),
        }
    }
}

impl Aead {
    pub fn new(alg: AeadAlgorithm, key: &[u8; KEY_LEN]) -> Self {
        match alg {
            AeadAlgorithm::Aes256Gcm => {
                Aead::Aes256Gcm(Box::new(Aes256Gcm::new_from_slice(key).expect("32-byte key")))
            }
            AeadAlgorithm::ChaCha20Poly1305 => Aead::ChaCha20Poly1305(Box::new(
                ChaCha20Poly1305::new_from_slice(key).expect("32-byte key"),
            )),
        }
    }

    pub fn seal_in_place(
        &self,
        nonce: &[u8; NONCE_LEN],
        ad: &[u8],
        buf: &mut [u8],
    ) -> [u8; TAG_LEN] {
        let nonce = Nonce::from_slice(nonce);
        let tag = match self {
            Aead::Aes256Gcm(c) => c.encrypt_in_place_detached(nonce, ad, buf),
            Aead::ChaCha20Poly1305(c) => c.encrypt_in_place_detached(nonce, ad, buf),
        }
        .expect("buffer within AEAD length limits");
        tag.into()
    }

    /// Verifies before decrypting; `buf` is left untouched on failure.
    pub fn open_in_place(
        &self,
        nonce: &[u8; NONCE_LEN],
        ad: &[u8],
        buf: &mut [u8],
        tag: &[u8; TAG_LEN],
    ) -> Result<(), AuthError> {
        let nonce = Nonce::from_slice(nonce);
        let tag = Tag::from_slice(tag);
        match self {
            Aead::Aes256Gcm(c) => c.decrypt_in_place_detached(nonce, ad, buf, tag),
            Aead::ChaCha20Poly1305(c) => c.decrypt_in_place_detached(nonce, ad, buf, tag),
        }
        .map_err(|_| AuthError)
    }
}

/// Label-separated subkey: SHA-256(label ‖ 0x00 ‖ secret).
pub fn derive_key(secret: &[u8], label: &str) -> [u8; KEY_LEN] {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(secret);
    h.finalize().into()
}
