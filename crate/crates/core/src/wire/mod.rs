//! Packet/record codec and record-level protection.
//!
//! Packets travel as frames packed back to back into 16 KiB plaintext
//! records. Each record is sealed with an AEAD whose nonce is a per-direction
//! salt followed by an implicit big-endian sequence number, so the wire
//! carries nothing but equal-length `ciphertext ‖ tag` blobs.

mod frame;
mod pack;

pub use frame::{
    frame_decode, frame_encode, Frame, FrameRef, FrameType, PktInfo, DATA_HEADER_LEN,
    HEARTBEAT_LEN, MAX_PKT_LEN,
};
pub use pack::{pack_stream, parse_records, RecordBuf, RecordPacker};

use thiserror::Error;

use crate::crypto::{derive_key, Aead, AeadAlgorithm, NONCE_LEN, TAG_LEN};

/// Plaintext bytes per record.
pub const RECORD_LEN: usize = 16384;
/// On-wire bytes per record.
pub const SEALED_RECORD_LEN: usize = RECORD_LEN + TAG_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("packet of {0} bytes exceeds the {MAX_PKT_LEN}-byte buffer")]
    Oversize(usize),
    #[error("unknown frame type {0:#04x}")]
    UnknownFrameType(u8),
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("truncated frame")]
    Truncated,
    #[error("record authentication failed at sequence {seq}")]
    AuthFailure { seq: u64 },
    #[error("record has {0} bytes, expected {SEALED_RECORD_LEN}")]
    BadRecordLength(usize),
}

/// Tunnel direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    GatewayToEtap,
    EtapToGateway,
}

impl Direction {
    fn label(self) -> &'static str {
        match self {
            Direction::GatewayToEtap => "g2e",
            Direction::EtapToGateway => "e2g",
        }
    }
}

/// Which end of the tunnel a key set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Gateway,
    Etap,
}

#[derive(Debug, Clone)]
struct DirectionKey {
    aead: Aead,
    salt: [u8; 4],
    seq: u64,
}

impl DirectionKey {
    fn derive(secret: &[u8], alg: AeadAlgorithm, dir: Direction) -> Self {
        let key = derive_key(secret, &format!("record key {}", dir.label()));
        let salt_full = derive_key(secret, &format!("record salt {}", dir.label()));
        DirectionKey {
            aead: Aead::new(alg, &key),
            salt: salt_full[..4].try_into().unwrap(),
            seq: 0,
        }
    }

    fn nonce(&self) -> [u8; NONCE_LEN] {
        let mut n = [0u8; NONCE_LEN];
        n[..4].copy_from_slice(&self.salt);
        n[4..].copy_from_slice(&self.seq.to_be_bytes());
        n
    }
}

/// Sender half for one direction.
#[derive(Debug, Clone)]
pub struct SealingKey(DirectionKey);

/// Receiver half for one direction.
#[derive(Debug, Clone)]
pub struct OpeningKey(DirectionKey);

impl SealingKey {
    /// Next sequence number to be used.
    pub fn sequence(&self) -> u64 {
        self.0.seq
    }

    /// Seal a record in place. `buf` is `RECORD_LEN` bytes of plaintext
    /// followed by `TAG_LEN` bytes of room for the tag.
    pub fn seal_in_place(&mut self, buf: &mut [u8]) -> Result<(), WireError> {
        if buf.len() != SEALED_RECORD_LEN {
            return Err(WireError::BadRecordLength(buf.len()));
        }
        let (body, tag_out) = buf.split_at_mut(RECORD_LEN);
        let tag = self.0.aead.seal_in_place(&self.0.nonce(), &[], body);
        tag_out.copy_from_slice(&tag);
        self.0.seq += 1;
        Ok(())
    }
}

impl OpeningKey {
    /// Sequence number the next record must carry.
    pub fn expected(&self) -> u64 {
        self.0.seq
    }

    /// Open a sealed record in place; on success the first `RECORD_LEN`
    /// bytes of `buf` hold the plaintext.
    pub fn open_in_place(&mut self, buf: &mut [u8]) -> Result<(), WireError> {
        if buf.len() != SEALED_RECORD_LEN {
            return Err(WireError::BadRecordLength(buf.len()));
        }
        let (body, tag) = buf.split_at_mut(RECORD_LEN);
        let tag: &[u8; TAG_LEN] = (&*tag).try_into().unwrap();
        self.0
            .aead
            .open_in_place(&self.0.nonce(), &[], body, tag)
            .map_err(|_| WireError::AuthFailure { seq: self.0.seq })?;
        self.0.seq += 1;
        Ok(())
    }
}

/// Keys held by one tunnel endpoint.
#[derive(Debug, Clone)]
pub struct ChannelKeys {
    pub seal: SealingKey,
    pub open: OpeningKey,
}

impl ChannelKeys {
    /// Derive both directions from a shared session secret. The two roles
    /// get mirrored halves.
    pub fn derive(secret: &[u8], alg: AeadAlgorithm, role: Role) -> Self {
        let g2e = DirectionKey::derive(secret, alg, Direction::GatewayToEtap);
        let e2g = DirectionKey::derive(secret, alg, Direction::EtapToGateway);
        match role {
            Role::Gateway => ChannelKeys {
                seal: SealingKey(g2e),
                open: OpeningKey(e2g),
            },
            Role::Etap => ChannelKeys {
                seal: SealingKey(e2g),
                open: OpeningKey(g2e),
            },
        }
    }

    /// Matching key pair for both ends.
    pub fn pair(secret: &[u8], alg: AeadAlgorithm) -> (ChannelKeys, ChannelKeys) {
        (
            ChannelKeys::derive(secret, alg, Role::Gateway),
            ChannelKeys::derive(secret, alg, Role::Etap),
        )
    }
}

/// Seal a 16 KiB plaintext record into a fresh buffer.
pub fn record_seal(key: &mut SealingKey, plaintext: &[u8]) -> Result<Vec<u8>, WireError> {
    if plaintext.len() != RECORD_LEN {
        return Err(WireError::BadRecordLength(plaintext.len()));
    }
    let mut buf = Vec::with_capacity(SEALED_RECORD_LEN);
    buf.extend_from_slice(plaintext);
    buf.resize(SEALED_RECORD_LEN, 0);
    key.seal_in_place(&mut buf)?;
    Ok(buf)
}

/// Open a sealed record into a fresh plaintext buffer.
pub fn record_open(key: &mut OpeningKey, sealed: &[u8]) -> Result<Vec<u8>, WireError> {
    let mut buf = sealed.to_vec();
    key.open_in_place(&mut buf)?;
    buf.truncate(RECORD_LEN);
    Ok(buf)
}
