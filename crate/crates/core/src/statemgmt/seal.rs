//! Authenticated encryption of flow states bound to `fid ‖ swap_count`.

use crate::crypto::{Aead, AeadAlgorithm, AuthError, KEY_LEN, NONCE_LEN, TAG_LEN};
use crate::packet::{FlowId, FLOW_ID_LEN};

pub use crate::crypto::TAG_LEN as MAC_LEN;

/// Per-manager state key and IV. Both stay on the trusted side.
#[derive(Clone, Debug)]
pub struct StateSealer {
    aead: Aead,
    iv: [u8; 4],
}

fn nonce(iv: &[u8; 4], swap_count: u64) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    n[..4].copy_from_slice(iv);
    n[4..].copy_from_slice(&swap_count.to_be_bytes());
    n
}

fn associated_data(fid: &FlowId, swap_count: u64) -> [u8; FLOW_ID_LEN + 8] {
    let mut ad = [0u8; FLOW_ID_LEN + 8];
    ad[..FLOW_ID_LEN].copy_from_slice(&fid.to_bytes());
    ad[FLOW_ID_LEN..].copy_from_slice(&swap_count.to_be_bytes());
    ad
}

impl StateSealer {
    pub fn new(alg: AeadAlgorithm, key: &[u8; KEY_LEN], iv: [u8; 4]) -> Self {
        StateSealer {
            aead: Aead::new(alg, key),
            iv,
        }
    }

    /// Encrypt `state` in place, returning the MAC.
    pub fn seal_state(&self, fid: &FlowId, swap_count: u64, state: &mut [u8]) -> [u8; TAG_LEN] {
        self.aead.seal_in_place(
            &nonce(&self.iv, swap_count),
            &associated_data(fid, swap_count),
            state,
        )
    }

    /// Verify and decrypt `state` in place. On failure `state` is unchanged.
    pub fn open_state(
        &self,
        fid: &FlowId,
        swap_count: u64,
        state: &mut [u8],
        mac: &[u8; TAG_LEN],
    ) -> Result<(), AuthError> {
        self.aead.open_in_place(
            &nonce(&self.iv, swap_count),
            &associated_data(fid, swap_count),
            state,
            mac,
        )
    }
}
