//! Flow-state management under a small trusted memory budget.
//!
//! Plaintext states live in a bounded LRU [`FlowCache`](lru::FlowCache) on
//! the trusted side; everything else is sealed into `flow_store` entries in
//! untrusted memory. Two cuckoo tables index the flows: a small one for
//! cached flows, searched first, and a large one for stored flows.

pub mod cuckoo;
mod footprint;
mod lru;
mod manager;
mod seal;
mod store;
mod variants;

use thiserror::Error;

use crate::boundary::BoundaryError;
use crate::packet::{FlowDirection, FlowId};

pub use cuckoo::{CuckooTable, NeedsResize};
pub use footprint::{footprint, Footprint, CACHE_META_LEN, LKUP_ENTRY_LEN};
pub use manager::{LkupEntry, StateManager, StateManagerConfig};
pub use seal::StateSealer;
pub use store::StoreAllocator;
pub use variants::{NativeStore, StrawmanStore};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error("stored state of {0} failed authentication; flow dropped")]
    Auth(FlowId),
    #[error("flow {0} is not tracked")]
    NotFound(FlowId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Result of tracking one packet's flow. `state` stays valid until the next
/// call on the same store.
#[derive(Debug)]
pub struct Tracked<'a> {
    pub state: &'a mut [u8],
    pub is_new: bool,
    pub direction: FlowDirection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StateStats {
    pub tracks: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub new_flows: u64,
    pub seals: u64,
    pub opens: u64,
    pub terminated: u64,
    pub expired: u64,
    pub auth_failures: u64,
}

impl StateStats {
    pub fn miss_rate(&self) -> f64 {
        if self.tracks == 0 {
            0.0
        } else {
            self.cache_misses as f64 / self.tracks as f64
        }
    }
}

/// Anything that keeps per-flow state for a network function.
pub trait FlowStateStore {
    fn state_size(&self) -> usize;

    /// Look up (or create) the state of `fid`'s flow, in either direction.
    fn track(&mut self, fid: &FlowId, now_s: u32) -> Result<Tracked<'_>, StateError>;

    /// Stop tracking the flow.
    fn terminate(&mut self, fid: &FlowId) -> Result<(), StateError>;

    /// Drop flows idle for longer than the configured timeout; returns how
    /// many were removed.
    fn expire(&mut self, now_s: u32) -> usize;

    fn stats(&self) -> StateStats;

    /// Number of flows currently tracked.
    fn tracked(&self) -> usize;

    /// Canonical ids of all tracked flows, sorted.
    fn flow_ids(&self) -> Vec<FlowId>;
}
