//! Trusted-memory accounting for the lookup metadata and the cache.

/// fid (13) + locator (8) + swap_count (8) + last_access (4).
pub const LKUP_ENTRY_LEN: u64 = 13 + 8 + 8 + 4;
/// Three 8-byte references per cached flow: LRU prev/next and lookup back-link.
pub const CACHE_META_LEN: u64 = 3 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub lookup_bytes: u64,
    pub cache_meta_bytes: u64,
    pub cache_state_bytes: u64,
}

impl Footprint {
    /// Bytes spent on indexing: lookup entries plus cache link fields.
    pub fn metadata_bytes(&self) -> u64 {
        self.lookup_bytes + self.cache_meta_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.metadata_bytes() + self.cache_state_bytes
    }
}

/// Trusted bytes needed to track `tracked_flows` flows with a cache of
/// `cache_entries` states of `state_size` bytes.
pub fn footprint(cache_entries: u64, tracked_flows: u64, state_size: u64) -> Footprint {
    Footprint {
        lookup_bytes: tracked_flows * LKUP_ENTRY_LEN,
        cache_meta_bytes: cache_entries * CACHE_META_LEN,
        cache_state_bytes: cache_entries * state_size,
    }
}
