//! The state manager: dual-lookup tracking, swapping, termination and
//! expiration.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::boundary::{ArenaKind, Boundary, BoundaryConfig, Region};
use crate::crypto::AeadAlgorithm;
use crate::packet::FlowId;

use super::cuckoo::CuckooTable;
use super::footprint::{footprint, Footprint};
use super::lru::FlowCache;
use super::seal::{StateSealer, MAC_LEN};
use super::store::StoreAllocator;
use super::{FlowStateStore, StateError, StateStats, Tracked};

/// Lookup-table payload. `locator` points into the cache slab for cached
/// flows and at a `flow_store` entry otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LkupEntry {
    pub locator: u64,
    pub swap_count: u64,
    pub last_access: u32,
}

#[derive(Debug, Clone)]
pub struct StateManagerConfig {
    pub cache_entries: usize,
    pub state_size: usize,
    pub expiration_s: u32,
    /// Store entries preallocated at init; `None` means twice the cache.
    pub store_prealloc_entries: Option<usize>,
    pub algorithm: AeadAlgorithm,
    /// Seeds key, IV, swap counters and hash keys. `None` draws from the OS.
    pub seed: Option<u64>,
    pub boundary: BoundaryConfig,
}

impl StateManagerConfig {
    pub fn new(cache_entries: usize, state_size: usize, expiration_s: u32) -> Self {
        StateManagerConfig {
            cache_entries,
            state_size,
            expiration_s,
            store_prealloc_entries: None,
            algorithm: AeadAlgorithm::default(),
            seed: None,
            boundary: BoundaryConfig::default(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

pub struct StateManager {
    config: StateManagerConfig,
    boundary: Boundary,
    cache: FlowCache,
    cache_table: CuckooTable<LkupEntry>,
    store_table: CuckooTable<LkupEntry>,
    alloc: StoreAllocator,
    sealer: StateSealer,
    scratch: Region,
    rng: StdRng,
    stats: StateStats,
}

impl std::fmt::Debug for StateManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateManager")
            .field("cache", &format_args!("{}/{}", self.cache.len(), self.cache.capacity()))
            .field("stored", &self.store_table.len())
            .field("stats", &self.stats)
            .finish()
    }
}

impl StateManager {
    pub fn new(config: StateManagerConfig) -> Result<Self, StateError> {
        if config.cache_entries < 2 {
            return Err(StateError::InvalidConfig(format!(
                "cache needs at least 2 entries, got {}",
                config.cache_entries
            )));
        }
        if config.state_size < 8 {
            return Err(StateError::InvalidConfig(format!(
                "state size must be at least 8 bytes, got {}",
                config.state_size
            )));
        }
        let mut rng = match config.seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_os_rng(),
        };
        let mut boundary = Boundary::new(config.boundary);
        let c = config.cache_entries;
        let ss = config.state_size;

        let mut key = [0u8; 32];
        let mut iv = [0u8; 4];
        rng.fill(&mut key);
        rng.fill(&mut iv);
        let key_region = boundary.alloc(ArenaKind::Trusted, 36)?;
        let kb = boundary.bytes_mut(key_region)?;
        kb[..32].copy_from_slice(&key);
        kb[32..].copy_from_slice(&iv);
        let sealer = StateSealer::new(config.algorithm, &key, iv);

        let cache = FlowCache::new(&mut boundary, c, ss)?;
        let scratch = boundary.alloc(ArenaKind::Trusted, (ss + MAC_LEN) as u64)?;
        let prealloc = config.store_prealloc_entries.unwrap_or(2 * c);
        let alloc = StoreAllocator::new(&mut boundary, ss + MAC_LEN, prealloc)?;
        // Leave headroom so the cache table stays well below its maximum load.
        let cache_table = CuckooTable::with_seed(c + c / 4, rng.random());
        let store_table = CuckooTable::with_seed(prealloc.max(16), rng.random());
        Ok(StateManager {
            config,
            boundary,
            cache,
            cache_table,
            store_table,
            alloc,
            sealer,
            scratch,
            rng,
            stats: StateStats::default(),
        })
    }

    pub fn config(&self) -> &StateManagerConfig {
        &self.config
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    /// Raw access to both arenas, for tests that play the adversary.
    pub fn boundary_mut(&mut self) -> &mut Boundary {
        &mut self.boundary
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }

    pub fn stored(&self) -> usize {
        self.store_table.len()
    }

    pub fn is_cached(&self, fid: &FlowId) -> bool {
        self.cache_table.contains(&fid.canonical().0)
    }

    /// Untrusted `flow_store` entry holding the sealed state of a stored flow.
    pub fn store_entry(&self, fid: &FlowId) -> Option<Region> {
        let e = self.store_table.get(&fid.canonical().0)?;
        Some(Region::new(e.locator, self.alloc.entry_size() as u64))
    }

    pub fn lookup(&self, fid: &FlowId) -> Option<LkupEntry> {
        let key = fid.canonical().0;
        self.cache_table.get(&key).or_else(|| self.store_table.get(&key)).copied()
    }

    /// Cached flows from most to least recently tracked.
    pub fn cache_order(&self) -> Vec<FlowId> {
        self.cache.iter_mru().map(|(_, f)| f).collect()
    }

    pub fn footprint(&self) -> Footprint {
        footprint(
            self.cache.capacity() as u64,
            self.tracked() as u64,
            self.config.state_size as u64,
        )
    }

    fn entry_region(&self, locator: u64) -> Region {
        Region::new(locator, self.alloc.entry_size() as u64)
    }

    /// Copy a stored entry into trusted scratch and verify-decrypt it there.
    fn load_stored(&mut self, fid: &FlowId, e: &LkupEntry) -> Result<(), StateError> {
        let ss = self.config.state_size;
        let home = self.entry_region(e.locator);
        self.boundary.check_memory(home)?;
        self.boundary.copy(home, self.scratch)?;
        self.stats.opens += 1;
        let buf = self.boundary.bytes_mut(self.scratch)?;
        let (state, mac) = buf.split_at_mut(ss);
        let mac: [u8; MAC_LEN] = (&*mac).try_into().unwrap();
        self.sealer
            .open_state(fid, e.swap_count, state, &mac)
            .map_err(|_| StateError::Auth(*fid))
    }

    /// Seal the flow in `slot` into `home` and move its lookup entry to the
    /// store table. The slot is left vacant.
    fn swap_out(&mut self, slot: u32, home: Region) -> Result<(), StateError> {
        let ss = self.config.state_size as u64;
        self.boundary.check_memory(home)?;
        let victim = self.cache.vacate(slot);
        let mut e = self
            .cache_table
            .remove(&victim)
            .expect("every cached flow is indexed");
        let region = self.cache.state_region(slot);
        let count = e.swap_count.wrapping_add(1);
        let mac = self
            .sealer
            .seal_state(&victim, count, self.boundary.bytes_mut(region)?);
        self.stats.seals += 1;
        self.boundary.copy(region, home.slice(0, ss))?;
        self.boundary
            .untrusted_mut(home.slice(ss, MAC_LEN as u64))?
            .copy_from_slice(&mac);
        e.swap_count = count;
        e.locator = home.base;
        self.store_table.insert_growing(victim, e);
        Ok(())
    }

    /// Check the structural invariants linking the three components.
    pub fn check_invariants(&self) -> Result<(), String> {
        let c = self.cache.capacity();
        if self.cache_table.len() != self.cache.len() || self.cache.len() > c {
            return Err(format!(
                "cache table has {} entries, cache {} of {c}",
                self.cache_table.len(),
                self.cache.len()
            ));
        }
        for (fid, e) in self.cache_table.iter() {
            let region = Region::new(e.locator, self.config.state_size as u64);
            if self.boundary.classify(region) != Some(ArenaKind::Trusted) {
                return Err(format!("cached {fid} points outside trusted memory"));
            }
            if self.cache.owner(self.cache.slot_at(e.locator)) != Some(*fid) {
                return Err(format!("cache slot of {fid} has the wrong back-reference"));
            }
            if self.store_table.contains(fid) {
                return Err(format!("{fid} is in both tables"));
            }
        }
        for (fid, e) in self.store_table.iter() {
            if self.boundary.check_memory(self.entry_region(e.locator)).is_err() {
                return Err(format!("stored {fid} points outside untrusted memory"));
            }
        }
        if self.cache.iter_mru().count() != self.cache.len() {
            return Err("LRU list length disagrees with the cache".into());
        }
        Ok(())
    }
}

impl FlowStateStore for StateManager {
    fn state_size(&self) -> usize {
        self.config.state_size
    }

    fn track(&mut self, fid: &FlowId, now_s: u32) -> Result<Tracked<'_>, StateError> {
        let (key, direction) = fid.canonical();
        self.stats.tracks += 1;

        if let Some(e) = self.cache_table.get_mut(&key) {
            e.last_access = now_s;
            let slot = self.cache.slot_at(e.locator);
            self.cache.raise(slot);
            self.stats.cache_hits += 1;
            let region = self.cache.state_region(slot);
            return Ok(Tracked {
                state: self.boundary.bytes_mut(region)?,
                is_new: false,
                direction,
            });
        }
        self.stats.cache_misses += 1;

        let stored = self.store_table.remove(&key);
        let mut entry = match stored {
            Some(e) => {
                if let Err(err) = self.load_stored(&key, &e) {
                    self.stats.auth_failures += 1;
                    log::warn!("dropping flow {key}: {err}");
                    let home = self.entry_region(e.locator);
                    if self.boundary.check_memory(home).is_ok() {
                        self.alloc.free_entry(&mut self.boundary, home)?;
                    }
                    return Err(err);
                }
                e
            }
            None => {
                self.stats.new_flows += 1;
                LkupEntry {
                    locator: 0,
                    swap_count: self.rng.random(),
                    last_access: now_s,
                }
            }
        };

        let slot = match self.cache.take_free() {
            Some(slot) => {
                if let Some(e) = stored {
                    let home = self.entry_region(e.locator);
                    self.alloc.free_entry(&mut self.boundary, home)?;
                }
                slot
            }
            None => {
                let slot = self.cache.lru().expect("full cache has an LRU entry");
                let home = match stored {
                    Some(e) => self.entry_region(e.locator),
                    None => self.alloc.alloc(&mut self.boundary)?,
                };
                self.swap_out(slot, home)?;
                slot
            }
        };

        let region = self.cache.state_region(slot);
        if stored.is_some() {
            let ss = self.config.state_size as u64;
            self.boundary.copy(self.scratch.slice(0, ss), region)?;
        } else {
            self.boundary.bytes_mut(region)?.fill(0);
        }
        entry.locator = region.base;
        entry.last_access = now_s;
        self.cache.occupy(slot, key);
        self.cache_table.insert_growing(key, entry);
        Ok(Tracked {
            state: self.boundary.bytes_mut(region)?,
            is_new: stored.is_none(),
            direction,
        })
    }

    fn terminate(&mut self, fid: &FlowId) -> Result<(), StateError> {
        let key = fid.canonical().0;
        if let Some(e) = self.cache_table.remove(&key) {
            let slot = self.cache.slot_at(e.locator);
            self.cache.release(&mut self.boundary, slot)?;
        } else if let Some(e) = self.store_table.remove(&key) {
            let home = self.entry_region(e.locator);
            self.alloc.free_entry(&mut self.boundary, home)?;
        } else {
            return Err(StateError::NotFound(key));
        }
        self.stats.terminated += 1;
        Ok(())
    }

    fn expire(&mut self, now_s: u32) -> usize {
        let timeout = self.config.expiration_s;
        let mut freed = Vec::new();
        self.store_table.retain(
            |_, e| now_s.saturating_sub(e.last_access) <= timeout,
            |_, e| freed.push(e.locator),
        );
        for locator in &freed {
            let home = self.entry_region(*locator);
            self.alloc
                .free_entry(&mut self.boundary, home)
                .expect("store entries are untrusted");
        }
        self.stats.expired += freed.len() as u64;
        freed.len()
    }

    fn stats(&self) -> StateStats {
        self.stats
    }

    fn tracked(&self) -> usize {
        self.cache_table.len() + self.store_table.len()
    }

    fn flow_ids(&self) -> Vec<FlowId> {
        let mut ids: Vec<_> = self
            .cache_table
            .iter()
            .chain(self.store_table.iter())
            .map(|(k, _)| *k)
            .collect();
        ids.sort_unstable();
        ids
    }
}
