//! Reference stores used for comparison runs.
//!
//! [`NativeStore`] keeps every state in an ordinary plaintext map with no
//! boundary at all. [`StrawmanStore`] keeps every state sealed in untrusted
//! memory and pays a seal and an open on every single access; it stands in
//! for a naive port whose state traffic is dominated by enclave paging.

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::boundary::{ArenaKind, Boundary, Region};
use crate::packet::FlowId;

use super::manager::{LkupEntry, StateManagerConfig};
use super::seal::{StateSealer, MAC_LEN};
use super::store::StoreAllocator;
use super::{FlowStateStore, StateError, StateStats, Tracked};

#[derive(Debug)]
pub struct NativeStore {
    map: HashMap<FlowId, (Box<[u8]>, u32)>,
    state_size: usize,
    expiration_s: u32,
    stats: StateStats,
}

impl NativeStore {
    pub fn new(state_size: usize, expiration_s: u32) -> Self {
        NativeStore {
            map: HashMap::new(),
            state_size,
            expiration_s,
            stats: StateStats::default(),
        }
    }
}

impl FlowStateStore for NativeStore {
    fn state_size(&self) -> usize {
        self.state_size
    }

    fn track(&mut self, fid: &FlowId, now_s: u32) -> Result<Tracked<'_>, StateError> {
        let (key, direction) = fid.canonical();
        self.stats.tracks += 1;
        let mut is_new = false;
        let ss = self.state_size;
        let (state, last) = self.map.entry(key).or_insert_with(|| {
            is_new = true;
            (vec![0u8; ss].into_boxed_slice(), now_s)
        });
        *last = now_s;
        if is_new {
            self.stats.new_flows += 1;
            self.stats.cache_misses += 1;
        } else {
            self.stats.cache_hits += 1;
        }
        Ok(Tracked {
            state,
            is_new,
            direction,
        })
    }

    fn terminate(&mut self, fid: &FlowId) -> Result<(), StateError> {
        let key = fid.canonical().0;
        self.map.remove(&key).ok_or(StateError::NotFound(key))?;
        self.stats.terminated += 1;
        Ok(())
    }

    fn expire(&mut self, now_s: u32) -> usize {
        let before = self.map.len();
        let timeout = self.expiration_s;
        self.map
            .retain(|_, (_, last)| now_s.saturating_sub(*last) <= timeout);
        let n = before - self.map.len();
        self.stats.expired += n as u64;
        n
    }

    fn stats(&self) -> StateStats {
        self.stats
    }

    fn tracked(&self) -> usize {
        self.map.len()
    }

    fn flow_ids(&self) -> Vec<FlowId> {
        let mut ids: Vec<_> = self.map.keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}

/// Seal-everything store: exactly one state is plaintext at a time, and it
/// is written back on the next call.
pub struct StrawmanStore {
    boundary: Boundary,
    sealer: StateSealer,
    alloc: StoreAllocator,
    entries: HashMap<FlowId, LkupEntry>,
    buffer: Region,
    pinned: Option<FlowId>,
    state_size: usize,
    expiration_s: u32,
    rng: StdRng,
    stats: StateStats,
}

impl StrawmanStore {
    /// Only `state_size`, `expiration_s`, `algorithm`, `seed` and
    /// `boundary` of the config are used.
    pub fn new(config: &StateManagerConfig) -> Result<Self, StateError> {
        let mut rng = match config.seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_os_rng(),
        };
        let mut key = [0u8; 32];
        let mut iv = [0u8; 4];
        rng.fill(&mut key);
        rng.fill(&mut iv);
        let mut boundary = Boundary::new(config.boundary);
        let ss = config.state_size;
        let buffer = boundary.alloc(ArenaKind::Trusted, (ss + MAC_LEN) as u64)?;
        let alloc = StoreAllocator::new(&mut boundary, ss + MAC_LEN, 1024)?;
        Ok(StrawmanStore {
            boundary,
            sealer: StateSealer::new(config.algorithm, &key, iv),
            alloc,
            entries: HashMap::new(),
            buffer,
            pinned: None,
            state_size: ss,
            expiration_s: config.expiration_s,
            rng,
            stats: StateStats::default(),
        })
    }

    fn home(&self, e: &LkupEntry) -> Region {
        Region::new(e.locator, (self.state_size + MAC_LEN) as u64)
    }

    fn write_back(&mut self) -> Result<(), StateError> {
        let Some(fid) = self.pinned.take() else {
            return Ok(());
        };
        let e = self.entries.get_mut(&fid).expect("pinned flow is tracked");
        e.swap_count = e.swap_count.wrapping_add(1);
        let (count, home) = (e.swap_count, Region::new(e.locator, (self.state_size + MAC_LEN) as u64));
        let ss = self.state_size as u64;
        let state = self.buffer.slice(0, ss);
        let mac = self.sealer.seal_state(&fid, count, self.boundary.bytes_mut(state)?);
        self.stats.seals += 1;
        self.boundary.copy(state, home.slice(0, ss))?;
        self.boundary
            .untrusted_mut(home.slice(ss, MAC_LEN as u64))?
            .copy_from_slice(&mac);
        Ok(())
    }
}

impl FlowStateStore for StrawmanStore {
    fn state_size(&self) -> usize {
        self.state_size
    }

    fn track(&mut self, fid: &FlowId, now_s: u32) -> Result<Tracked<'_>, StateError> {
        let (key, direction) = fid.canonical();
        self.stats.tracks += 1;
        self.stats.cache_misses += 1;
        self.write_back()?;
        let ss = self.state_size;
        let is_new = match self.entries.get_mut(&key) {
            Some(e) => {
                e.last_access = now_s;
                let e = *e;
                let home = self.home(&e);
                self.boundary.check_memory(home)?;
                self.boundary.copy(home, self.buffer)?;
                self.stats.opens += 1;
                let buf = self.boundary.bytes_mut(self.buffer)?;
                let (state, mac) = buf.split_at_mut(ss);
                let mac: [u8; MAC_LEN] = (&*mac).try_into().unwrap();
                if self.sealer.open_state(&key, e.swap_count, state, &mac).is_err() {
                    self.stats.auth_failures += 1;
                    self.entries.remove(&key);
                    self.alloc.free_entry(&mut self.boundary, home)?;
                    return Err(StateError::Auth(key));
                }
                false
            }
            None => {
                let home = self.alloc.alloc(&mut self.boundary)?;
                self.entries.insert(
                    key,
                    LkupEntry {
                        locator: home.base,
                        swap_count: self.rng.random(),
                        last_access: now_s,
                    },
                );
                self.boundary.bytes_mut(self.buffer)?.fill(0);
                self.stats.new_flows += 1;
                true
            }
        };
        self.pinned = Some(key);
        Ok(Tracked {
            state: &mut self.boundary.bytes_mut(self.buffer)?[..ss],
            is_new,
            direction,
        })
    }

    fn terminate(&mut self, fid: &FlowId) -> Result<(), StateError> {
        let key = fid.canonical().0;
        let e = self.entries.remove(&key).ok_or(StateError::NotFound(key))?;
        if self.pinned == Some(key) {
            self.pinned = None;
        }
        let home = self.home(&e);
        self.alloc.free_entry(&mut self.boundary, home)?;
        self.stats.terminated += 1;
        Ok(())
    }

    fn expire(&mut self, now_s: u32) -> usize {
        let timeout = self.expiration_s;
        let mut freed = Vec::new();
        self.entries.retain(|fid, e| {
            let keep = now_s.saturating_sub(e.last_access) <= timeout;
            if !keep {
                freed.push((*fid, e.locator));
            }
            keep
        });
        for (fid, locator) in &freed {
            if self.pinned == Some(*fid) {
                self.pinned = None;
            }
            let home = Region::new(*locator, (self.state_size + MAC_LEN) as u64);
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
        self.entries.len()
    }

    fn flow_ids(&self) -> Vec<FlowId> {
        let mut ids: Vec<_> = self.entries.keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}
