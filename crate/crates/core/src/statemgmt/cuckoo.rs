//! Bucketized cuckoo hash table keyed by [`FlowId`]: two keyed hash
//! functions, four slots per bucket.
//!
//! Insertion searches breadth-first for a displacement path to a free slot
//! and only moves entries once a path is found, so a failed insert leaves
//! the table untouched and reports [`NeedsResize`].

use std::collections::VecDeque;

use ahash::RandomState;

use crate::packet::FlowId;

pub const SLOTS_PER_BUCKET: usize = 4;
/// Upper bound on displacement candidates examined per insert.
pub const MAX_DISPLACEMENTS: usize = 500;
/// Load above which [`CuckooTable::insert_growing`] doubles the table up
/// front instead of paying for ever longer displacement searches.
pub const GROW_LOAD: f64 = 0.85;

/// Insert failed within the displacement budget; the rejected entry is
/// handed back so the caller can grow the table and retry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeedsResize<V>(pub FlowId, pub V);

impl<V> std::fmt::Display for NeedsResize<V> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cuckoo table needs to grow to place {}", self.0)
    }
}

#[derive(Clone)]
struct Bucket<V> {
    slots: [Option<(FlowId, V)>; SLOTS_PER_BUCKET],
}

impl<V> Default for Bucket<V> {
    fn default() -> Self {
        Bucket {
            slots: [None, None, None, None],
        }
    }
}

pub struct CuckooTable<V> {
    buckets: Vec<Bucket<V>>,
    mask: usize,
    hashers: [RandomState; 2],
    seed: u64,
    len: usize,
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<V> CuckooTable<V> {
    /// Table with at least `min_slots` slots, hash keys derived from `seed`.
    pub fn with_seed(min_slots: usize, seed: u64) -> Self {
        let buckets = min_slots
            .div_ceil(SLOTS_PER_BUCKET)
            .max(2)
            .next_power_of_two();
        let mut s = seed;
        let mut h = || RandomState::with_seeds(splitmix(&mut s), splitmix(&mut s), splitmix(&mut s), splitmix(&mut s));
        let hashers = [h(), h()];
        CuckooTable {
            buckets: (0..buckets).map(|_| Bucket::default()).collect(),
            mask: buckets - 1,
            hashers,
            seed,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Total slots.
    pub fn capacity(&self) -> usize {
        self.buckets.len() * SLOTS_PER_BUCKET
    }

    pub fn load_factor(&self) -> f64 {
        self.len as f64 / self.capacity() as f64
    }

    #[inline]
    fn bucket_of(&self, which: usize, key: &FlowId) -> usize {
        (self.hashers[which].hash_one(key.to_bytes()) as usize) & self.mask
    }

    #[inline]
    fn find(&self, key: &FlowId) -> Option<(usize, usize)> {
        let b1 = self.bucket_of(0, key);
        if let Some(s) = self.find_in(b1, key) {
            return Some((b1, s));
        }
        let b2 = self.bucket_of(1, key);
        self.find_in(b2, key).map(|s| (b2, s))
    }

    #[inline]
    fn find_in(&self, b: usize, key: &FlowId) -> Option<usize> {
        self.buckets[b]
            .slots
            .iter()
            .position(|s| matches!(s, Some((k, _)) if k == key))
    }

    pub fn get(&self, key: &FlowId) -> Option<&V> {
        let (b, s) = self.find(key)?;
        self.buckets[b].slots[s].as_ref().map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, key: &FlowId) -> Option<&mut V> {
        let (b, s) = self.find(key)?;
        self.buckets[b].slots[s].as_mut().map(|(_, v)| v)
    }

    pub fn contains(&self, key: &FlowId) -> bool {
        self.find(key).is_some()
    }

    pub fn remove(&mut self, key: &FlowId) -> Option<V> {
        let (b, s) = self.find(key)?;
        self.len -= 1;
        self.buckets[b].slots[s].take().map(|(_, v)| v)
    }

    /// Insert or replace. Returns the previous value for `key`, if any.
    pub fn insert(&mut self, key: FlowId, value: V) -> Result<Option<V>, NeedsResize<V>> {
        if let Some(v) = self.get_mut(&key) {
            return Ok(Some(std::mem::replace(v, value)));
        }
        let b1 = self.bucket_of(0, &key);
        let b2 = self.bucket_of(1, &key);
        for b in [b1, b2] {
            if let Some(s) = self.free_slot(b) {
                self.buckets[b].slots[s] = Some((key, value));
                self.len += 1;
                return Ok(None);
            }
        }
        let Some((b, s)) = self.make_room(b1, b2) else {
            return Err(NeedsResize(key, value));
        };
        self.buckets[b].slots[s] = Some((key, value));
        self.len += 1;
        Ok(None)
    }

    fn free_slot(&self, b: usize) -> Option<usize> {
        self.buckets[b].slots.iter().position(Option::is_none)
    }

    fn alternate(&self, b: usize, key: &FlowId) -> usize {
        let h1 = self.bucket_of(0, key);
        if h1 == b {
            self.bucket_of(1, key)
        } else {
            h1
        }
    }

    /// Breadth-first search for a displacement path; on success, shift the
    /// entries along it and return the freed slot in `b1` or `b2`.
    fn make_room(&mut self, b1: usize, b2: usize) -> Option<(usize, usize)> {
        struct Node {
            bucket: usize,
            parent: Option<(usize, usize)>, // (node index, slot in parent bucket)
        }
        let mut nodes = vec![
            Node {
                bucket: b1,
                parent: None,
            },
            Node {
                bucket: b2,
                parent: None,
            },
        ];
        let mut queue: VecDeque<usize> = VecDeque::from([0, 1]);
        let mut examined = 0;
        let mut found = None;
        'search: while let Some(ni) = queue.pop_front() {
            let bucket = nodes[ni].bucket;
            for s in 0..SLOTS_PER_BUCKET {
                let (key, _) = self.buckets[bucket].slots[s].as_ref().expect("full bucket");
                let alt = self.alternate(bucket, key);
                if alt == bucket {
                    continue;
                }
                examined += 1;
                nodes.push(Node {
                    bucket: alt,
                    parent: Some((ni, s)),
                });
                let child = nodes.len() - 1;
                if let Some(free) = self.free_slot(alt) {
                    found = Some((child, free));
                    break 'search;
                }
                if examined >= MAX_DISPLACEMENTS {
                    break 'search;
                }
                queue.push_back(child);
            }
        }
        let (mut ni, mut free) = found?;
        // walk back, moving each parent's occupant into the hole below it
        while let Some((pi, ps)) = nodes[ni].parent {
            let from = nodes[pi].bucket;
            let to = nodes[ni].bucket;
            let entry = self.buckets[from].slots[ps].take();
            debug_assert!(self.buckets[to].slots[free].is_none());
            self.buckets[to].slots[free] = entry;
            ni = pi;
            free = ps;
        }
        Some((nodes[ni].bucket, free))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FlowId, &V)> {
        self.buckets
            .iter()
            .flat_map(|b| b.slots.iter().flatten().map(|(k, v)| (k, v)))
    }

    /// Keep entries for which `keep` returns true; removed values are handed
    /// to `removed`.
    pub fn retain<F, R>(&mut self, mut keep: F, mut removed: R)
    where
        F: FnMut(&FlowId, &mut V) -> bool,
        R: FnMut(FlowId, V),
    {
        for b in &mut self.buckets {
            for slot in &mut b.slots {
                let drop = match slot {
                    Some((k, v)) => !keep(k, v),
                    None => false,
                };
                if drop {
                    let (k, v) = slot.take().unwrap();
                    self.len -= 1;
                    removed(k, v);
                }
            }
        }
    }

    /// Insert, growing the table as often as needed.
    pub fn insert_growing(&mut self, key: FlowId, value: V) -> Option<V> {
        if (self.len + 1) as f64 > GROW_LOAD * self.capacity() as f64 && !self.contains(&key) {
            self.grow();
        }
        let mut entry = (key, value);
        loop {
            match self.insert(entry.0, entry.1) {
                Ok(prev) => return prev,
                Err(NeedsResize(k, v)) => {
                    self.grow();
                    entry = (k, v);
                }
            }
        }
    }

    /// Double the bucket count and rehash everything with fresh hash keys.
    pub fn grow(&mut self) {
        let mut slots = self.capacity() * 2;
        let mut seed = self.seed.wrapping_add(0x51ed);
        let mut entries = self.drain();
        loop {
            let mut t = CuckooTable::with_seed(slots, seed);
            let mut rest = entries.into_iter();
            let mut failed = None;
            for (k, v) in rest.by_ref() {
                if let Err(NeedsResize(k, v)) = t.insert(k, v) {
                    failed = Some((k, v));
                    break;
                }
            }
            match failed {
                None => {
                    *self = t;
                    return;
                }
                Some(e) => {
                    entries = t.drain();
                    entries.push(e);
                    entries.extend(rest);
                    slots *= 2;
                    seed = seed.wrapping_add(0x51ed);
                }
            }
        }
    }

    fn drain(&mut self) -> Vec<(FlowId, V)> {
        self.len = 0;
        self.buckets
            .iter_mut()
            .flat_map(|b| b.slots.iter_mut().filter_map(Option::take))
            .collect()
    }
}

/// Fill a fresh table of `slots` slots with random flow ids until the first
/// insert needs a resize; returns the load factor reached.
pub fn fill_until_resize(slots: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut t: CuckooTable<()> = CuckooTable::with_seed(slots, rng.random());
    loop {
        let fid = FlowId {
            src_ip: rng.random(),
            dst_ip: rng.random(),
            src_port: rng.random(),
            dst_port: rng.random(),
            proto: 6,
        };
        if t.contains(&fid) {
            continue;
        }
        if t.insert(fid, ()).is_err() || t.len() == t.capacity() {
            return t.load_factor();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::HashMap;

    fn rand_fid(rng: &mut impl Rng, space: u32) -> FlowId {
        let x = rng.random_range(0..space);
        FlowId {
            src_ip: x.to_be_bytes(),
            dst_ip: [10, 0, 0, 1],
            src_port: (x % 65536) as u16,
            dst_port: 80,
            proto: 6,
        }
    }

    #[test]
    fn insert_lookup_remove() {
        let mut t = CuckooTable::with_seed(16, 1);
        let f = FlowId::default();
        assert_eq!(t.insert(f, 5u32).unwrap(), None);
        assert_eq!(t.get(&f), Some(&5));
        assert_eq!(t.insert(f, 6).unwrap(), Some(5));
        assert_eq!(t.len(), 1);
        assert_eq!(t.remove(&f), Some(6));
        assert_eq!(t.get(&f), None);
        assert!(t.is_empty());
    }

    #[test]
    fn differential_against_hashmap() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let mut t = CuckooTable::with_seed(64, 9);
        let mut m = HashMap::new();
        for i in 0..100_000u64 {
            let f = rand_fid(&mut rng, 5000);
            match rng.random_range(0..3) {
                0 => assert_eq!(t.insert_growing(f, i), m.insert(f, i)),
                1 => assert_eq!(t.remove(&f), m.remove(&f)),
                _ => assert_eq!(t.get(&f), m.get(&f)),
            }
            assert_eq!(t.len(), m.len());
        }
        let mut all: Vec<_> = t.iter().map(|(k, v)| (*k, *v)).collect();
        let mut want: Vec<_> = m.into_iter().collect();
        all.sort();
        want.sort();
        assert_eq!(all, want);
    }

    #[test]
    fn failed_insert_leaves_table_intact() {
        let mut t = CuckooTable::with_seed(8, 2);
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        let mut inserted = Vec::new();
        loop {
            let f = rand_fid(&mut rng, u32::MAX);
            match t.insert(f, 0u8) {
                Ok(_) => inserted.push(f),
                Err(NeedsResize(k, _)) => {
                    assert_eq!(k, f);
                    break;
                }
            }
        }
        assert_eq!(t.len(), inserted.len());
        assert!(inserted.iter().all(|f| t.contains(f)));
        t.grow();
        assert!(inserted.iter().all(|f| t.contains(f)));
        assert_eq!(t.len(), inserted.len());
    }

    #[test]
    fn retain_reports_removed() {
        let mut t = CuckooTable::with_seed(64, 5);
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        for i in 0..40u32 {
            t.insert_growing(rand_fid(&mut rng, u32::MAX), i);
        }
        let mut gone = Vec::new();
        t.retain(|_, v| *v % 2 == 0, |_, v| gone.push(v));
        assert_eq!(gone.len(), 20);
        assert_eq!(t.len(), 20);
        assert!(gone.iter().all(|v| v % 2 == 1));
    }

    #[test]
    fn reaches_high_load() {
        let lf = fill_until_resize(1 << 14, 77);
        assert!(lf >= 0.93, "load factor {lf}");
    }
}
