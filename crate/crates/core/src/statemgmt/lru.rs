//! The trusted `flow_cache`: a fixed slab of state slots threaded on an LRU
//! list.

use crate::boundary::{ArenaKind, Boundary, BoundaryError, Region};
use crate::packet::FlowId;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Meta {
    prev: u32,
    next: u32,
    // Back-reference to the lookup entry, by key. Cuckoo displacement moves
    // lookup entries, so an address would go stale.
    owner: Option<FlowId>,
}

#[derive(Debug)]
pub struct FlowCache {
    slab: Region,
    state_size: u64,
    meta: Vec<Meta>,
    head: u32,
    tail: u32,
    free: Vec<u32>,
    len: usize,
}

impl FlowCache {
    pub fn new(boundary: &mut Boundary, capacity: usize, state_size: usize) -> Result<Self, BoundaryError> {
        let slab = boundary.alloc(ArenaKind::Trusted, (capacity * state_size) as u64)?;
        Ok(FlowCache {
            slab,
            state_size: state_size as u64,
            meta: vec![
                Meta {
                    prev: NONE,
                    next: NONE,
                    owner: None
                };
                capacity
            ],
            head: NONE,
            tail: NONE,
            free: (0..capacity as u32).rev().collect(),
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.meta.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn state_region(&self, slot: u32) -> Region {
        self.slab.slice(slot as u64 * self.state_size, self.state_size)
    }

    /// Slot whose state lives at `addr`.
    pub fn slot_at(&self, addr: u64) -> u32 {
        debug_assert!(addr >= self.slab.base && addr < self.slab.base + self.slab.len);
        ((addr - self.slab.base) / self.state_size) as u32
    }

    pub fn owner(&self, slot: u32) -> Option<FlowId> {
        self.meta[slot as usize].owner
    }

    /// Least recently used occupied slot.
    pub fn lru(&self) -> Option<u32> {
        (self.tail != NONE).then_some(self.tail)
    }

    pub fn take_free(&mut self) -> Option<u32> {
        self.free.pop()
    }

    fn unlink(&mut self, slot: u32) {
        let Meta { prev, next, .. } = self.meta[slot as usize];
        if prev != NONE {
            self.meta[prev as usize].next = next;
        } else {
            self.head = next;
        }
        if next != NONE {
            self.meta[next as usize].prev = prev;
        } else {
            self.tail = prev;
        }
    }

    fn push_front(&mut self, slot: u32) {
        let m = &mut self.meta[slot as usize];
        m.prev = NONE;
        m.next = self.head;
        if self.head != NONE {
            self.meta[self.head as usize].prev = slot;
        } else {
            self.tail = slot;
        }
        self.head = slot;
    }

    /// Make `slot` the most recently used.
    pub fn raise(&mut self, slot: u32) {
        if self.head != slot {
            self.unlink(slot);
            self.push_front(slot);
        }
    }

    /// Bind a slot (obtained from `take_free` or `vacate`) to `fid` at the
    /// front of the list.
    pub fn occupy(&mut self, slot: u32, fid: FlowId) {
        debug_assert!(self.meta[slot as usize].owner.is_none());
        self.meta[slot as usize].owner = Some(fid);
        self.len += 1;
        self.push_front(slot);
    }

    /// Detach an occupied slot without returning it to the free list.
    pub fn vacate(&mut self, slot: u32) -> FlowId {
        self.unlink(slot);
        self.len -= 1;
        self.meta[slot as usize].owner.take().expect("vacating an empty slot")
    }

    /// Detach an occupied slot, zero its state and free it.
    pub fn release(&mut self, boundary: &mut Boundary, slot: u32) -> Result<FlowId, BoundaryError> {
        let fid = self.vacate(slot);
        boundary.bytes_mut(self.state_region(slot))?.fill(0);
        self.free.push(slot);
        Ok(fid)
    }

    /// Occupied slots from most to least recently used.
    pub fn iter_mru(&self) -> impl Iterator<Item = (u32, FlowId)> + '_ {
        let mut cur = self.head;
        std::iter::from_fn(move || {
            if cur == NONE {
                return None;
            }
            let s = cur;
            cur = self.meta[s as usize].next;
            Some((s, self.meta[s as usize].owner.expect("listed slot is occupied")))
        })
    }
}
