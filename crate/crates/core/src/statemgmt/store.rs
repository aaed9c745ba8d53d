//! Free-list allocator for `flow_store` entries.
//!
//! Entries live in the untrusted arena; an unallocated entry keeps the
//! address of the next free entry in its first eight bytes. Only the head
//! and tail addresses are held on the trusted side.

use crate::boundary::{ArenaKind, Boundary, Direction, Region};

use super::StateError;

const NIL: u64 = u64::MAX;

#[derive(Debug)]
pub struct StoreAllocator {
    entry_size: u64,
    head: u64,
    tail: u64,
    free: usize,
    total: usize,
    grow_by: usize,
}

impl StoreAllocator {
    /// Preallocate `prealloc` entries of `entry_size` bytes.
    pub fn new(boundary: &mut Boundary, entry_size: usize, prealloc: usize) -> Result<Self, StateError> {
        assert!(entry_size >= 8, "store entries hold an 8-byte free-list link");
        let mut a = StoreAllocator {
            entry_size: entry_size as u64,
            head: NIL,
            tail: NIL,
            free: 0,
            total: 0,
            grow_by: prealloc.max(1),
        };
        a.add_entries(boundary, prealloc)?;
        Ok(a)
    }

    pub fn entry_size(&self) -> usize {
        self.entry_size as usize
    }

    pub fn free_entries(&self) -> usize {
        self.free
    }

    pub fn total_entries(&self) -> usize {
        self.total
    }

    fn add_entries(&mut self, boundary: &mut Boundary, n: usize) -> Result<(), StateError> {
        if n == 0 {
            return Ok(());
        }
        let pool = boundary.alloc(ArenaKind::Untrusted, self.entry_size * n as u64)?;
        for i in 0..n as u64 {
            self.free_entry(boundary, pool.slice(i * self.entry_size, self.entry_size))?;
        }
        self.total += n;
        Ok(())
    }

    /// Pop the head of the free list, growing the pool by one crossing if
    /// it is empty. The returned region has passed the memory check.
    pub fn alloc(&mut self, boundary: &mut Boundary) -> Result<Region, StateError> {
        if self.head == NIL {
            let n = self.grow_by.max(self.total);
            boundary.crossing(Direction::Out, 0);
            self.add_entries(boundary, n)?;
        }
        let region = Region::new(self.head, self.entry_size);
        boundary.check_memory(region)?;
        let link = &boundary.bytes(region)?[..8];
        let next = u64::from_le_bytes(link.try_into().unwrap());
        self.head = next;
        if next == NIL {
            self.tail = NIL;
        }
        self.free -= 1;
        Ok(region)
    }

    /// Return an entry to the tail of the free list.
    pub fn free_entry(&mut self, boundary: &mut Boundary, region: Region) -> Result<(), StateError> {
        debug_assert_eq!(region.len, self.entry_size);
        boundary.untrusted_mut(region)?[..8].copy_from_slice(&NIL.to_le_bytes());
        if self.tail == NIL {
            self.head = region.base;
        } else {
            let tail = Region::new(self.tail, self.entry_size);
            boundary.untrusted_mut(tail)?[..8].copy_from_slice(&region.base.to_le_bytes());
        }
        self.tail = region.base;
        self.free += 1;
        Ok(())
    }
}
