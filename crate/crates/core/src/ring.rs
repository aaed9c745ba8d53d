//! Single-producer/single-consumer rings.
//!
//! [`channel`] builds the ring used by the device: Lamport's algorithm with
//! producer- and consumer-local copies of the opposite index, so the shared
//! control variables are only read when an operation would otherwise fail.
//! [`lamport::channel`] is the same algorithm without the local copies and
//! [`locked::channel`] guards a plain ring with a mutex; both exist for
//! differential tests and the synchronization benchmark.
//!
//! One slot is always left unused to tell a full ring from an empty one, so
//! a ring of size `n` holds `n - 1` items.

use std::cell::UnsafeCell;
use std::mem;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_utils::CachePadded;

pub const DEFAULT_RING_SIZE: usize = 256;

/// Push side of a ring. Slots are written in place.
pub trait RingProducer<T>: Send {
    /// Fill the next free slot with `fill`. Returns `false` when full, in
    /// which case `fill` is not called.
    fn try_push_with<F: FnOnce(&mut T)>(&mut self, fill: F) -> bool;

    fn push(&mut self, item: T) -> Result<(), T> {
        let mut item = Some(item);
        if self.try_push_with(|slot| *slot = item.take().unwrap()) {
            Ok(())
        } else {
            Err(item.unwrap())
        }
    }

    /// Items the ring can hold.
    fn capacity(&self) -> usize;
}

/// Pop side of a ring.
pub trait RingConsumer<T>: Send {
    /// Hand the oldest item to `read`, then release its slot.
    fn try_pop_with<R, F: FnOnce(&mut T) -> R>(&mut self, read: F) -> Option<R>;

    fn pop(&mut self) -> Option<T>
    where
        T: Default,
    {
        self.try_pop_with(mem::take)
    }

    fn occupancy(&self) -> usize;
}

fn ring_size(size: usize) -> usize {
    assert!(
        size >= 2 && size.is_power_of_two(),
        "ring size must be a power of two >= 2, got {size}"
    );
    size
}

struct Shared<T> {
    read_pos: CachePadded<AtomicUsize>,
    write_pos: CachePadded<AtomicUsize>,
    mask: usize,
    slots: Box<[UnsafeCell<T>]>,
}

// Slots are only touched by the single producer (free slots) or the single
// consumer (published slots); the indices hand ownership across.
unsafe impl<T: Send> Sync for Shared<T> {}
unsafe impl<T: Send> Send for Shared<T> {}

impl<T: Default> Shared<T> {
    fn new(size: usize) -> Arc<Self> {
        let size = ring_size(size);
        Arc::new(Shared {
            read_pos: CachePadded::new(AtomicUsize::new(0)),
            write_pos: CachePadded::new(AtomicUsize::new(0)),
            mask: size - 1,
            slots: (0..size).map(|_| UnsafeCell::new(T::default())).collect(),
        })
    }
}

impl<T> Shared<T> {
    fn occupancy(&self) -> usize {
        let w = self.write_pos.load(Ordering::Acquire);
        let r = self.read_pos.load(Ordering::Acquire);
        w.wrapping_sub(r) & self.mask
    }
}

/// Producer half of the cache-friendly lock-free ring.
pub struct Producer<T> {
    shared: Arc<Shared<T>>,
    write: usize,
    cached_read: usize,
}

/// Consumer half of the cache-friendly lock-free ring.
pub struct Consumer<T> {
    shared: Arc<Shared<T>>,
    read: usize,
    cached_write: usize,
}

/// Create a lock-free SPSC ring of `size` slots (power of two).
pub fn channel<T: Default + Send>(size: usize) -> (Producer<T>, Consumer<T>) {
    let shared = Shared::new(size);
    (
        Producer {
            shared: shared.clone(),
            write: 0,
            cached_read: 0,
        },
        Consumer {
            shared,
            read: 0,
            cached_write: 0,
        },
    )
}

impl<T: Send> RingProducer<T> for Producer<T> {
    #[inline]
    fn try_push_with<F: FnOnce(&mut T)>(&mut self, fill: F) -> bool {
        let next = (self.write + 1) & self.shared.mask;
        if next == self.cached_read {
            self.cached_read = self.shared.read_pos.load(Ordering::Acquire);
            if next == self.cached_read {
                return false;
            }
        }
        // SAFETY: slot `write` is free (not yet published) and only the
        // producer writes it.
        fill(unsafe { &mut *self.shared.slots[self.write].get() });
        self.shared.write_pos.store(next, Ordering::Release);
        self.write = next;
        true
    }

    fn capacity(&self) -> usize {
        self.shared.mask
    }
}

impl<T: Send> RingConsumer<T> for Consumer<T> {
    #[inline]
    fn try_pop_with<R, F: FnOnce(&mut T) -> R>(&mut self, read: F) -> Option<R> {
        if self.read == self.cached_write {
            self.cached_write = self.shared.write_pos.load(Ordering::Acquire);
            if self.read == self.cached_write {
                return None;
            }
        }
        // SAFETY: slot `read` was published by the producer's release store
        // and is not reused until read_pos moves past it.
        let out = read(unsafe { &mut *self.shared.slots[self.read].get() });
        self.read = (self.read + 1) & self.shared.mask;
        self.shared.read_pos.store(self.read, Ordering::Release);
        Some(out)
    }

    fn occupancy(&self) -> usize {
        self.shared.occupancy()
    }
}

impl<T> Producer<T> {
    pub fn occupancy(&self) -> usize {
        self.shared.occupancy()
    }
}

/// Lamport's ring without local index copies: both shared indices are read
/// on every operation.
pub mod lamport {
    use super::*;

    pub struct Producer<T>(Arc<Shared<T>>);
    pub struct Consumer<T>(Arc<Shared<T>>);

    pub fn channel<T: Default + Send>(size: usize) -> (Producer<T>, Consumer<T>) {
        let shared = Shared::new(size);
        (Producer(shared.clone()), Consumer(shared))
    }

    impl<T: Send> RingProducer<T> for Producer<T> {
        fn try_push_with<F: FnOnce(&mut T)>(&mut self, fill: F) -> bool {
            let s = &self.0;
            let w = s.write_pos.load(Ordering::Relaxed);
            let next = (w + 1) & s.mask;
            if next == s.read_pos.load(Ordering::Acquire) {
                return false;
            }
            // SAFETY: as for the cache-friendly ring.
            fill(unsafe { &mut *s.slots[w].get() });
            s.write_pos.store(next, Ordering::Release);
            true
        }

        fn capacity(&self) -> usize {
            self.0.mask
        }
    }

    impl<T: Send> RingConsumer<T> for Consumer<T> {
        fn try_pop_with<R, F: FnOnce(&mut T) -> R>(&mut self, read: F) -> Option<R> {
            let s = &self.0;
            let r = s.read_pos.load(Ordering::Relaxed);
            if r == s.write_pos.load(Ordering::Acquire) {
                return None;
            }
            // SAFETY: as for the cache-friendly ring.
            let out = read(unsafe { &mut *s.slots[r].get() });
            s.read_pos.store((r + 1) & s.mask, Ordering::Release);
            Some(out)
        }

        fn occupancy(&self) -> usize {
            self.0.occupancy()
        }
    }
}

/// Mutex-guarded ring.
pub mod locked {
    use super::*;
    use std::sync::{Mutex, MutexGuard};

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum LockMode {
        /// Block on the mutex when contended.
        Block,
        /// Spin on `try_lock` until acquired.
        Spin,
    }

    struct Inner<T> {
        slots: Box<[T]>,
        read: usize,
        write: usize,
    }

    struct Locked<T> {
        inner: Mutex<Inner<T>>,
        mask: usize,
        mode: LockMode,
    }

    impl<T> Locked<T> {
        fn lock(&self) -> MutexGuard<'_, Inner<T>> {
            match self.mode {
                LockMode::Block => self.inner.lock().unwrap(),
                LockMode::Spin => loop {
                    match self.inner.try_lock() {
                        Ok(g) => break g,
                        Err(std::sync::TryLockError::WouldBlock) => std::hint::spin_loop(),
                        Err(std::sync::TryLockError::Poisoned(e)) => panic!("{e}"),
                    }
                },
            }
        }
    }

    pub struct Producer<T>(Arc<Locked<T>>);
    pub struct Consumer<T>(Arc<Locked<T>>);

    pub fn channel<T: Default + Send>(size: usize, mode: LockMode) -> (Producer<T>, Consumer<T>) {
        let size = ring_size(size);
        let l = Arc::new(Locked {
            inner: Mutex::new(Inner {
                slots: (0..size).map(|_| T::default()).collect(),
                read: 0,
                write: 0,
            }),
            mask: size - 1,
            mode,
        });
        (Producer(l.clone()), Consumer(l))
    }

    impl<T: Send> RingProducer<T> for Producer<T> {
        fn try_push_with<F: FnOnce(&mut T)>(&mut self, fill: F) -> bool {
            let mask = self.0.mask;
            let mut g = self.0.lock();
            let next = (g.write + 1) & mask;
            if next == g.read {
                return false;
            }
            let w = g.write;
            fill(&mut g.slots[w]);
            g.write = next;
            true
        }

        fn capacity(&self) -> usize {
            self.0.mask
        }
    }

    impl<T: Send> RingConsumer<T> for Consumer<T> {
        fn try_pop_with<R, F: FnOnce(&mut T) -> R>(&mut self, read: F) -> Option<R> {
            let mask = self.0.mask;
            let mut g = self.0.lock();
            if g.read == g.write {
                return None;
            }
            let r = g.read;
            let out = read(&mut g.slots[r]);
            g.read = (r + 1) & mask;
            Some(out)
        }

        fn occupancy(&self) -> usize {
            let g = self.0.lock();
            g.write.wrapping_sub(g.read) & self.0.mask
        }
    }
}
