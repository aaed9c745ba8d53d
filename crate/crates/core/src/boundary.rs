//! Simulated enclave boundary.
//!
//! Two byte arenas stand in for enclave memory (trusted) and ordinary process
//! memory (untrusted). Handles are `(base, len)` pairs in a single simulated
//! address space where the untrusted arena sits directly below the trusted
//! one, so a region can be crafted to straddle the two.
//!
//! Everything that receives a region from the untrusted side is expected to
//! run [`Boundary::check_memory`] before touching it.

use std::fmt;
use std::time::{Duration, Instant};

use thiserror::Error;

/// Default trusted arena size, mirroring the usable EPC of first-generation
/// SGX parts.
pub const DEFAULT_TRUSTED_CAPACITY: u64 = 128 << 20;
/// Logical limit on the untrusted arena. Backing memory is only committed as
/// allocations happen.
pub const DEFAULT_UNTRUSTED_CAPACITY: u64 = 16 << 30;

const UNTRUSTED_BASE: u64 = 0x1000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArenaKind {
    Trusted,
    Untrusted,
}

impl fmt::Display for ArenaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArenaKind::Trusted => f.write_str("trusted"),
            ArenaKind::Untrusted => f.write_str("untrusted"),
        }
    }
}

/// A span of simulated memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub base: u64,
    pub len: u64,
}

impl Region {
    pub const fn new(base: u64, len: u64) -> Self {
        Region { base, len }
    }

    /// One past the last byte, or `None` if the region wraps the address space.
    pub fn end(&self) -> Option<u64> {
        self.base.checked_add(self.len)
    }

    /// Sub-region at `offset` of `len` bytes. Panics if it would leave `self`.
    pub fn slice(&self, offset: u64, len: u64) -> Region {
        assert!(offset + len <= self.len, "sub-region out of bounds");
        Region::new(self.base + offset, len)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundaryError {
    #[error("zero-sized allocation")]
    ZeroSize,
    #[error("{kind} arena exhausted: requested {requested} bytes, {available} available")]
    CapacityExhausted {
        kind: ArenaKind,
        requested: u64,
        available: u64,
    },
    #[error("memory safety violation: region {base:#x}+{len} is not entirely untrusted")]
    Violation { base: u64, len: u64 },
    #[error("region {base:#x}+{len} is not backed by the {kind} arena")]
    Unmapped { kind: ArenaKind, base: u64, len: u64 },
}

/// Bump-allocated byte pool.
#[derive(Debug)]
pub struct Arena {
    kind: ArenaKind,
    base: u64,
    capacity: u64,
    bytes: Vec<u8>,
}

impl Arena {
    fn new(kind: ArenaKind, base: u64, capacity: u64) -> Self {
        Arena {
            kind,
            base,
            capacity,
            bytes: Vec::new(),
        }
    }

    pub fn kind(&self) -> ArenaKind {
        self.kind
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Bytes currently allocated.
    pub fn used(&self) -> u64 {
        self.bytes.len() as u64
    }

    /// Whether `region` lies inside this arena's address range.
    pub fn contains(&self, region: Region) -> bool {
        match region.end() {
            Some(end) => region.base >= self.base && end <= self.base + self.capacity,
            None => false,
        }
    }

    fn alloc(&mut self, size: u64) -> Result<Region, BoundaryError> {
        if size == 0 {
            return Err(BoundaryError::ZeroSize);
        }
        let available = self.capacity - self.used();
        if size > available {
            return Err(BoundaryError::CapacityExhausted {
                kind: self.kind,
                requested: size,
                available,
            });
        }
        let region = Region::new(self.base + self.used(), size);
        self.bytes.resize(self.bytes.len() + size as usize, 0);
        Ok(region)
    }

    fn range(&self, region: Region) -> Result<std::ops::Range<usize>, BoundaryError> {
        let unmapped = BoundaryError::Unmapped {
            kind: self.kind,
            base: region.base,
            len: region.len,
        };
        let end = region.end().ok_or_else(|| unmapped.clone())?;
        if region.base < self.base || end > self.base + self.used() {
            return Err(unmapped);
        }
        let start = (region.base - self.base) as usize;
        Ok(start..start + region.len as usize)
    }

    fn bytes(&self, region: Region) -> Result<&[u8], BoundaryError> {
        let r = self.range(region)?;
        Ok(&self.bytes[r])
    }

    fn bytes_mut(&mut self, region: Region) -> Result<&mut [u8], BoundaryError> {
        let r = self.range(region)?;
        Ok(&mut self.bytes[r])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Untrusted to trusted (e.g. receiving records).
    In,
    /// Trusted to untrusted.
    Out,
}

/// OCALL instrumentation. All counters only grow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CrossingStats {
    pub ocall_count: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryConfig {
    pub trusted_capacity_bytes: u64,
    pub untrusted_capacity_bytes: u64,
    pub crossing_delay_ns: u64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            trusted_capacity_bytes: DEFAULT_TRUSTED_CAPACITY,
            untrusted_capacity_bytes: DEFAULT_UNTRUSTED_CAPACITY,
            crossing_delay_ns: 0,
        }
    }
}

/// The pair of arenas plus crossing accounting.
#[derive(Debug)]
pub struct Boundary {
    trusted: Arena,
    untrusted: Arena,
    stats: CrossingStats,
    crossing_delay: Duration,
}

impl Default for Boundary {
    fn default() -> Self {
        Boundary::new(BoundaryConfig::default())
    }
}

impl Boundary {
    pub fn new(config: BoundaryConfig) -> Self {
        let untrusted = Arena::new(
            ArenaKind::Untrusted,
            UNTRUSTED_BASE,
            config.untrusted_capacity_bytes,
        );
        // Trusted range starts exactly where untrusted ends.
        let trusted = Arena::new(
            ArenaKind::Trusted,
            UNTRUSTED_BASE + config.untrusted_capacity_bytes,
            config.trusted_capacity_bytes,
        );
        Boundary {
            trusted,
            untrusted,
            stats: CrossingStats::default(),
            crossing_delay: Duration::from_nanos(config.crossing_delay_ns),
        }
    }

    pub fn arena(&self, kind: ArenaKind) -> &Arena {
        match kind {
            ArenaKind::Trusted => &self.trusted,
            ArenaKind::Untrusted => &self.untrusted,
        }
    }

    fn arena_mut(&mut self, kind: ArenaKind) -> &mut Arena {
        match kind {
            ArenaKind::Trusted => &mut self.trusted,
            ArenaKind::Untrusted => &mut self.untrusted,
        }
    }

    pub fn alloc(&mut self, kind: ArenaKind, size: u64) -> Result<Region, BoundaryError> {
        self.arena_mut(kind).alloc(size)
    }

    /// Ok iff `region` lies entirely within the untrusted arena.
    pub fn check_memory(&self, region: Region) -> Result<(), BoundaryError> {
        if self.untrusted.contains(region) {
            Ok(())
        } else {
            Err(BoundaryError::Violation {
                base: region.base,
                len: region.len,
            })
        }
    }

    /// Which arena holds `region`, if it sits wholly inside one.
    pub fn classify(&self, region: Region) -> Option<ArenaKind> {
        if self.untrusted.contains(region) {
            Some(ArenaKind::Untrusted)
        } else if self.trusted.contains(region) {
            Some(ArenaKind::Trusted)
        } else {
            None
        }
    }

    pub fn bytes(&self, region: Region) -> Result<&[u8], BoundaryError> {
        match self.classify(region) {
            Some(kind) => self.arena(kind).bytes(region),
            None => Err(BoundaryError::Violation {
                base: region.base,
                len: region.len,
            }),
        }
    }

    pub fn bytes_mut(&mut self, region: Region) -> Result<&mut [u8], BoundaryError> {
        match self.classify(region) {
            Some(kind) => self.arena_mut(kind).bytes_mut(region),
            None => Err(BoundaryError::Violation {
                base: region.base,
                len: region.len,
            }),
        }
    }

    /// Mutable view for code running on the untrusted side. Refuses trusted
    /// handles outright.
    pub fn untrusted_mut(&mut self, region: Region) -> Result<&mut [u8], BoundaryError> {
        self.check_memory(region)?;
        self.untrusted.bytes_mut(region)
    }

    /// Copy between two regions of (possibly) different arenas.
    pub fn copy(&mut self, src: Region, dst: Region) -> Result<(), BoundaryError> {
        assert_eq!(src.len, dst.len, "copy between regions of unequal length");
        let src_kind = self.classify(src);
        let dst_kind = self.classify(dst);
        match (src_kind, dst_kind) {
            (Some(a), Some(b)) if a != b => {
                let (from, to) = match a {
                    ArenaKind::Trusted => (&self.trusted, &mut self.untrusted),
                    ArenaKind::Untrusted => (&self.untrusted, &mut self.trusted),
                };
                to.bytes_mut(dst)?.copy_from_slice(from.bytes(src)?);
                Ok(())
            }
            (Some(a), Some(_)) => {
                let arena = self.arena_mut(a);
                let s = arena.range(src)?;
                let d = arena.range(dst)?;
                arena.bytes.copy_within(s, d.start);
                Ok(())
            }
            _ => Err(BoundaryError::Violation {
                base: src.base,
                len: src.len,
            }),
        }
    }

    /// Record one boundary crossing carrying `bytes` bytes and apply the
    /// configured delay.
    pub fn crossing(&mut self, direction: Direction, bytes: usize) {
        self.stats.ocall_count += 1;
        match direction {
            Direction::In => self.stats.bytes_in += bytes as u64,
            Direction::Out => self.stats.bytes_out += bytes as u64,
        }
        if !self.crossing_delay.is_zero() {
            let until = Instant::now() + self.crossing_delay;
            while Instant::now() < until {
                std::hint::spin_loop();
            }
        }
    }

    pub fn stats(&self) -> CrossingStats {
        self.stats
    }

    pub fn usage(&self, kind: ArenaKind) -> u64 {
        self.arena(kind).used()
    }
}
