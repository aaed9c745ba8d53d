//! Trusted time derived from tunneled packet timestamps.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

/// Wall-clock microseconds since the Unix epoch.
pub fn wall_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

/// Microsecond clock advanced by every data frame to
/// `T_pkt + t_off + t_rtd / 2`, never moving backwards.
#[derive(Debug)]
pub struct TrustedClock {
    now: AtomicU64,
    rtt: AtomicU64,
    t_off: i64,
}

impl TrustedClock {
    pub fn new(t_off_us: i64) -> Self {
        TrustedClock {
            now: AtomicU64::new(0),
            rtt: AtomicU64::new(0),
            t_off: t_off_us,
        }
    }

    /// Current time in μs.
    pub fn now(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }

    /// Current time in whole seconds, the granularity flow states use.
    pub fn now_s(&self) -> u32 {
        (self.now() / 1_000_000) as u32
    }

    /// Latest round-trip estimate in μs.
    pub fn rtt(&self) -> u64 {
        self.rtt.load(Ordering::Relaxed)
    }

    pub fn set_rtt(&self, rtt_us: u64) {
        self.rtt.store(rtt_us, Ordering::Relaxed);
    }

    /// Feed a packet timestamp; returns the clock value afterwards.
    pub fn update(&self, t_pkt: u64) -> u64 {
        let computed = (t_pkt as i128 + self.t_off as i128 + (self.rtt() / 2) as i128)
            .clamp(0, u64::MAX as i128) as u64;
        let prev = self.now.fetch_max(computed, Ordering::AcqRel);
        prev.max(computed)
    }
}
