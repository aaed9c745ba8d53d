//! The device side of the tunnel: a virtual NIC whose core driver moves
//! sealed records between the link and packet rings, and whose poll driver
//! hands packets to the network function.
//!
//! ```text
//!  link ──► RX loop ──► rx ring(s) ──► read_pkt ─┐
//!                                                NF
//!  link ◄── TX loop ◄── tx ring   ◄── write_pkt ◄┘
//! ```

mod clock;
mod driver;
mod rss;

use std::io;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crossbeam_utils::Backoff;
use thiserror::Error;

use crate::boundary::{BoundaryConfig, BoundaryError};
use crate::link::Endpoint;
use crate::ring::{self, Consumer, Producer, RingConsumer, RingProducer, DEFAULT_RING_SIZE};
use crate::wire::{ChannelKeys, PktInfo, WireError, MAX_PKT_LEN};

pub use clock::{wall_us, TrustedClock};
pub use driver::{LinkRx, LinkTx, UntrustedRx, UntrustedTx};
pub use rss::rss_select;

use driver::{RxDriver, TxDriver};

pub const DEFAULT_BATCH_SIZE: usize = 10;

#[derive(Debug, Clone)]
pub struct EtapConfig {
    pub ring_size: usize,
    pub batch_size: usize,
    pub num_rx_rings: usize,
    /// Zero disables heartbeats.
    pub heartbeat_period_ms: u64,
    pub idle_flush_ms: u64,
    pub t_off_us: i64,
    pub boundary: BoundaryConfig,
}

impl Default for EtapConfig {
    fn default() -> Self {
        EtapConfig {
            ring_size: DEFAULT_RING_SIZE,
            batch_size: DEFAULT_BATCH_SIZE,
            num_rx_rings: 1,
            heartbeat_period_ms: 1000,
            idle_flush_ms: 5,
            t_off_us: 0,
            boundary: BoundaryConfig {
                // the device only needs room for its two batch buffers
                untrusted_capacity_bytes: 1 << 32,
                ..BoundaryConfig::default()
            },
        }
    }
}

impl EtapConfig {
    pub fn validate(&self) -> Result<(), EtapError> {
        let bad = |m: String| Err(EtapError::Config(m));
        if self.ring_size < 2 || !self.ring_size.is_power_of_two() {
            return bad(format!("ring_size {} is not a power of two >= 2", self.ring_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.num_rx_rings == 0 {
            return bad("num_rx_rings must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EtapError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error("link i/o: {0}")]
    Io(String),
    #[error("link closed")]
    Closed,
    #[error("device shut down")]
    Shutdown,
    #[error("operation would block")]
    WouldBlock,
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl EtapError {
    fn from_io(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::UnexpectedEof | io::ErrorKind::BrokenPipe => EtapError::Closed,
            _ => EtapError::Io(e.to_string()),
        }
    }
}

#[derive(Debug, Default)]
pub struct EtapStats {
    pub records_in: AtomicU64,
    pub records_out: AtomicU64,
    pub packets_in: AtomicU64,
    pub packets_out: AtomicU64,
    pub rx_crossings: AtomicU64,
    pub tx_crossings: AtomicU64,
    pub heartbeats: AtomicU64,
}

/// Point-in-time copy of [`EtapStats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EtapCounters {
    pub records_in: u64,
    pub records_out: u64,
    pub packets_in: u64,
    pub packets_out: u64,
    pub rx_crossings: u64,
    pub tx_crossings: u64,
    pub heartbeats: u64,
}

impl EtapStats {
    pub fn snapshot(&self) -> EtapCounters {
        let l = |a: &AtomicU64| a.load(Ordering::Relaxed);
        EtapCounters {
            records_in: l(&self.records_in),
            records_out: l(&self.records_out),
            packets_in: l(&self.packets_in),
            packets_out: l(&self.packets_out),
            rx_crossings: l(&self.rx_crossings),
            tx_crossings: l(&self.tx_crossings),
            heartbeats: l(&self.heartbeats),
        }
    }
}

/// State shared by the driver threads and the ports.
#[derive(Debug, Default)]
pub(crate) struct Control {
    /// No more packets will enter the rx rings.
    rx_done: AtomicBool,
    /// The NF has released the tx port.
    tx_closed: AtomicBool,
    /// Tear everything down now.
    stop: AtomicBool,
    failure: Mutex<Option<EtapError>>,
    stats: EtapStats,
}

impl Control {
    fn fail(&self, e: EtapError) {
        log::error!("device shutting down: {e}");
        self.failure.lock().unwrap().get_or_insert(e);
        self.stop.store(true, Ordering::Release);
        self.rx_done.store(true, Ordering::Release);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Blocking,
    NonBlocking,
}

/// Poll-driver handle on one rx ring. Owned by exactly one NF thread.
pub struct RxPort {
    index: usize,
    ring: Consumer<PktInfo>,
    copy: PktInfo,
    ctl: Arc<Control>,
}

impl RxPort {
    pub fn index(&self) -> usize {
        self.index
    }

    /// Next packet from this ring. The returned copy stays valid until the
    /// next call.
    pub fn read_pkt(&mut self, mode: Mode) -> Result<&PktInfo, EtapError> {
        let backoff = Backoff::new();
        loop {
            let copy = &mut self.copy;
            if self.ring.try_pop_with(|slot| copy.copy_from(slot)).is_some() {
                return Ok(&self.copy);
            }
            if self.ctl.rx_done.load(Ordering::Acquire) {
                // re-check: the RX loop may have pushed before raising the flag
                if self.ring.occupancy() == 0 {
                    return Err(EtapError::Shutdown);
                }
                continue;
            }
            if mode == Mode::NonBlocking {
                return Err(EtapError::WouldBlock);
            }
            backoff.snooze();
        }
    }
}

/// Poll-driver handle on the tx ring. Dropping it tells the TX loop to
/// drain and close the link.
pub struct TxPort {
    ring: Producer<PktInfo>,
    ctl: Arc<Control>,
}

impl TxPort {
    pub fn write_pkt(&mut self, timestamp: u64, data: &[u8], mode: Mode) -> Result<(), EtapError> {
        if data.len() > MAX_PKT_LEN {
            return Err(WireError::Oversize(data.len()).into());
        }
        let backoff = Backoff::new();
        loop {
            if self
                .ring
                .try_push_with(|slot| slot.set(timestamp, data).expect("length checked"))
            {
                return Ok(());
            }
            if self.ctl.stop.load(Ordering::Acquire) {
                return Err(EtapError::Shutdown);
            }
            if mode == Mode::NonBlocking {
                return Err(EtapError::WouldBlock);
            }
            backoff.snooze();
        }
    }
}

impl Drop for TxPort {
    fn drop(&mut self) {
        self.ctl.tx_closed.store(true, Ordering::Release);
    }
}

/// A running device: two driver threads plus the ports they feed.
pub struct EtapDevice {
    rx_ports: Vec<RxPort>,
    tx_port: Option<TxPort>,
    clock: Arc<TrustedClock>,
    ctl: Arc<Control>,
    threads: Vec<JoinHandle<()>>,
}

impl EtapDevice {
    /// Start the core driver over an established link.
    pub fn start(config: EtapConfig, keys: ChannelKeys, link: Endpoint) -> Result<Self, EtapError> {
        Self::start_with_io(
            config,
            keys,
            Box::new(LinkRx(link.reader)),
            Box::new(LinkTx(link.writer)),
        )
    }

    /// Start the core driver over arbitrary untrusted I/O paths.
    pub fn start_with_io(
        config: EtapConfig,
        keys: ChannelKeys,
        rx_io: Box<dyn UntrustedRx>,
        tx_io: Box<dyn UntrustedTx>,
    ) -> Result<Self, EtapError> {
        config.validate()?;
        let ctl = Arc::new(Control::default());
        let clock = Arc::new(TrustedClock::new(config.t_off_us));
        let (producers, consumers): (Vec<_>, Vec<_>) = (0..config.num_rx_rings)
            .map(|_| ring::channel::<PktInfo>(config.ring_size))
            .unzip();
        let (tx_prod, tx_cons) = ring::channel::<PktInfo>(config.ring_size);
        let (to_tx, from_rx) = crossbeam_channel::unbounded();

        let rx = RxDriver::new(&config, keys.open, rx_io, producers, clock.clone(), ctl.clone(), to_tx)?;
        let tx = TxDriver::new(&config, keys.seal, tx_io, tx_cons, ctl.clone(), from_rx)?;
        let threads = vec![
            std::thread::Builder::new()
                .name("etap-rx".into())
                .spawn(move || rx.run())
                .map_err(|e| EtapError::Io(e.to_string()))?,
            std::thread::Builder::new()
                .name("etap-tx".into())
                .spawn(move || tx.run())
                .map_err(|e| EtapError::Io(e.to_string()))?,
        ];
        let rx_ports = consumers
            .into_iter()
            .enumerate()
            .map(|(index, ring)| RxPort {
                index,
                ring,
                copy: PktInfo::default(),
                ctl: ctl.clone(),
            })
            .collect();
        Ok(EtapDevice {
            rx_ports,
            tx_port: Some(TxPort {
                ring: tx_prod,
                ctl: ctl.clone(),
            }),
            clock,
            ctl,
            threads,
        })
    }

    /// Hand out the rx ports, one per ring, in ring order.
    pub fn take_rx_ports(&mut self) -> Vec<RxPort> {
        std::mem::take(&mut self.rx_ports)
    }

    pub fn take_tx_port(&mut self) -> Option<TxPort> {
        self.tx_port.take()
    }

    pub fn clock(&self) -> Arc<TrustedClock> {
        self.clock.clone()
    }

    pub fn clock_now(&self) -> u64 {
        self.clock.now()
    }

    pub fn stats(&self) -> EtapCounters {
        self.ctl.stats.snapshot()
    }

    /// Diagnostic of the failure that shut the device down, if any.
    pub fn failure(&self) -> Option<EtapError> {
        self.ctl.failure.lock().unwrap().clone()
    }

    /// Stop both loops without draining.
    pub fn shutdown(&self) {
        self.ctl.stop.store(true, Ordering::Release);
    }

    /// Wait for both driver threads. Drops any ports still held by the
    /// device first.
    pub fn join(mut self) -> Result<EtapCounters, EtapError> {
        self.tx_port = None;
        self.rx_ports.clear();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        match self.failure() {
            Some(e) => Err(e),
            None => Ok(self.stats()),
        }
    }
}
