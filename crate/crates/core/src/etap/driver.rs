//! The core driver: one RX and one TX loop moving sealed records between
//! the untrusted side and the rings.

use std::io::{self, Read, Write};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use crossbeam_utils::Backoff;

use crate::boundary::{ArenaKind, Boundary, Direction, Region};
use crate::packet;
use crate::ring::{Consumer, Producer, RingConsumer, RingProducer};
use crate::wire::{
    FrameRef, OpeningKey, PktInfo, RecordBuf, RecordPacker, SealingKey, WireError, RECORD_LEN,
    SEALED_RECORD_LEN,
};

use super::clock::{wall_us, TrustedClock};
use super::rss::rss_select;
use super::{Control, EtapConfig, EtapError};

/// Untrusted receive path: place the next batch somewhere in untrusted
/// memory and say where. A hostile host may answer with any region.
pub trait UntrustedRx: Send {
    fn recv_batch(&mut self, boundary: &mut Boundary, batch_buf: Region) -> io::Result<Region>;
}

/// Untrusted send path: transmit the bytes of `batch`.
pub trait UntrustedTx: Send {
    fn send_batch(&mut self, boundary: &Boundary, batch: Region) -> io::Result<()>;
}

/// Honest receive path over a byte stream.
pub struct LinkRx(pub Box<dyn Read + Send>);

/// Honest send path over a byte stream.
pub struct LinkTx(pub Box<dyn Write + Send>);

impl UntrustedRx for LinkRx {
    fn recv_batch(&mut self, boundary: &mut Boundary, batch_buf: Region) -> io::Result<Region> {
        let buf = boundary
            .untrusted_mut(batch_buf)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.0.read_exact(buf)?;
        Ok(batch_buf)
    }
}

impl UntrustedTx for LinkTx {
    fn send_batch(&mut self, boundary: &Boundary, batch: Region) -> io::Result<()> {
        let buf = boundary
            .bytes(batch)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.0.write_all(buf)?;
        self.0.flush()
    }
}

/// Messages from the RX loop to the TX loop.
#[derive(Debug, Clone, Copy)]
pub(crate) enum TxControl {
    HeartbeatResp(u64),
}

pub(crate) struct RxDriver {
    boundary: Boundary,
    batch_buf: Region,
    batch_size: usize,
    io: Box<dyn UntrustedRx>,
    key: OpeningKey,
    parser: RecordBuf,
    record: Vec<u8>,
    rings: Vec<Producer<PktInfo>>,
    clock: Arc<TrustedClock>,
    ctl: Arc<Control>,
    to_tx: Sender<TxControl>,
}

impl RxDriver {
    pub(crate) fn new(
        config: &EtapConfig,
        key: OpeningKey,
        io: Box<dyn UntrustedRx>,
        rings: Vec<Producer<PktInfo>>,
        clock: Arc<TrustedClock>,
        ctl: Arc<Control>,
        to_tx: Sender<TxControl>,
    ) -> Result<Self, EtapError> {
        let mut boundary = Boundary::new(config.boundary);
        let batch_buf = boundary.alloc(
            ArenaKind::Untrusted,
            (config.batch_size * SEALED_RECORD_LEN) as u64,
        )?;
        Ok(RxDriver {
            boundary,
            batch_buf,
            batch_size: config.batch_size,
            io,
            key,
            parser: RecordBuf::new(),
            record: vec![0; SEALED_RECORD_LEN],
            rings,
            clock,
            ctl,
            to_tx,
        })
    }

    /// One crossing for a full batch, then open, parse and deliver every
    /// record in it. Returns the number of packets delivered.
    pub(crate) fn rx_loop_iteration(&mut self) -> Result<usize, EtapError> {
        let want = self.batch_buf.len as usize;
        self.boundary.crossing(Direction::In, want);
        let region = self
            .io
            .recv_batch(&mut self.boundary, self.batch_buf)
            .map_err(EtapError::from_io)?;
        self.boundary.check_memory(region)?;
        if region.len as usize != want {
            return Err(WireError::BadRecordLength(region.len as usize).into());
        }

        let RxDriver {
            boundary,
            batch_size,
            key,
            parser,
            record,
            rings,
            clock,
            ctl,
            to_tx,
            ..
        } = self;
        let mut delivered = 0;
        for i in 0..*batch_size {
            let sealed = region.slice((i * SEALED_RECORD_LEN) as u64, SEALED_RECORD_LEN as u64);
            // copy in before verifying so the host cannot swap bytes under us
            record.copy_from_slice(boundary.bytes(sealed)?);
            key.open_in_place(record)?;
            ctl.stats.records_in.fetch_add(1, Ordering::Relaxed);
            let mut stopped = false;
            parser.parse(&record[..RECORD_LEN], |frame| match frame {
                FrameRef::Data { timestamp, data } => {
                    if stopped {
                        return;
                    }
                    clock.update(timestamp);
                    let ring = if rings.len() == 1 {
                        0
                    } else {
                        packet::parse(data).map_or(0, |p| rss_select(&p.fid, rings.len()))
                    };
                    let backoff = Backoff::new();
                    while !rings[ring].try_push_with(|slot| {
                        slot.set(timestamp, data).expect("decoder bounds packet length")
                    }) {
                        if ctl.stop.load(Ordering::Relaxed) {
                            stopped = true;
                            return;
                        }
                        backoff.snooze();
                    }
                    delivered += 1;
                }
                FrameRef::HeartbeatReq(t) => {
                    let _ = to_tx.send(TxControl::HeartbeatResp(t));
                }
                FrameRef::HeartbeatResp(t) => {
                    clock.set_rtt(wall_us().saturating_sub(t));
                    ctl.stats.heartbeats.fetch_add(1, Ordering::Relaxed);
                }
            })?;
            if stopped {
                return Err(EtapError::Shutdown);
            }
        }
        ctl.stats.packets_in.fetch_add(delivered as u64, Ordering::Relaxed);
        ctl.stats.rx_crossings.fetch_add(1, Ordering::Relaxed);
        Ok(delivered)
    }

    pub(crate) fn run(mut self) {
        loop {
            match self.rx_loop_iteration() {
                Ok(_) => {}
                Err(EtapError::Closed) => break,
                Err(e) => {
                    self.ctl.fail(e);
                    break;
                }
            }
        }
        self.ctl.rx_done.store(true, Ordering::Release);
    }
}

pub(crate) struct TxDriver {
    boundary: Boundary,
    batch_buf: Region,
    batch_size: usize,
    io: Box<dyn UntrustedTx>,
    key: SealingKey,
    packer: RecordPacker,
    record: Vec<u8>,
    ring: Consumer<PktInfo>,
    ctl: Arc<Control>,
    from_rx: Receiver<TxControl>,
    idle_flush: Duration,
    pending_since: Option<Instant>,
    heartbeat_period: Duration,
    next_heartbeat: Option<Instant>,
}

impl TxDriver {
    pub(crate) fn new(
        config: &EtapConfig,
        key: SealingKey,
        io: Box<dyn UntrustedTx>,
        ring: Consumer<PktInfo>,
        ctl: Arc<Control>,
        from_rx: Receiver<TxControl>,
    ) -> Result<Self, EtapError> {
        let mut boundary = Boundary::new(config.boundary);
        let batch_buf = boundary.alloc(
            ArenaKind::Untrusted,
            (config.batch_size * SEALED_RECORD_LEN) as u64,
        )?;
        Ok(TxDriver {
            boundary,
            batch_buf,
            batch_size: config.batch_size,
            io,
            key,
            packer: RecordPacker::new(),
            record: vec![0; SEALED_RECORD_LEN],
            ring,
            ctl,
            from_rx,
            idle_flush: Duration::from_millis(config.idle_flush_ms),
            pending_since: None,
            heartbeat_period: Duration::from_millis(config.heartbeat_period_ms),
            // the first request measures the initial round trip; a zero
            // period turns heartbeats off
            next_heartbeat: (config.heartbeat_period_ms > 0).then(Instant::now),
        })
    }

    /// Move queued packets into records and send at most one batch in a
    /// single crossing. Returns the number of records sent.
    pub(crate) fn tx_loop_iteration(&mut self) -> Result<usize, EtapError> {
        let now = Instant::now();
        let mut force_flush = false;
        while let Ok(TxControl::HeartbeatResp(t)) = self.from_rx.try_recv() {
            self.packer.push(FrameRef::HeartbeatResp(t))?;
            force_flush = true;
        }
        if self.next_heartbeat.is_some_and(|t| now >= t) {
            self.packer.push(FrameRef::HeartbeatReq(wall_us()))?;
            self.next_heartbeat = Some(now + self.heartbeat_period);
            force_flush = true;
        }

        let mut popped = 0u64;
        let mut ring_empty = false;
        while self.packer.complete() < self.batch_size {
            let packer = &mut self.packer;
            let pushed = self.ring.try_pop_with(|p| {
                packer.push(FrameRef::Data {
                    timestamp: p.timestamp(),
                    data: p.data(),
                })
            });
            match pushed {
                Some(r) => {
                    r?;
                    popped += 1;
                }
                None => {
                    ring_empty = true;
                    break;
                }
            }
        }
        self.ctl.stats.packets_out.fetch_add(popped, Ordering::Relaxed);

        // Hold data back until a full batch is ready, unless the ring has run
        // dry and something wants it out: a heartbeat, shutdown, or data that
        // has waited for the idle timeout. Only then is a partial record
        // padded.
        let waiting = self.packer.pending() > 0 || self.packer.complete() > 0;
        let mut flush = false;
        if waiting && ring_empty {
            let since = *self.pending_since.get_or_insert(now);
            let closing = self.ctl.tx_closed.load(Ordering::Acquire);
            flush = force_flush || closing || now.duration_since(since) >= self.idle_flush;
            if flush {
                self.packer.flush();
            }
        }

        let n = if self.packer.complete() >= self.batch_size || flush {
            self.packer.complete().min(self.batch_size)
        } else {
            0
        };
        if n > 0 {
            for i in 0..n {
                self.record[..RECORD_LEN].copy_from_slice(self.packer.record_mut(i));
                self.key.seal_in_place(&mut self.record)?;
                let dst = self
                    .batch_buf
                    .slice((i * SEALED_RECORD_LEN) as u64, SEALED_RECORD_LEN as u64);
                self.boundary.untrusted_mut(dst)?.copy_from_slice(&self.record);
            }
            self.packer.consume(n);
            let batch = self.batch_buf.slice(0, (n * SEALED_RECORD_LEN) as u64);
            self.boundary.crossing(Direction::Out, batch.len as usize);
            self.io
                .send_batch(&self.boundary, batch)
                .map_err(EtapError::from_io)?;
            self.ctl.stats.records_out.fetch_add(n as u64, Ordering::Relaxed);
            self.ctl.stats.tx_crossings.fetch_add(1, Ordering::Relaxed);
        }
        // A flush keeps its deadline until everything queued is out; a full
        // batch restarts the idle clock for whatever follows.
        let idle = self.packer.pending() == 0 && self.packer.complete() == 0;
        if idle || (n > 0 && !flush) {
            self.pending_since = None;
        }
        Ok(n)
    }

    fn drained(&self) -> bool {
        self.ring.occupancy() == 0 && self.packer.pending() == 0 && self.packer.complete() == 0
    }

    pub(crate) fn run(mut self) {
        let backoff = Backoff::new();
        loop {
            match self.tx_loop_iteration() {
                Ok(0) => {
                    if self.ctl.stop.load(Ordering::Acquire)
                        || (self.ctl.tx_closed.load(Ordering::Acquire) && self.drained())
                    {
                        break;
                    }
                    backoff.snooze();
                }
                Ok(_) => backoff.reset(),
                Err(e) => {
                    self.ctl.fail(e);
                    break;
                }
            }
        }
    }
}
