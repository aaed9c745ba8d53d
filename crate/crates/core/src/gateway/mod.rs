//! The gateway end of the tunnel: sources packets from a capture file or a
//! generator, fragments and tunnels them, and receives the bounced traffic.

mod fragment;
mod pcap;
mod synth;

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use crate::etap::wall_us;
use crate::link::Endpoint;
use crate::wire::{
    ChannelKeys, FrameRef, RecordBuf, RecordPacker, WireError, MAX_PKT_LEN, RECORD_LEN,
    SEALED_RECORD_LEN,
};

pub use fragment::{fragment, fragment_frame, FragmentError};
pub use pcap::{PcapError, PcapPacket, PcapReader, PcapWriter, LINKTYPE_ETHERNET};
pub use synth::{SizeDist, SynthConfig, SynthSource};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Pcap(#[from] PcapError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("link i/o: {0}")]
    Io(#[from] io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Where packets come from.
#[derive(Debug, Clone)]
pub enum Source {
    Pcap(PathBuf),
    Synth(SynthConfig),
}

pub type PacketIter = Box<dyn Iterator<Item = Result<(u64, Vec<u8>), GatewayError>> + Send>;

impl Source {
    pub fn open(&self) -> Result<PacketIter, GatewayError> {
        Ok(match self {
            Source::Pcap(path) => {
                let r = PcapReader::new(BufReader::new(File::open(path)?))?;
                Box::new(r.map(|p| p.map(|p| (p.ts_us, p.data)).map_err(GatewayError::from)))
            }
            Source::Synth(cfg) => {
                Box::new(SynthSource::new(cfg.clone()).map_err(GatewayError::Config)?.map(Ok))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Records per write; must match the device's batch size.
    pub batch_size: usize,
    /// Largest packet, link header included, carried without fragmenting.
    pub mtu: usize,
    /// Stamp packets with the wall clock at send time instead of keeping
    /// the source timestamps. Enables latency measurement.
    pub retimestamp: bool,
    /// Zero disables heartbeats.
    pub heartbeat_period_ms: u64,
    /// Keep running until every sent packet has come back.
    pub wait_for_echo: bool,
    /// Keep the bounced packets in the report.
    pub collect: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            batch_size: crate::etap::DEFAULT_BATCH_SIZE,
            mtu: MAX_PKT_LEN,
            retimestamp: false,
            heartbeat_period_ms: 1000,
            wait_for_echo: true,
            collect: false,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    packets_sent: AtomicU64,
    bytes_sent: AtomicU64,
    fragments_created: AtomicU64,
    unfragmentable: AtomicU64,
    records_sent: AtomicU64,
    framed_bytes: AtomicU64,
    records_received: AtomicU64,
    packets_received: AtomicU64,
    bytes_received: AtomicU64,
    heartbeat_rtt_us: AtomicU64,
    heartbeats_answered: AtomicU64,
    sending_done: AtomicBool,
    receiving_done: AtomicBool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GatewayStats {
    pub packets_sent: u64,
    pub bytes_sent: u64,
    pub fragments_created: u64,
    pub unfragmentable: u64,
    pub records_sent: u64,
    /// Frame bytes packed into the sent records.
    pub framed_bytes: u64,
    pub records_received: u64,
    pub packets_received: u64,
    pub bytes_received: u64,
    /// Latest heartbeat round trip, if one completed.
    pub heartbeat_rtt_us: Option<u64>,
    pub heartbeats_answered: u64,
    /// First send to last receive.
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct GatewayReport {
    pub stats: GatewayStats,
    /// Per-packet round-trip latencies in μs (only with `retimestamp`).
    pub latencies_us: Vec<u64>,
    /// Bounced packets (only with `collect`).
    pub received: Vec<(u64, Vec<u8>)>,
}

impl GatewayReport {
    pub fn throughput_mbps(&self) -> f64 {
        let s = self.stats.elapsed.as_secs_f64();
        if s == 0.0 {
            0.0
        } else {
            self.stats.bytes_received as f64 * 8.0 / s / 1e6
        }
    }

    pub fn throughput_mpps(&self) -> f64 {
        let s = self.stats.elapsed.as_secs_f64();
        if s == 0.0 {
            0.0
        } else {
            self.stats.packets_received as f64 / s / 1e6
        }
    }
}

struct Sender_ {
    w: Box<dyn Write + Send>,
    keys: crate::wire::SealingKey,
    packer: RecordPacker,
    batch: usize,
    buf: Vec<u8>,
    ctr: Arc<Counters>,
}

impl Sender_ {
    /// Seal and write every complete batch.
    fn send_full(&mut self) -> Result<(), GatewayError> {
        while self.packer.complete() >= self.batch {
            self.buf.clear();
            for i in 0..self.batch {
                let start = self.buf.len();
                self.buf.extend_from_slice(self.packer.record_mut(i));
                self.buf.resize(start + SEALED_RECORD_LEN, 0);
                self.keys.seal_in_place(&mut self.buf[start..])?;
            }
            self.packer.consume(self.batch);
            self.w.write_all(&self.buf)?;
            self.ctr.records_sent.fetch_add(self.batch as u64, Ordering::Relaxed);
        }
        Ok(())
    }

    fn push(&mut self, f: FrameRef<'_>) -> Result<(), GatewayError> {
        self.ctr.framed_bytes.fetch_add(f.encoded_len() as u64, Ordering::Relaxed);
        self.packer.push(f)?;
        Ok(())
    }

    /// Pad out to a whole batch and send it now.
    fn flush(&mut self) -> Result<(), GatewayError> {
        self.packer.pad_to_batch(self.batch);
        self.send_full()?;
        self.w.flush()?;
        Ok(())
    }
}

fn run_sender(
    source: PacketIter,
    mut tx: Sender_,
    cfg: &GatewayConfig,
    heartbeat_reqs: Receiver<u64>,
    start: &Mutex<Option<Instant>>,
) -> Result<(), GatewayError> {
    let ctr = tx.ctr.clone();
    let hb_period = Duration::from_millis(cfg.heartbeat_period_ms);
    let mut next_hb = (cfg.heartbeat_period_ms > 0).then(Instant::now);
    *start.lock().unwrap() = Some(Instant::now());

    let pending_ctl = |tx: &mut Sender_, next_hb: &mut Option<Instant>| -> Result<bool, GatewayError> {
        let mut any = false;
        while let Ok(t) = heartbeat_reqs.try_recv() {
            tx.push(FrameRef::HeartbeatResp(t))?;
            ctr.heartbeats_answered.fetch_add(1, Ordering::Relaxed);
            any = true;
        }
        if let Some(t) = *next_hb {
            if Instant::now() >= t {
                tx.push(FrameRef::HeartbeatReq(wall_us()))?;
                *next_hb = Some(t + hb_period);
                any = true;
            }
        }
        Ok(any)
    };

    let mut n = 0u64;
    for item in source {
        let (ts, pkt) = item?;
        let ts = if cfg.retimestamp { wall_us() } else { ts };
        let frags = match fragment_frame(&pkt, cfg.mtu) {
            Ok(f) => f,
            Err(e) => {
                log::debug!("dropping packet: {e}");
                ctr.unfragmentable.fetch_add(1, Ordering::Relaxed);
                continue;
            }
        };
        if frags.len() > 1 {
            ctr.fragments_created.fetch_add(frags.len() as u64, Ordering::Relaxed);
        }
        for f in &frags {
            tx.push(FrameRef::Data {
                timestamp: ts,
                data: f,
            })?;
            ctr.packets_sent.fetch_add(1, Ordering::Relaxed);
            ctr.bytes_sent.fetch_add(f.len() as u64, Ordering::Relaxed);
        }
        n += 1;
        if n.is_multiple_of(64) && pending_ctl(&mut tx, &mut next_hb)? {
            // heartbeats ride along with the data; no early flush
        }
        tx.send_full()?;
    }
    pending_ctl(&mut tx, &mut next_hb)?;
    // the receiver may stop as soon as the count is reached, so publish it
    // before the last batch leaves
    ctr.sending_done.store(true, Ordering::Release);
    tx.flush()?;

    if cfg.wait_for_echo {
        while !ctr.receiving_done.load(Ordering::Acquire) {
            match heartbeat_reqs.recv_timeout(Duration::from_millis(20)) {
                Ok(t) => {
                    tx.push(FrameRef::HeartbeatResp(t))?;
                    ctr.heartbeats_answered.fetch_add(1, Ordering::Relaxed);
                    tx.flush()?;
                }
                Err(RecvTimeoutError::Timeout) => {
                    if pending_ctl(&mut tx, &mut next_hb)? {
                        tx.flush()?;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
    }
    Ok(())
}

fn run_receiver(
    mut r: Box<dyn Read + Send>,
    mut keys: crate::wire::OpeningKey,
    cfg: &GatewayConfig,
    ctr: &Counters,
    heartbeat_reqs: Sender<u64>,
    report: &mut GatewayReport,
) -> Result<Instant, GatewayError> {
    let mut buf = vec![0u8; SEALED_RECORD_LEN];
    let mut parser = RecordBuf::new();
    let mut last = Instant::now();
    let done = |ctr: &Counters| {
        cfg.wait_for_echo
            && ctr.sending_done.load(Ordering::Acquire)
            && ctr.packets_received.load(Ordering::Relaxed) >= ctr.packets_sent.load(Ordering::Relaxed)
    };
    loop {
        if done(ctr) {
            break;
        }
        match r.read_exact(&mut buf) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        keys.open_in_place(&mut buf)?;
        ctr.records_received.fetch_add(1, Ordering::Relaxed);
        let now_us = wall_us();
        let mut got = 0u64;
        let mut bytes = 0u64;
        parser.parse(&buf[..RECORD_LEN], |f| match f {
            FrameRef::Data { timestamp, data } => {
                got += 1;
                bytes += data.len() as u64;
                if cfg.retimestamp {
                    report.latencies_us.push(now_us.saturating_sub(timestamp));
                }
                if cfg.collect {
                    report.received.push((timestamp, data.to_vec()));
                }
            }
            FrameRef::HeartbeatReq(t) => {
                let _ = heartbeat_reqs.send(t);
            }
            FrameRef::HeartbeatResp(t) => {
                ctr.heartbeat_rtt_us
                    .store(wall_us().saturating_sub(t).max(1), Ordering::Relaxed);
            }
        })?;
        if got > 0 {
            last = Instant::now();
        }
        ctr.bytes_received.fetch_add(bytes, Ordering::Relaxed);
        ctr.packets_received.fetch_add(got, Ordering::Relaxed);
    }
    // Let the sender hang up, then read on until the device closes its side
    // too, so neither end sees its writes fail during an orderly close.
    ctr.receiving_done.store(true, Ordering::Release);
    let _ = io::copy(&mut r, &mut io::sink());
    Ok(last)
}

/// Tunnel `source` to the device at the other end of `link` and collect
/// what comes back.
pub fn run_gateway(
    source: PacketIter,
    link: Endpoint,
    keys: ChannelKeys,
    cfg: &GatewayConfig,
) -> Result<GatewayReport, GatewayError> {
    if cfg.batch_size == 0 {
        return Err(GatewayError::Config("batch_size must be positive".into()));
    }
    let ctr = Arc::new(Counters::default());
    let (hb_tx, hb_rx) = crossbeam_channel::unbounded();
    let start = Mutex::new(None);
    let sender = Sender_ {
        w: link.writer,
        keys: keys.seal,
        packer: RecordPacker::new(),
        batch: cfg.batch_size,
        buf: Vec::with_capacity(cfg.batch_size * SEALED_RECORD_LEN),
        ctr: ctr.clone(),
    };
    let mut report = GatewayReport::default();
    let (send_result, recv_result) = std::thread::scope(|s| {
        let send = s.spawn(|| {
            let r = run_sender(source, sender, cfg, hb_rx, &start);
            if r.is_err() {
                // let the receiver give up instead of waiting for echoes
                ctr.sending_done.store(true, Ordering::Release);
            }
            r
        });
        let recv = run_receiver(link.reader, keys.open, cfg, &ctr, hb_tx, &mut report);
        ctr.receiving_done.store(true, Ordering::Release);
        (send.join().expect("sender thread panicked"), recv)
    });
    send_result?;
    let last = recv_result?;
    let l = |a: &AtomicU64| a.load(Ordering::Relaxed);
    let rtt = l(&ctr.heartbeat_rtt_us);
    report.stats = GatewayStats {
        packets_sent: l(&ctr.packets_sent),
        bytes_sent: l(&ctr.bytes_sent),
        fragments_created: l(&ctr.fragments_created),
        unfragmentable: l(&ctr.unfragmentable),
        records_sent: l(&ctr.records_sent),
        framed_bytes: l(&ctr.framed_bytes),
        records_received: l(&ctr.records_received),
        packets_received: l(&ctr.packets_received),
        bytes_received: l(&ctr.bytes_received),
        heartbeat_rtt_us: (rtt > 0).then_some(rtt),
        heartbeats_answered: l(&ctr.heartbeats_answered),
        elapsed: start
            .lock()
            .unwrap()
            .map(|s| last.saturating_duration_since(s))
            .unwrap_or_default(),
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::AeadAlgorithm;
    use crate::etap::{EtapConfig, EtapDevice, EtapError, Mode};
    use crate::link::duplex;

    /// Bounce every packet straight back.
    fn echo_device(link: Endpoint, keys: ChannelKeys, cfg: EtapConfig) -> std::thread::JoinHandle<u64> {
        std::thread::spawn(move || {
            let mut dev = EtapDevice::start(cfg, keys, link).unwrap();
            let mut rx = dev.take_rx_ports().pop().unwrap();
            let mut tx = dev.take_tx_port().unwrap();
            let mut n = 0;
            loop {
                match rx.read_pkt(Mode::Blocking) {
                    Ok(p) => {
                        tx.write_pkt(p.timestamp(), p.data(), Mode::Blocking).unwrap();
                        n += 1;
                    }
                    Err(EtapError::Shutdown) => break,
                    Err(e) => panic!("{e}"),
                }
            }
            drop(tx);
            dev.join().unwrap();
            n
        })
    }

    fn synth(count: u64, size: SizeDist) -> PacketIter {
        Source::Synth(SynthConfig {
            count,
            pkt_size: size,
            flows: 50,
            ..Default::default()
        })
        .open()
        .unwrap()
    }

    #[test]
    fn echo_round_trip_preserves_packets() {
        let (g, e) = duplex(Duration::ZERO);
        let (gk, ek) = ChannelKeys::pair(b"s", AeadAlgorithm::Aes256Gcm);
        let dev = echo_device(e, ek, EtapConfig::default());
        let cfg = GatewayConfig {
            collect: true,
            ..Default::default()
        };
        let report = run_gateway(synth(2000, SizeDist::Imix), g, gk, &cfg).unwrap();
        assert_eq!(dev.join().unwrap(), 2000);
        let s = &report.stats;
        assert_eq!(s.packets_sent, 2000);
        assert_eq!(s.packets_received, 2000);
        assert_eq!(s.bytes_sent, s.bytes_received);
        assert_eq!(s.records_sent % cfg.batch_size as u64, 0);
        let sent: Vec<_> = synth(2000, SizeDist::Imix).map(Result::unwrap).collect();
        assert_eq!(report.received, sent);
        assert!(s.heartbeat_rtt_us.is_some());
        assert!(s.heartbeats_answered >= 1);
    }

    #[test]
    fn oversize_packets_are_fragmented() {
        let (g, e) = duplex(Duration::ZERO);
        let (gk, ek) = ChannelKeys::pair(b"s", AeadAlgorithm::Aes256Gcm);
        let dev = echo_device(e, ek, EtapConfig::default());
        let cfg = GatewayConfig {
            mtu: 600,
            heartbeat_period_ms: 0,
            ..Default::default()
        };
        let report = run_gateway(synth(100, SizeDist::Fixed(1500)), g, gk, &cfg).unwrap();
        dev.join().unwrap();
        let s = &report.stats;
        // 1466 B of IP payload per packet -> 576 + 576 + 314
        assert_eq!(s.packets_sent, 300);
        assert_eq!(s.fragments_created, 300);
        assert_eq!(s.packets_received, 300);
    }

    #[test]
    fn retimestamp_measures_latency() {
        let (g, e) = duplex(Duration::from_millis(2));
        let (gk, ek) = ChannelKeys::pair(b"s", AeadAlgorithm::Aes256Gcm);
        let dev = echo_device(e, ek, EtapConfig::default());
        let cfg = GatewayConfig {
            retimestamp: true,
            ..Default::default()
        };
        let report = run_gateway(synth(500, SizeDist::Fixed(64)), g, gk, &cfg).unwrap();
        dev.join().unwrap();
        assert_eq!(report.latencies_us.len(), 500);
        assert!(report.latencies_us.iter().all(|&l| l >= 4000), "{:?}", &report.latencies_us[..5]);
        let rtt = report.stats.heartbeat_rtt_us.unwrap();
        assert!(rtt >= 4000, "{rtt}");
    }

    #[test]
    fn wrong_keys_surface_as_errors() {
        let (g, e) = duplex(Duration::ZERO);
        let (gk, _) = ChannelKeys::pair(b"s", AeadAlgorithm::Aes256Gcm);
        let (_, ek) = ChannelKeys::pair(b"other", AeadAlgorithm::Aes256Gcm);
        let h = std::thread::spawn(move || {
            let dev = EtapDevice::start(EtapConfig::default(), ek, e).unwrap();
            dev.join()
        });
        let err = run_gateway(synth(50, SizeDist::Fixed(64)), g, gk, &GatewayConfig::default());
        assert!(matches!(err, Err(GatewayError::Wire(_)) | Err(GatewayError::Io(_)) | Ok(_)));
        assert!(matches!(h.join().unwrap(), Err(EtapError::Wire(WireError::AuthFailure { seq: 0 }))));
    }
}
