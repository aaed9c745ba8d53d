use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crossbeam_utils::Backoff;

use super::{latency_summary, BenchError, RunResult};
use crate::crypto::AeadAlgorithm;
use crate::etap::{EtapConfig, EtapDevice};
use crate::gateway::{run_gateway, GatewayConfig, SizeDist, Source, SynthConfig};
use crate::link::duplex;
use crate::nf::{serve, NfConfig, NfKind};
use crate::ring::{self, lamport, locked, RingConsumer, RingProducer};
use crate::wire::ChannelKeys;

/// Everything one pipeline run depends on.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub batch_size: usize,
    pub ring_size: usize,
    pub pkt_size: SizeDist,
    pub flows: usize,
    pub zipf: f64,
    pub count: u64,
    pub cache_entries: usize,
    pub nf: NfKind,
    /// Echo busy-work rounds per packet.
    pub nf_cost: u32,
    pub seed: u64,
    pub rings: usize,
    /// Simulated cost of one boundary crossing.
    pub crossing_delay_ns: u64,
    pub sync: SyncMechanism,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            batch_size: 10,
            ring_size: 256,
            pkt_size: SizeDist::Fixed(64),
            flows: 1000,
            zipf: 1.0,
            count: 200_000,
            cache_entries: 16 * 1024,
            nf: NfKind::Echo,
            nf_cost: 0,
            seed: 1,
            rings: 1,
            crossing_delay_ns: 3_000,
            sync: SyncMechanism::LockFree,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    BatchSize,
    RingSize,
    PktSize,
    FlowCount,
    CacheEntries,
    SyncMechanism,
    NfCost,
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "batch_size" => SweepParam::BatchSize,
            "ring_size" => SweepParam::RingSize,
            "pkt_size" => SweepParam::PktSize,
            "flow_count" => SweepParam::FlowCount,
            "cache_entries" => SweepParam::CacheEntries,
            "sync_mechanism" => SweepParam::SyncMechanism,
            "nf_cost" => SweepParam::NfCost,
            _ => return Err(format!("unknown sweep parameter {s:?}")),
        })
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::BatchSize => "batch_size",
            SweepParam::RingSize => "ring_size",
            SweepParam::PktSize => "pkt_size",
            SweepParam::FlowCount => "flow_count",
            SweepParam::CacheEntries => "cache_entries",
            SweepParam::SyncMechanism => "sync_mechanism",
            SweepParam::NfCost => "nf_cost",
        })
    }
}

impl SweepParam {
    /// Set this parameter of `cfg` to `value`.
    pub fn apply(self, cfg: &mut RunConfig, value: &str) -> Result<(), BenchError> {
        let bad = |e: &dyn fmt::Display| BenchError::Config(format!("{self}={value}: {e}"));
        let num = |v: &str| v.parse::<u64>().map_err(|e| bad(&e));
        match self {
            SweepParam::BatchSize => cfg.batch_size = num(value)? as usize,
            SweepParam::RingSize => cfg.ring_size = num(value)? as usize,
            SweepParam::PktSize => cfg.pkt_size = value.parse().map_err(|e: String| bad(&e))?,
            SweepParam::FlowCount => cfg.flows = num(value)? as usize,
            SweepParam::CacheEntries => cfg.cache_entries = num(value)? as usize,
            SweepParam::SyncMechanism => cfg.sync = value.parse().map_err(|e: String| bad(&e))?,
            SweepParam::NfCost => cfg.nf_cost = num(value)? as u32,
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<String>,
    pub base: RunConfig,
    pub repetitions: u32,
}

/// Ring synchronization strategies compared by the `sync_mechanism` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncMechanism {
    /// Lamport ring with cached opposite indices (the one the device uses).
    LockFree,
    /// Lamport ring reading both shared indices every time.
    Lamport,
    /// Mutex-protected ring, blocking on contention.
    Mutex,
    /// Mutex-protected ring, spinning on contention.
    Spinlock,
}

impl FromStr for SyncMechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "lockfree" => SyncMechanism::LockFree,
            "lamport" => SyncMechanism::Lamport,
            "mutex" => SyncMechanism::Mutex,
            "spinlock" => SyncMechanism::Spinlock,
            _ => return Err(format!("unknown sync mechanism {s:?} (lockfree, lamport, mutex, spinlock)")),
        })
    }
}

impl fmt::Display for SyncMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyncMechanism::LockFree => "lockfree",
            SyncMechanism::Lamport => "lamport",
            SyncMechanism::Mutex => "mutex",
            SyncMechanism::Spinlock => "spinlock",
        })
    }
}

/// A 64-byte ring payload.
#[derive(Debug, Clone, Copy, Default)]
struct Item([u64; 8]);

fn pump<P, C>(mut p: P, mut c: C, n: u64) -> Duration
where
    P: RingProducer<Item> + 'static,
    C: RingConsumer<Item>,
{
    let start = Instant::now();
    let prod = std::thread::spawn(move || {
        let b = Backoff::new();
        for i in 0..n {
            while !p.try_push_with(|s| s.0 = [i; 8]) {
                b.snooze();
            }
            b.reset();
        }
    });
    let b = Backoff::new();
    let mut expect = 0;
    while expect < n {
        match c.try_pop_with(|s| s.0[7]) {
            Some(v) => {
                assert_eq!(v, expect, "ring lost or reordered an item");
                expect += 1;
                b.reset();
            }
            None => b.snooze(),
        }
    }
    prod.join().expect("producer panicked");
    start.elapsed()
}

/// Time to pass `n` 64-byte items between two threads.
pub fn ring_throughput(mech: SyncMechanism, ring_size: usize, n: u64) -> Duration {
    match mech {
        SyncMechanism::LockFree => {
            let (p, c) = ring::channel(ring_size);
            pump(p, c, n)
        }
        SyncMechanism::Lamport => {
            let (p, c) = lamport::channel(ring_size);
            pump(p, c, n)
        }
        SyncMechanism::Mutex => {
            let (p, c) = locked::channel(ring_size, locked::LockMode::Block);
            pump(p, c, n)
        }
        SyncMechanism::Spinlock => {
            let (p, c) = locked::channel(ring_size, locked::LockMode::Spin);
            pump(p, c, n)
        }
    }
}

/// Gateway → device → function → device → gateway over an in-process
/// link, timed at the gateway.
pub fn run_once(cfg: &RunConfig) -> Result<RunResult, BenchError> {
    let secret = format!("bench session {}", cfg.seed);
    let (gk, ek) = ChannelKeys::pair(secret.as_bytes(), AeadAlgorithm::Aes256Gcm);
    let (g, e) = duplex(Duration::ZERO);
    let mut ecfg = EtapConfig {
        batch_size: cfg.batch_size,
        ring_size: cfg.ring_size,
        num_rx_rings: cfg.rings,
        ..Default::default()
    };
    ecfg.boundary.crossing_delay_ns = cfg.crossing_delay_ns;
    let dev = EtapDevice::start(ecfg, ek, e)?;
    let nfcfg = NfConfig {
        cache_entries: cfg.cache_entries,
        busy_work: cfg.nf_cost,
        seed: Some(cfg.seed),
        ..NfConfig::new(cfg.nf)
    };
    let nf = std::thread::spawn(move || serve(dev, &nfcfg));
    let source = Source::Synth(SynthConfig {
        flows: cfg.flows,
        zipf: cfg.zipf,
        pkt_size: cfg.pkt_size,
        count: cfg.count,
        seed: cfg.seed,
        ..Default::default()
    });
    let gcfg = GatewayConfig {
        batch_size: cfg.batch_size,
        retimestamp: true,
        ..Default::default()
    };
    let gw = run_gateway(source.open()?, g, gk, &gcfg);
    let nf = nf.join().expect("nf thread panicked");
    let mut gw = gw?;
    let nf = nf?;
    let (mean, p50, p99) = latency_summary(&mut gw.latencies_us);
    Ok(RunResult {
        packets: gw.stats.packets_received,
        bytes: gw.stats.bytes_received,
        elapsed_s: gw.stats.elapsed.as_secs_f64(),
        mbps: gw.throughput_mbps(),
        mpps: gw.throughput_mpps(),
        lat_mean_us: mean,
        lat_p50_us: p50,
        lat_p99_us: p99,
        miss_rate: nf.stats.state.miss_rate(),
        seals: nf.stats.state.seals,
        opens: nf.stats.state.opens,
        crossings: nf.etap.rx_crossings + nf.etap.tx_crossings,
        events: nf.events.len() as u64,
        ..Default::default()
    })
}

fn run_ring(cfg: &RunConfig) -> RunResult {
    let t = ring_throughput(cfg.sync, cfg.ring_size, cfg.count);
    let s = t.as_secs_f64();
    RunResult {
        packets: cfg.count,
        bytes: cfg.count * 64,
        elapsed_s: s,
        mbps: cfg.count as f64 * 64.0 * 8.0 / s / 1e6,
        mpps: cfg.count as f64 / s / 1e6,
        ..Default::default()
    }
}

/// Run every value of the swept parameter `repetitions` times. Repetitions
/// are interleaved (every value once, then again) so slow drift in machine
/// load spreads evenly over the values; rows come back grouped by value.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<RunResult>, BenchError> {
    if spec.values.is_empty() || spec.repetitions == 0 {
        return Err(BenchError::Config("nothing to run".into()));
    }
    let configs = spec
        .values
        .iter()
        .map(|v| {
            let mut cfg = spec.base.clone();
            spec.param.apply(&mut cfg, v)?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let mut out = Vec::new();
    for rep in 0..spec.repetitions {
        for (i, (v, cfg)) in spec.values.iter().zip(&configs).enumerate() {
            log::info!("{}={v} rep {rep}", spec.param);
            let mut r = if spec.param == SweepParam::SyncMechanism {
                run_ring(cfg)
            } else {
                run_once(cfg)?
            };
            r.param = spec.param.to_string();
            r.value = v.clone();
            r.rep = rep;
            out.push((i, r));
        }
    }
    out.sort_by_key(|(i, r)| (*i, r.rep));
    Ok(out.into_iter().map(|(_, r)| r).collect())
}
