use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::{EchoNf, Event, FlowMeter, Ids, NetworkFunction, NfError, NfStats, PatternSet};
use super::{FLOWMETER_STATE_SIZE, IDS_STATE_SIZE};
use crate::etap::{EtapCounters, EtapDevice, EtapError, Mode, RxPort, TrustedClock, TxPort};
use crate::statemgmt::{FlowStateStore, NativeStore, StateManager, StateManagerConfig, StrawmanStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfKind {
    FlowMeter,
    Ids,
    Echo,
}

impl FromStr for NfKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flowmeter" => Ok(NfKind::FlowMeter),
            "ids" => Ok(NfKind::Ids),
            "echo" => Ok(NfKind::Echo),
            _ => Err(format!("unknown network function {s:?} (flowmeter, ids, echo)")),
        }
    }
}

impl fmt::Display for NfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NfKind::FlowMeter => "flowmeter",
            NfKind::Ids => "ids",
            NfKind::Echo => "echo",
        })
    }
}

/// How flow state is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Unbounded plaintext map; no protection at all.
    Native,
    /// Seal/open on every access with no cache (stand-in for a naive port
    /// that pages enclave memory).
    Strawman,
    /// Cached plaintext plus sealed store.
    Managed,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Native, Variant::Strawman, Variant::Managed];
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "native" => Ok(Variant::Native),
            "strawman" => Ok(Variant::Strawman),
            "managed" => Ok(Variant::Managed),
            _ => Err(format!("unknown variant {s:?} (native, strawman, managed)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Native => "native",
            Variant::Strawman => "strawman",
            Variant::Managed => "managed",
        })
    }
}

#[derive(Debug, Clone)]
pub struct NfConfig {
    pub kind: NfKind,
    pub variant: Variant,
    pub cache_entries: usize,
    /// Defaults to the function's natural state size.
    pub state_size: Option<usize>,
    pub expiration_s: u32,
    pub patterns: Option<PatternSet>,
    /// Extra per-packet work for the echo function.
    pub busy_work: u32,
    /// Fixed key material for reproducible runs; ring `i` uses `seed + i`.
    pub seed: Option<u64>,
}

impl NfConfig {
    pub fn new(kind: NfKind) -> Self {
        NfConfig {
            kind,
            variant: Variant::Managed,
            cache_entries: 16 * 1024,
            state_size: None,
            expiration_s: 30,
            patterns: None,
            busy_work: 0,
            seed: None,
        }
    }

    pub fn state_size(&self) -> usize {
        self.state_size.unwrap_or(match self.kind {
            NfKind::FlowMeter => FLOWMETER_STATE_SIZE,
            NfKind::Ids => IDS_STATE_SIZE,
            NfKind::Echo => 0,
        })
    }
}

fn wrap<S: FlowStateStore + Send + 'static>(
    cfg: &NfConfig,
    store: S,
) -> Result<Box<dyn NetworkFunction + Send>, NfError> {
    Ok(match cfg.kind {
        NfKind::FlowMeter => Box::new(FlowMeter::new(store)?),
        NfKind::Ids => {
            let p = cfg
                .patterns
                .clone()
                .ok_or_else(|| NfError::Config("the IDS needs a pattern set".into()))?;
            Box::new(Ids::new(store, p)?)
        }
        NfKind::Echo => unreachable!(),
    })
}

/// Instantiate the function for RSS ring `ring`.
pub fn build_nf(cfg: &NfConfig, ring: usize) -> Result<Box<dyn NetworkFunction + Send>, NfError> {
    if cfg.kind == NfKind::Echo {
        return Ok(Box::new(EchoNf::new(cfg.busy_work)));
    }
    let mut sm = StateManagerConfig::new(cfg.cache_entries, cfg.state_size(), cfg.expiration_s);
    if let Some(s) = cfg.seed {
        sm = sm.seed(s.wrapping_add(ring as u64));
    }
    match cfg.variant {
        Variant::Native => wrap(cfg, NativeStore::new(cfg.state_size(), cfg.expiration_s)),
        Variant::Strawman => wrap(cfg, StrawmanStore::new(&sm)?),
        Variant::Managed => wrap(cfg, StateManager::new(sm)?),
    }
}

#[derive(Debug, Clone, Default)]
pub struct NfReport {
    /// All rings' events, ordered by timestamp.
    pub events: Vec<Event>,
    pub stats: NfStats,
    pub per_ring: Vec<NfStats>,
    pub etap: EtapCounters,
    /// Time spent inside the function's `process`.
    pub busy: Duration,
}

fn ring_loop(
    mut port: RxPort,
    mut nf: Box<dyn NetworkFunction + Send>,
    tx: &Mutex<TxPort>,
    clock: &TrustedClock,
) -> Result<(Vec<Event>, NfStats, Duration), NfError> {
    let mut events = Vec::new();
    let mut busy = Duration::ZERO;
    loop {
        let p = match port.read_pkt(Mode::Blocking) {
            Ok(p) => p,
            Err(EtapError::Shutdown) => break,
            Err(e) => return Err(e.into()),
        };
        let t = Instant::now();
        nf.process(p.timestamp(), p.data(), clock.now(), &mut events)?;
        busy += t.elapsed();
        match tx.lock().unwrap().write_pkt(p.timestamp(), p.data(), Mode::Blocking) {
            Ok(()) => {}
            Err(EtapError::Shutdown) => break,
            Err(e) => return Err(e.into()),
        }
    }
    nf.finish(clock.now(), &mut events)?;
    Ok((events, nf.stats(), busy))
}

/// Run the configured function on every rx ring of `dev` until the peer
/// hangs up, forwarding every packet back out.
pub fn serve(mut dev: EtapDevice, cfg: &NfConfig) -> Result<NfReport, NfError> {
    let ports = dev.take_rx_ports();
    let tx = Mutex::new(
        dev.take_tx_port()
            .ok_or_else(|| NfError::Config("tx port already taken".into()))?,
    );
    let clock = dev.clock();
    let nfs = ports
        .iter()
        .map(|p| build_nf(cfg, p.index()))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = ports
            .into_iter()
            .zip(nfs)
            .map(|(port, nf)| {
                let (tx, clock) = (&tx, &*clock);
                std::thread::Builder::new()
                    .name(format!("nf-{}", port.index()))
                    .spawn_scoped(s, move || ring_loop(port, nf, tx, clock))
                    .expect("spawn nf thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("nf thread panicked")).collect()
    });
    drop(tx);
    let etap = dev.join()?;
    let mut report = NfReport {
        etap,
        ..Default::default()
    };
    for r in results {
        let (ev, st, busy) = r?;
        report.events.extend(ev);
        report.stats.merge(&st);
        report.per_ring.push(st);
        report.busy += busy;
    }
    report.events.sort_by_key(|e| e.ts_us);
    Ok(report)
}

/// Outcome of [`replay`].
#[derive(Debug, Clone)]
pub struct Replay {
    pub events: Vec<Event>,
    /// Time spent processing packets, end-of-trace reporting excluded.
    pub busy: Duration,
    /// Counters as they stood after the last packet, before `finish`.
    pub stats: NfStats,
}

/// Drive `nf` directly from a trace, with packet timestamps as the clock.
/// Time is measured in chunks so trace generation is not counted.
pub fn replay<I>(nf: &mut dyn NetworkFunction, trace: I) -> Result<Replay, NfError>
where
    I: IntoIterator<Item = (u64, Vec<u8>)>,
{
    const CHUNK: usize = 4096;
    let mut events = Vec::new();
    let mut busy = Duration::ZERO;
    let mut it = trace.into_iter();
    let mut chunk = Vec::with_capacity(CHUNK);
    let mut last = 0;
    loop {
        chunk.clear();
        chunk.extend(it.by_ref().take(CHUNK));
        if chunk.is_empty() {
            break;
        }
        let t = Instant::now();
        for (ts, data) in &chunk {
            nf.process(*ts, data, *ts, &mut events)?;
        }
        busy += t.elapsed();
        last = chunk.last().unwrap().0;
    }
    let stats = nf.stats();
    nf.finish(last, &mut events)?;
    Ok(Replay { events, busy, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::AeadAlgorithm;
    use crate::etap::EtapConfig;
    use crate::gateway::{run_gateway, GatewayConfig, SizeDist, Source, SynthConfig};
    use crate::link::duplex;
    use crate::nf::oracle;
    use crate::wire::ChannelKeys;

    fn trace(count: u64, flows: usize) -> SynthConfig {
        SynthConfig {
            count,
            flows,
            pkt_size: SizeDist::Uniform { min: 64, max: 600 },
            fin_prob: 0.01,
            udp_fraction: 0.2,
            patterns: vec![b"attack".to_vec(), b"GET /admin".to_vec()],
            pattern_prob: 0.1,
            seed: 11,
            ..Default::default()
        }
    }

    fn packets(cfg: &SynthConfig) -> Vec<(u64, Vec<u8>)> {
        Source::Synth(cfg.clone()).open().unwrap().map(Result::unwrap).collect()
    }

    #[test]
    fn variants_match_oracles() {
        let t = packets(&trace(20_000, 500));
        let pats = PatternSet::new(vec![b"attack".to_vec(), b"GET /admin".to_vec(), b"tt".to_vec()]).unwrap();
        let fm_ref = oracle::normalize(&oracle::flowmeter(t.iter().map(|(ts, d)| (*ts, &d[..]))));
        let ids_ref = oracle::normalize(&oracle::ids(t.iter().map(|(ts, d)| (*ts, &d[..])), pats.patterns()));
        assert!(fm_ref.len() > 500);
        assert!(ids_ref.len() > 100);
        for v in Variant::ALL {
            for kind in [NfKind::FlowMeter, NfKind::Ids] {
                let cfg = NfConfig {
                    variant: v,
                    cache_entries: 64,
                    patterns: Some(pats.clone()),
                    seed: Some(1),
                    ..NfConfig::new(kind)
                };
                let mut nf = build_nf(&cfg, 0).unwrap();
                let ev = replay(nf.as_mut(), t.iter().cloned()).unwrap().events;
                let want = if kind == NfKind::FlowMeter { &fm_ref } else { &ids_ref };
                assert_eq!(&oracle::normalize(&ev), want, "{v} {kind}");
            }
        }
    }

    #[test]
    fn serve_over_tunnel_with_two_rings() {
        let synth = trace(5_000, 300);
        let (g, e) = duplex(Duration::ZERO);
        let (gk, ek) = ChannelKeys::pair(b"nf", AeadAlgorithm::Aes256Gcm);
        let src = Source::Synth(synth.clone());
        let gw = std::thread::spawn(move || {
            run_gateway(src.open().unwrap(), g, gk, &GatewayConfig::default()).unwrap()
        });
        let dev = EtapDevice::start(
            EtapConfig {
                num_rx_rings: 2,
                ..Default::default()
            },
            ek,
            e,
        )
        .unwrap();
        let cfg = NfConfig {
            cache_entries: 32,
            ..NfConfig::new(NfKind::FlowMeter)
        };
        let report = serve(dev, &cfg).unwrap();
        let gw = gw.join().unwrap();
        assert_eq!(gw.stats.packets_received, 5_000);
        assert_eq!(report.stats.packets, 5_000);
        assert_eq!(report.per_ring.len(), 2);
        assert!(report.per_ring.iter().all(|s| s.packets > 1000));
        let t = packets(&synth);
        let want = oracle::normalize(&oracle::flowmeter(t.iter().map(|(ts, d)| (*ts, &d[..]))));
        assert_eq!(oracle::normalize(&report.events), want);
    }

    #[test]
    fn ids_without_patterns_is_rejected() {
        assert!(matches!(build_nf(&NfConfig::new(NfKind::Ids), 0), Err(NfError::Config(_))));
        assert_eq!("strawman".parse::<Variant>().unwrap(), Variant::Strawman);
        assert!("x".parse::<NfKind>().is_err());
    }
}
