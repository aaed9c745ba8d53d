//! Acceptance checks, one per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute one
//! after another on a single thread: several of them time things, and the
//! default harness would run them concurrently. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 3 7`.
//!
//! Criteria 1-10 are hard: any failure makes the binary exit non-zero.
//! Criteria 11-15 are desk-scale shape checks with soft thresholds; they
//! are evaluated at their stated tolerances and reported as PASS or FAIL,
//! but a FAIL there does not fail the run.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Cursor, Write};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use etapbox::bench::{
    fids_from_synth, measure_miss_rate, ring_throughput, run_sweep, run_variants, RunConfig,
    RunResult, SweepParam, SweepSpec, SyncMechanism, VariantsSpec,
};
use etapbox::boundary::ArenaKind;
use etapbox::crypto::AeadAlgorithm;
use etapbox::etap::{EtapConfig, EtapDevice, EtapError, LinkRx, LinkTx, Mode, TrustedClock};
use etapbox::gateway::{run_gateway, GatewayConfig, SizeDist, Source, SynthConfig};
use etapbox::link::{duplex, Endpoint};
use etapbox::nf::{build_nf, oracle, replay, NfConfig, NfKind, PatternSet, Variant};
use etapbox::packet::{FlowDirection, FlowId};
use etapbox::par::Execution;
use etapbox::ring::{self, lamport, locked, RingConsumer, RingProducer};
use etapbox::statemgmt::{
    cuckoo, footprint, FlowStateStore, StateError, StateManager, StateManagerConfig, StateSealer,
};
use etapbox::wire::{
    pack_stream, parse_records, record_open, record_seal, ChannelKeys, Frame, PktInfo,
    RecordPacker, WireError, DATA_HEADER_LEN, MAX_PKT_LEN, RECORD_LEN, SEALED_RECORD_LEN,
};

type Verdict = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    soft: bool,
    run: fn() -> Verdict,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "codec round-trip", soft: false, run: c01_codec_round_trip },
    Criterion { id: 2, name: "fixed-size records", soft: false, run: c02_fixed_record_length },
    Criterion { id: 3, name: "integrity", soft: false, run: c03_integrity },
    Criterion { id: 4, name: "spsc ring", soft: false, run: c04_ring },
    Criterion { id: 5, name: "state-management oracle", soft: false, run: c05_state_oracle },
    Criterion { id: 6, name: "freshness", soft: false, run: c06_freshness },
    Criterion { id: 7, name: "cuckoo load factor", soft: false, run: c07_cuckoo },
    Criterion { id: 8, name: "footprint", soft: false, run: c08_footprint },
    Criterion { id: 9, name: "trusted clock", soft: false, run: c09_clock },
    Criterion { id: 10, name: "nf oracles", soft: false, run: c10_nf_oracles },
    Criterion { id: 11, name: "batch sweep shape", soft: true, run: c11_batch_sweep },
    Criterion { id: 12, name: "ring sweep knee", soft: true, run: c12_ring_sweep },
    Criterion { id: 13, name: "variant comparison", soft: true, run: c13_variants },
    Criterion { id: 14, name: "miss-rate curve", soft: true, run: c14_miss_rate },
    Criterion { id: 15, name: "seal cost", soft: true, run: c15_seal_cost },
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut lines = Vec::new();
    let mut hard_failures = 0;
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t = Instant::now();
        let verdict = match std::panic::catch_unwind(c.run) {
            Ok(v) => v,
            Err(p) => Err(format!(
                "panicked: {}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| p.downcast_ref::<&str>().copied())
                    .unwrap_or("?")
            )),
        };
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        let kind = if c.soft { " (soft)" } else { "" };
        let line = format!("criterion {:>2} {}{kind}: {tag} [{secs:.1} s] {detail}", c.id, c.name);
        println!("{line}");
        lines.push(line);
        if verdict.is_err() && !c.soft {
            hard_failures += 1;
        }
    }
    println!("\n---- acceptance summary ----");
    for l in &lines {
        println!("{l}");
    }
    if hard_failures > 0 {
        eprintln!("{hard_failures} hard criteria failed");
        std::process::exit(1);
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. codec

fn data_frame(rng: &mut StdRng, len: usize) -> Frame {
    let mut d = vec![0u8; len];
    rng.fill(&mut d[..]);
    Frame::Data(PktInfo::new(rng.random(), &d).unwrap())
}

fn random_frame(rng: &mut StdRng) -> Frame {
    match rng.random_range(0..20) {
        0 => Frame::HeartbeatReq(rng.random()),
        1 => Frame::HeartbeatResp(rng.random()),
        2..10 => {
            let len = rng.random_range(0..=96);
            data_frame(rng, len)
        }
        _ => {
            let len = rng.random_range(0..=MAX_PKT_LEN);
            data_frame(rng, len)
        }
    }
}

/// A frame sequence that crosses at least one record boundary inside a
/// frame. Every third sequence places a data frame so that the boundary
/// falls `k` bytes into it, `k` cycling through every header position.
fn frame_sequence(rng: &mut StdRng, i: usize) -> Vec<Frame> {
    let mut frames = Vec::new();
    let mut offset = 0usize;
    let mut straddles = 0;
    let push = |frames: &mut Vec<Frame>, f: Frame, offset: &mut usize, straddles: &mut usize| {
        let len = f.encoded_len();
        if *offset / RECORD_LEN != (*offset + len - 1) / RECORD_LEN {
            *straddles += 1;
        }
        *offset += len;
        frames.push(f);
    };
    if i.is_multiple_of(3) {
        let k = 1 + (i / 3) % DATA_HEADER_LEN;
        // ten MTU frames (15110 bytes), then a filler ending k bytes short
        // of the boundary
        for _ in 0..10 {
            let f = data_frame(rng, MAX_PKT_LEN);
            push(&mut frames, f, &mut offset, &mut straddles);
        }
        let filler = RECORD_LEN - k - offset - DATA_HEADER_LEN;
        let f = data_frame(rng, filler);
        push(&mut frames, f, &mut offset, &mut straddles);
        let len = rng.random_range(0..=MAX_PKT_LEN);
        let f = data_frame(rng, len);
        push(&mut frames, f, &mut offset, &mut straddles);
    }
    let target = RECORD_LEN + rng.random_range(0..2 * RECORD_LEN);
    while straddles == 0 || offset < target {
        let f = random_frame(rng);
        push(&mut frames, f, &mut offset, &mut straddles);
    }
    frames
}

fn c01_codec_round_trip() -> Verdict {
    let t = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xc0dec);
    let (mut g, mut e) = ChannelKeys::pair(b"acceptance codec", AeadAlgorithm::Aes256Gcm);
    let (mut records, mut frames_total) = (0, 0);
    for i in 0..10_000 {
        let frames = frame_sequence(&mut rng, i);
        let plain = pack_stream(&frames, true).map_err(|e| e.to_string())?;
        let mut opened = Vec::with_capacity(plain.len());
        for r in &plain {
            let sealed = record_seal(&mut g.seal, r).map_err(|e| e.to_string())?;
            check(sealed.len() == SEALED_RECORD_LEN, || "sealed length".into())?;
            opened.push(record_open(&mut e.open, &sealed).map_err(|e| format!("sequence {i}: {e}"))?);
        }
        let back = parse_records(opened.iter().map(|r| &r[..])).map_err(|e| format!("sequence {i}: {e}"))?;
        check(back == frames, || format!("sequence {i}: frames differ after round trip"))?;
        records += plain.len();
        frames_total += frames.len();
    }
    let secs = t.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.1} s (limit 30 s)"))?;
    Ok(format!(
        "10000 sequences, {frames_total} frames, {records} records, every sequence split across records, {secs:.1} s"
    ))
}

// ---------------------------------------------------------------------------
// 2. fixed-size records

/// Writer that remembers how many bytes had been written at every flush.
struct Tap {
    inner: Box<dyn Write + Send>,
    written: u64,
    flushes: Arc<Mutex<Vec<u64>>>,
}

impl Write for Tap {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()?;
        self.flushes.lock().unwrap().push(self.written);
        Ok(())
    }
}

impl Drop for Tap {
    fn drop(&mut self) {
        self.flushes.lock().unwrap().push(self.written);
    }
}

fn echo_loop(mut dev: EtapDevice) -> Result<u64, EtapError> {
    let mut rx = dev.take_rx_ports().pop().unwrap();
    let mut tx = dev.take_tx_port().unwrap();
    let mut n = 0;
    loop {
        match rx.read_pkt(Mode::Blocking) {
            Ok(p) => {
                tx.write_pkt(p.timestamp(), p.data(), Mode::Blocking)?;
                n += 1;
            }
            Err(EtapError::Shutdown) => break,
            Err(e) => return Err(e),
        }
    }
    drop(tx);
    dev.join()?;
    Ok(n)
}

fn c02_fixed_record_length() -> Verdict {
    let mixes = [
        ("64 B", SizeDist::Fixed(64), 20_000),
        ("576 B", SizeDist::Fixed(576), 5_000),
        ("1500 B", SizeDist::Fixed(1500), 3_000),
        ("imix", SizeDist::Imix, 5_000),
        ("uniform 60-1500", SizeDist::Uniform { min: 60, max: 1500 }, 5_000),
        ("single packet", SizeDist::Fixed(100), 1),
    ];
    let mut lengths = BTreeMap::new();
    for (name, dist, count) in mixes {
        let (g, e) = duplex(Duration::ZERO);
        let (gk, ek) = ChannelKeys::pair(name.as_bytes(), AeadAlgorithm::Aes256Gcm);
        let up = Arc::new(Mutex::new(Vec::new()));
        let down = Arc::new(Mutex::new(Vec::new()));
        let g = Endpoint {
            reader: g.reader,
            writer: Box::new(Tap { inner: g.writer, written: 0, flushes: up.clone() }),
        };
        let dev = EtapDevice::start_with_io(
            EtapConfig { heartbeat_period_ms: 50, ..Default::default() },
            ek,
            Box::new(LinkRx(e.reader)),
            Box::new(LinkTx(Box::new(Tap { inner: e.writer, written: 0, flushes: down.clone() }))),
        )
        .map_err(|e| e.to_string())?;
        let echo = std::thread::spawn(move || echo_loop(dev));
        let src = Source::Synth(SynthConfig { count, pkt_size: dist, seed: 3, ..Default::default() });
        let cfg = GatewayConfig { heartbeat_period_ms: 50, ..Default::default() };
        let report = run_gateway(src.open().unwrap(), g, gk, &cfg).map_err(|e| format!("{name}: {e}"))?;
        let echoed = echo.join().unwrap().map_err(|e| format!("{name}: {e}"))?;
        check(echoed == count && report.stats.packets_received == count, || {
            format!("{name}: {echoed} echoed, {} received of {count}", report.stats.packets_received)
        })?;
        for (dir, log) in [("gateway->device", &up), ("device->gateway", &down)] {
            let log = log.lock().unwrap();
            let total = *log.last().unwrap_or(&0);
            check(total > 0, || format!("{name} {dir}: nothing on the wire"))?;
            // every flush point is a record boundary, so the stream is a
            // whole number of equal records at every moment it is exposed
            for &at in log.iter() {
                check(at % SEALED_RECORD_LEN as u64 == 0, || {
                    format!("{name} {dir}: stream exposed at byte {at}, not a record boundary")
                })?;
            }
            *lengths.entry(SEALED_RECORD_LEN).or_insert(0u64) += total / SEALED_RECORD_LEN as u64;
        }
    }
    check(lengths.len() == 1, || format!("record lengths {lengths:?}"))?;
    Ok(format!("6 mixes, both directions: {} records, all {SEALED_RECORD_LEN} B", lengths[&SEALED_RECORD_LEN]))
}

// ---------------------------------------------------------------------------
// 3. integrity

#[derive(Debug, Clone, Copy)]
enum Attack {
    BitFlip,
    Replay,
    Drop,
    Reorder,
}

/// Plaintext records carrying random data frames, batch size one.
fn plain_records(rng: &mut StdRng, n: usize) -> Vec<Vec<u8>> {
    let mut p = RecordPacker::new();
    while p.complete() < n {
        let len = rng.random_range(40..=MAX_PKT_LEN);
        let mut d = vec![0u8; len];
        rng.fill(&mut d[..]);
        p.push_frame(&Frame::Data(PktInfo::new(rng.random(), &d).unwrap())).unwrap();
    }
    p.take(n)
}

/// Feed `stream` to a device and collect everything it delivers.
type Delivered = Vec<(u64, Vec<u8>)>;

fn deliver(stream: Vec<u8>, keys: ChannelKeys) -> (Delivered, Result<(), EtapError>) {
    let cfg = EtapConfig { batch_size: 1, ring_size: 1024, heartbeat_period_ms: 0, ..Default::default() };
    let mut dev = EtapDevice::start_with_io(
        cfg,
        keys,
        Box::new(LinkRx(Box::new(Cursor::new(stream)))),
        Box::new(LinkTx(Box::new(io::sink()))),
    )
    .unwrap();
    let mut rx = dev.take_rx_ports().pop().unwrap();
    drop(dev.take_tx_port());
    let mut got = Vec::new();
    while let Ok(p) = rx.read_pkt(Mode::Blocking) {
        got.push((p.timestamp(), p.data().to_vec()));
    }
    drop(rx);
    (got, dev.join().map(|_| ()))
}

fn c03_integrity() -> Verdict {
    let mut rng = StdRng::seed_from_u64(0x1a7e);
    let plan = [(Attack::BitFlip, 1000), (Attack::Replay, 100), (Attack::Drop, 100), (Attack::Reorder, 100)];
    let mut trials = 0;
    for (attack, n) in plan {
        for t in 0..n {
            let (mut gk, ek) = ChannelKeys::pair(format!("integrity {t}").as_bytes(), AeadAlgorithm::Aes256Gcm);
            let plain = plain_records(&mut rng, 6);
            let mut sealed: Vec<Vec<u8>> = plain.iter().map(|r| record_seal(&mut gk.seal, r).unwrap()).collect();
            // position of the first record the receiver cannot accept
            let at = match attack {
                Attack::BitFlip => {
                    let k = rng.random_range(0..sealed.len());
                    let bit = rng.random_range(0..SEALED_RECORD_LEN * 8);
                    sealed[k][bit / 8] ^= 1 << (bit % 8);
                    k
                }
                Attack::Replay => {
                    let k = rng.random_range(1..sealed.len());
                    let old = sealed[rng.random_range(0..k)].clone();
                    sealed.insert(k, old);
                    k
                }
                Attack::Drop => {
                    let k = rng.random_range(0..sealed.len() - 1);
                    sealed.remove(k);
                    k
                }
                Attack::Reorder => {
                    let k = rng.random_range(0..sealed.len() - 1);
                    sealed.swap(k, k + 1);
                    k
                }
            };
            // frames completed by the records before the failure point
            let expect: Vec<(u64, Vec<u8>)> = parse_records(plain[..at].iter().map(|r| &r[..]))
                .unwrap()
                .into_iter()
                .map(|f| match f {
                    Frame::Data(p) => (p.timestamp(), p.data().to_vec()),
                    other => panic!("unexpected {other:?}"),
                })
                .collect();
            let (got, res) = deliver(sealed.concat(), ek);
            check(res == Err(EtapError::Wire(WireError::AuthFailure { seq: at as u64 })), || {
                format!("{attack:?} trial {t} at record {at}: device ended with {res:?}")
            })?;
            check(got == expect, || {
                format!(
                    "{attack:?} trial {t}: {} frames delivered, {} precede the failure",
                    got.len(),
                    expect.len()
                )
            })?;
            trials += 1;
        }
    }
    Ok(format!(
        "{trials} trials (1000 bit flips, 100 replays, 100 drops, 100 reorders): all rejected at the attacked record, nothing delivered past it"
    ))
}

// ---------------------------------------------------------------------------
// 4. ring

fn stress<P, C>(p: P, c: C, n: u64) -> Result<(), String>
where
    P: RingProducer<u64> + 'static,
    C: RingConsumer<u64> + 'static,
{
    let producer = std::thread::spawn(move || {
        let mut p = p;
        for i in 0..n {
            let mut v = i;
            while let Err(back) = p.push(v) {
                v = back;
                std::thread::yield_now();
            }
        }
    });
    let mut c = c;
    let mut next = 0u64;
    while next < n {
        match c.pop() {
            Some(v) if v == next => next += 1,
            Some(v) => {
                return Err(format!("expected item {next}, got {v}"));
            }
            None => std::thread::yield_now(),
        }
    }
    producer.join().unwrap();
    check(c.pop().is_none(), || "extra item after the last one".into())
}

fn c04_ring() -> Verdict {
    const N: u64 = 10_000_000;
    let (p, c) = ring::channel::<u64>(256);
    stress(p, c, N).map_err(|e| format!("lock-free ring: {e}"))?;
    let (p, c) = lamport::channel::<u64>(256);
    stress(p, c, N).map_err(|e| format!("lamport ring: {e}"))?;
    let (p, c) = locked::channel::<u64>(256, locked::LockMode::Block);
    stress(p, c, N).map_err(|e| format!("mutex ring: {e}"))?;

    // soft part: best of five runs each, 64-byte items
    let best = |m| (0..5).map(|_| ring_throughput(m, 256, 2_000_000)).min().unwrap();
    let lf = best(SyncMechanism::LockFree);
    let mx = best(SyncMechanism::Mutex);
    let ratio = mx.as_secs_f64() / lf.as_secs_f64();
    let mpps = |d: Duration| 2.0 / d.as_secs_f64();
    let soft = if ratio >= 2.0 { "met" } else { "NOT met (soft)" };
    Ok(format!(
        "10M items through lock-free, lamport and mutex rings: no loss, duplication or reordering; \
         throughput lock-free {:.1} Mpps vs mutex {:.1} Mpps = {ratio:.2}x, >=2x {soft}",
        mpps(lf),
        mpps(mx)
    ))
}

// ---------------------------------------------------------------------------
// 5. state-management oracle

/// Unbounded reference: every flow's plaintext state plus a model of which
/// flows an LRU cache of `c` entries would hold.
struct Reference {
    c: usize,
    timeout: u32,
    flows: HashMap<FlowId, (Vec<u8>, u32)>,
    lru: BTreeMap<u64, FlowId>,
    tick_of: HashMap<FlowId, u64>,
    tick: u64,
    state_size: usize,
}

impl Reference {
    fn new(c: usize, state_size: usize, timeout: u32) -> Self {
        Reference {
            c,
            timeout,
            flows: HashMap::new(),
            lru: BTreeMap::new(),
            tick_of: HashMap::new(),
            tick: 0,
            state_size,
        }
    }

    fn touch(&mut self, fid: FlowId) {
        self.tick += 1;
        if let Some(old) = self.tick_of.insert(fid, self.tick) {
            self.lru.remove(&old);
        } else if self.lru.len() == self.c {
            let (_, victim) = self.lru.pop_first().unwrap();
            self.tick_of.remove(&victim);
        }
        self.lru.insert(self.tick, fid);
    }

    fn track(&mut self, fid: FlowId, now: u32) -> (&mut Vec<u8>, bool) {
        self.touch(fid);
        let ss = self.state_size;
        let mut is_new = false;
        let e = self.flows.entry(fid).or_insert_with(|| {
            is_new = true;
            (vec![0; ss], now)
        });
        e.1 = now;
        (&mut e.0, is_new)
    }

    fn terminate(&mut self, fid: FlowId) -> bool {
        if let Some(t) = self.tick_of.remove(&fid) {
            self.lru.remove(&t);
        }
        self.flows.remove(&fid).is_some()
    }

    /// Only flows outside the cache age out.
    fn expire(&mut self, now: u32) -> usize {
        let before = self.flows.len();
        let (timeout, cached) = (self.timeout, &self.tick_of);
        self.flows
            .retain(|f, (_, last)| cached.contains_key(f) || now.saturating_sub(*last) <= timeout);
        before - self.flows.len()
    }
}

fn fid_of(i: u32) -> FlowId {
    FlowId {
        src_ip: [10, 1, (i >> 8) as u8, i as u8],
        dst_ip: [192, 168, (i >> 24) as u8, (i >> 16) as u8],
        src_port: 1024 + (i % 50_000) as u16,
        dst_port: 443,
        proto: 6,
    }
}

fn state_oracle_run(c: usize, ops: u64, seed: u64) -> Result<String, String> {
    const FIDS: u32 = 100_000;
    const SS: usize = 32;
    const TIMEOUT: u32 = 20;
    let mut rng = StdRng::seed_from_u64(seed);
    let cfg = StateManagerConfig::new(c, SS, TIMEOUT).seed(seed);
    let mut m = StateManager::new(cfg).map_err(|e| e.to_string())?;
    let mut r = Reference::new(c, SS, TIMEOUT);
    let trusted = m.boundary().usage(ArenaKind::Trusted);
    let hot = (c as u32 * 3 / 4).max(1);
    let mut now = 0u32;
    let (mut tracks, mut terms, mut expired) = (0u64, 0u64, 0u64);
    for op in 0..ops {
        let roll = rng.random_range(0..10_000);
        let i = if rng.random_bool(0.5) { rng.random_range(0..hot) } else { rng.random_range(0..FIDS) };
        let fid = fid_of(i).canonical().0;
        match roll {
            0..10 => now += 1,
            10..15 => {
                let (a, b) = (m.expire(now), r.expire(now));
                check(a == b, || format!("op {op}: expire({now}) removed {a}, reference {b}"))?;
                expired += a as u64;
            }
            15..515 => {
                let ok = m.terminate(&fid);
                let want = r.terminate(fid);
                check(ok.is_ok() == want, || format!("op {op}: terminate {fid} gave {ok:?}"))?;
                if let Err(e) = ok {
                    check(e == StateError::NotFound(fid), || format!("op {op}: {e}"))?;
                }
                terms += 1;
            }
            _ => {
                let reversed = rng.random_bool(0.5);
                let asked = if reversed { fid.reversed() } else { fid };
                let byte: u8 = rng.random();
                let pos = rng.random_range(0..SS);
                let t = m.track(&asked, now).map_err(|e| format!("op {op}: {e}"))?;
                let (want, want_new) = r.track(fid, now);
                check(t.state == &want[..], || format!("op {op}: state of {fid} differs from reference"))?;
                check(t.is_new == want_new, || format!("op {op}: is_new {} for {fid}", t.is_new))?;
                let dir = if reversed { FlowDirection::Reverse } else { FlowDirection::Forward };
                check(t.direction == dir, || format!("op {op}: direction {:?}", t.direction))?;
                t.state[pos] ^= byte;
                want[pos] ^= byte;
                tracks += 1;
            }
        }
        check(m.cached() <= c, || format!("op {op}: {} plaintext states cached, C = {c}", m.cached()))?;
        check(m.boundary().usage(ArenaKind::Trusted) == trusted, || {
            format!("op {op}: trusted arena grew to {}", m.boundary().usage(ArenaKind::Trusted))
        })?;
        if op % 100_000 == 0 {
            m.check_invariants().map_err(|e| format!("op {op}: {e}"))?;
        }
    }
    check(m.tracked() == r.flows.len(), || format!("{} tracked, reference {}", m.tracked(), r.flows.len()))?;
    // final sweep: every surviving state still matches
    let mut ids: Vec<FlowId> = r.flows.keys().copied().collect();
    ids.sort_unstable();
    check(m.flow_ids() == ids, || "tracked flow sets differ".into())?;
    let st = m.stats();
    Ok(format!(
        "C={c}: {tracks} tracks ({:.1}% misses), {terms} terminates, {expired} expired",
        st.miss_rate() * 100.0
    ))
}

fn c05_state_oracle() -> Verdict {
    let mut parts = Vec::new();
    for (k, c) in [2usize, 64, 4096].into_iter().enumerate() {
        parts.push(state_oracle_run(c, 1_000_000, 0x5eed + k as u64)?);
    }
    Ok(format!("1M ops over 100k fids each; {}", parts.join("; ")))
}

// ---------------------------------------------------------------------------
// 6. freshness

fn c06_freshness() -> Verdict {
    let mut rejected = 0;
    for trial in 0..100u64 {
        let mut rng = StdRng::seed_from_u64(trial);
        let ss = [16, 64, 512, 6144][trial as usize % 4];
        let mut m = StateManager::new(StateManagerConfig::new(2, ss, 60).seed(trial)).unwrap();
        let (a, b, c) = (fid_of(3 * trial as u32), fid_of(3 * trial as u32 + 1), fid_of(3 * trial as u32 + 2));
        let mut fill = |m: &mut StateManager, f: &FlowId| {
            let t = m.track(f, 0).unwrap();
            rng.fill(&mut t.state[..]);
        };
        fill(&mut m, &a);
        fill(&mut m, &b);
        fill(&mut m, &c); // a is sealed out
        let entry = m.store_entry(&a).ok_or("flow not swapped out")?;
        let snapshot = m.boundary().bytes(entry).unwrap().to_vec();
        // a comes back, changes and is sealed out again under a new count
        fill(&mut m, &a);
        fill(&mut m, &b);
        fill(&mut m, &c);
        let entry = m.store_entry(&a).ok_or("flow not swapped out again")?;
        m.boundary_mut().untrusted_mut(entry).unwrap().copy_from_slice(&snapshot);
        match m.track(&a, 0) {
            Err(StateError::Auth(f)) if f == a.canonical().0 => rejected += 1,
            other => return Err(format!("trial {trial}: replayed entry gave {:?}", other.map(|t| t.is_new))),
        }
    }
    check(rejected == 100, || format!("{rejected}/100 rejected"))?;
    Ok("snapshot replay rejected in 100/100 trials".into())
}

// ---------------------------------------------------------------------------
// 7. cuckoo

fn c07_cuckoo() -> Verdict {
    let lfs: Vec<f64> = (0..100u64).map(|s| cuckoo::fill_until_resize(1 << 16, s)).collect();
    let reached = lfs.iter().filter(|&&l| l >= 0.93).count();
    let min = lfs.iter().copied().fold(f64::MAX, f64::min);
    let mean = lfs.iter().sum::<f64>() / lfs.len() as f64;
    check(reached >= 95, || format!("{reached}/100 trials reached 93% (min {min:.4})"))?;
    Ok(format!(
        "{reached}/100 trials reached 93% load before the first resize (65536 slots, mean {:.2}%, min {:.2}%)",
        mean * 100.0,
        min * 100.0
    ))
}

// ---------------------------------------------------------------------------
// 8. footprint

fn c08_footprint() -> Verdict {
    const MIB: f64 = (1u64 << 20) as f64;
    let f = footprint(16 * 1024, 1 << 20, 512);
    let mb = f.metadata_bytes() as f64 / MIB;
    check((mb - 33.8).abs() / 33.8 <= 0.05, || format!("{mb:.2} MB"))?;
    // a live manager reports the same accounting
    let mut m = StateManager::new(StateManagerConfig::new(16 * 1024, 16, u32::MAX).seed(8)).unwrap();
    for i in 0..(1u32 << 20) {
        m.track(&fid_of(i), 0).map_err(|e| e.to_string())?;
    }
    let live = m.footprint();
    check(live.metadata_bytes() == f.metadata_bytes(), || {
        format!("live manager reports {} B of metadata, formula {}", live.metadata_bytes(), f.metadata_bytes())
    })?;
    Ok(format!(
        "16K cache + 1M flows: {mb:.2} MB of metadata ({:+.1}% vs 33.8 MB); live manager agrees",
        (mb - 33.8) / 33.8 * 100.0
    ))
}

// ---------------------------------------------------------------------------
// 9. clock

fn c09_clock() -> Verdict {
    // monotonic under adversarial orderings: reversed, jittered, extremes
    let mut rng = StdRng::seed_from_u64(9);
    let orderings: Vec<Vec<u64>> = vec![
        (0..10_000u64).rev().map(|i| i * 1000).collect(),
        (0..10_000u64).map(|i| 1_000_000 + i * 10 + rng.random_range(0..5_000)).collect(),
        (0..10_000).map(|_| rng.random()).collect(),
        vec![u64::MAX, 0, u64::MAX - 1, 1, 0, u64::MAX],
        (0..10_000u64).map(|i| if i % 2 == 0 { i } else { u64::MAX - i }).collect(),
    ];
    for (k, ts) in orderings.iter().enumerate() {
        for off in [0i64, -5_000_000, 5_000_000] {
            let c = TrustedClock::new(off);
            let mut last = 0;
            for (i, &t) in ts.iter().enumerate() {
                c.set_rtt(rng.random_range(0..100_000));
                let now = c.update(t);
                check(now >= last && c.now() == now, || {
                    format!("ordering {k}, offset {off}: clock went from {last} to {now} at step {i}")
                })?;
                last = now;
            }
        }
    }

    // round-trip estimate over a link with 5 ms each way
    let injected = Duration::from_millis(10);
    let (g, e) = duplex(injected / 2);
    let (gk, ek) = ChannelKeys::pair(b"clock", AeadAlgorithm::Aes256Gcm);
    let dev = EtapDevice::start(EtapConfig { heartbeat_period_ms: 20, ..Default::default() }, ek, e)
        .map_err(|e| e.to_string())?;
    let clock = dev.clock();
    let echo = std::thread::spawn(move || echo_loop(dev));
    let src = Source::Synth(SynthConfig { count: 3000, interval_us: 100, ..Default::default() });
    let cfg = GatewayConfig { heartbeat_period_ms: 20, ..Default::default() };
    // pace the source so the session lasts long enough for several heartbeats
    let paced = src.open().unwrap().inspect(|_| std::thread::sleep(Duration::from_micros(50)));
    let report = run_gateway(Box::new(paced), g, gk, &cfg).map_err(|e| e.to_string())?;
    echo.join().unwrap().map_err(|e| e.to_string())?;
    let want = injected.as_micros() as f64;
    let dev_rtt = clock.rtt() as f64;
    let gw_rtt = report.stats.heartbeat_rtt_us.unwrap_or(0) as f64;
    for (who, rtt) in [("device", dev_rtt), ("gateway", gw_rtt)] {
        check((rtt - want).abs() <= 0.2 * want, || {
            format!("{who} RTT estimate {rtt:.0} us vs injected {want:.0} us")
        })?;
    }
    Ok(format!(
        "monotonic over 5 adversarial orderings x 3 offsets; RTT estimates device {:.2} ms, gateway {:.2} ms vs injected 10 ms",
        dev_rtt / 1000.0,
        gw_rtt / 1000.0
    ))
}

// ---------------------------------------------------------------------------
// 10. network-function oracles

fn c10_nf_oracles() -> Verdict {
    let pats = PatternSet::new(vec![
        b"attack".to_vec(),
        b"GET /admin".to_vec(),
        b"\x90\x90\x90\x90".to_vec(),
        b"aa".to_vec(),
    ])
    .map_err(|e| e.to_string())?;
    let synth = SynthConfig {
        count: 1_000_000,
        flows: 50_000,
        zipf: 1.0,
        pkt_size: SizeDist::Uniform { min: 64, max: 600 },
        fin_prob: 0.002,
        udp_fraction: 0.2,
        patterns: pats.patterns().to_vec(),
        pattern_prob: 0.05,
        seed: 10,
        ..Default::default()
    };
    let trace: Vec<(u64, Vec<u8>)> =
        Source::Synth(synth).open().unwrap().map(Result::unwrap).collect();
    let view = || trace.iter().map(|(t, d)| (*t, &d[..]));
    let fm_ref = oracle::normalize(&oracle::flowmeter(view()));
    let ids_ref = oracle::normalize(&oracle::ids(view(), pats.patterns()));
    let mut lines = Vec::new();
    for kind in [NfKind::FlowMeter, NfKind::Ids] {
        let want = if kind == NfKind::FlowMeter { &fm_ref } else { &ids_ref };
        check(!want.is_empty(), || format!("{kind}: oracle produced no events"))?;
        for v in Variant::ALL {
            let cfg = NfConfig {
                variant: v,
                cache_entries: 4096,
                patterns: Some(pats.clone()),
                seed: Some(10),
                ..NfConfig::new(kind)
            };
            let mut f = build_nf(&cfg, 0).map_err(|e| e.to_string())?;
            let run = replay(f.as_mut(), trace.iter().cloned()).map_err(|e| e.to_string())?;
            let got = oracle::normalize(&run.events);
            check(&got == want, || {
                format!("{kind}/{v}: {} events vs {} from the oracle", got.len(), want.len())
            })?;
        }
        lines.push(format!("{kind} {} events", want.len()));
    }
    Ok(format!(
        "1M-packet trace, 50k flows, cache 4096: {} match the oracles for native, strawman and managed",
        lines.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 11-15. shape checks

/// Median over repetitions: on a small shared machine single runs swing by
/// around 10%, mostly from scheduler hiccups that only ever slow a run down.
fn median_mpps(rows: &[RunResult], value: &str) -> f64 {
    let mut v: Vec<f64> = rows.iter().filter(|r| r.value == value).map(|r| r.mpps).collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn sweep(param: SweepParam, values: &[&str]) -> Result<Vec<RunResult>, String> {
    run_sweep(&SweepSpec {
        param,
        values: values.iter().map(|s| s.to_string()).collect(),
        base: RunConfig { count: 1_000_000, ..Default::default() },
        repetitions: 5,
    })
    .map_err(|e| e.to_string())
}

fn c11_batch_sweep() -> Verdict {
    let rows = sweep(SweepParam::BatchSize, &["1", "10", "1000"])?;
    let (b1, b10, b1000) = (median_mpps(&rows, "1"), median_mpps(&rows, "10"), median_mpps(&rows, "1000"));
    let detail = format!("64 B packets, median of 5: batch 1 {b1:.3}, 10 {b10:.3}, 1000 {b1000:.3} Mpps");
    check(b10 > b1 && b10 > b1000, || format!("{detail}; batch 10 is not above both"))?;
    Ok(detail)
}

fn c12_ring_sweep() -> Verdict {
    let rows = sweep(SweepParam::RingSize, &["32", "256", "1024"])?;
    let (r32, r256, r1024) = (median_mpps(&rows, "32"), median_mpps(&rows, "256"), median_mpps(&rows, "1024"));
    let detail = format!(
        "median of 5: ring 32 {r32:.3}, 256 {r256:.3}, 1024 {r1024:.3} Mpps (256/1024 = {:.3}, 32/1024 = {:.3})",
        r256 / r1024,
        r32 / r1024
    );
    check((r256 - r1024).abs() <= 0.10 * r1024, || format!("{detail}; 256 not within 10% of 1024"))?;
    // "materially below": outside the same 10% band
    check(r32 < 0.90 * r1024, || format!("{detail}; 32 not materially below 1024"))?;
    Ok(detail)
}

fn c13_variants() -> Verdict {
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for cache in [16 * 1024, 32 * 1024] {
        let rows = run_variants(&VariantsSpec { cache_entries: cache, ..Default::default() })
            .map_err(|e| e.to_string())?;
        let lat = |v: Variant| rows.iter().find(|r| r.value == v.to_string()).unwrap().lat_mean_us;
        let (native, straw, managed) = (lat(Variant::Native), lat(Variant::Strawman), lat(Variant::Managed));
        let miss = rows.iter().find(|r| r.value == "managed").unwrap().miss_rate;
        let ratio = straw / managed;
        let overhead = managed - native;
        parts.push(format!(
            "cache {cache}: native {native:.3}, strawman {straw:.3}, managed {managed:.3} us/pkt \
             (miss {miss:.3}); strawman/managed {ratio:.2}x, managed-native {overhead:.3} us"
        ));
        if ratio < 3.0 {
            failures.push(format!("cache {cache}: managed only {ratio:.2}x faster than strawman (need 3x)"));
        }
        if overhead >= 2.0 {
            failures.push(format!("cache {cache}: overhead {overhead:.3} us >= 2 us"));
        }
    }
    let detail = format!("600k flows, 512 B states, zipf 1.1: {}", parts.join("; "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail} -- {}", failures.join("; ")))
    }
}

fn c14_miss_rate() -> Verdict {
    let fids = fids_from_synth(SynthConfig {
        flows: 600_000,
        zipf: 1.1,
        count: 4_000_000,
        seed: 1,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let sizes = [1024, 4096, 16384, 32768];
    let rows = measure_miss_rate(&fids, &sizes, 512, Execution::default()).map_err(|e| e.to_string())?;
    let curve: Vec<String> = rows.iter().map(|r| format!("{}: {:.4}", r.cache_entries, r.miss_rate)).collect();
    let detail = format!("zipf 1.1 over 600k flows, 4M packets; {}", curve.join(", "));
    check(rows.windows(2).all(|w| w[1].miss_rate <= w[0].miss_rate), || format!("{detail}; not monotone"))?;
    let at16k = rows.iter().find(|r| r.cache_entries == 16384).unwrap().miss_rate;
    check(at16k < 0.20, || format!("{detail}; {at16k:.4} >= 20% at 16K"))?;
    Ok(detail)
}

fn c15_seal_cost() -> Verdict {
    let sealer = StateSealer::new(AeadAlgorithm::Aes256Gcm, &[7; 32], [1, 2, 3, 4]);
    let fid = fid_of(15);
    let mut state = vec![0x5au8; 6 * 1024];
    let mut samples = Vec::with_capacity(31);
    for round in 0..31u64 {
        let t = Instant::now();
        for i in 0..200 {
            std::hint::black_box(sealer.seal_state(&fid, round * 1000 + i, &mut state));
        }
        samples.push(t.elapsed().as_secs_f64() * 1e6 / 200.0);
    }
    samples.sort_by(f64::total_cmp);
    let median = samples[samples.len() / 2];
    let detail = format!("6 KB state seal: median {median:.2} us (reference 2.6 us, allowed 0.52-13 us)");
    check((2.6 / 5.0..=2.6 * 5.0).contains(&median), || detail.clone())?;
    Ok(detail)
}
