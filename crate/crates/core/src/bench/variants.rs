use sha2::{Digest, Sha256};

use super::{BenchError, RunResult};
use crate::gateway::{SizeDist, SynthConfig, SynthSource};
use crate::nf::{build_nf, oracle, replay, NfConfig, NfKind, PatternSet, Replay, Variant};

/// Workload for the state-management comparison. The trace is replayed
/// straight into the function (no tunnel), so the numbers isolate the cost
/// of keeping flow state.
#[derive(Debug, Clone)]
pub struct VariantsSpec {
    pub nf: NfKind,
    pub flows: usize,
    pub pkt_size: SizeDist,
    pub count: u64,
    pub zipf: f64,
    pub cache_entries: usize,
    pub seed: u64,
    pub fin_prob: f64,
    /// Required for the IDS; also planted into the generated payloads.
    pub patterns: Option<PatternSet>,
    pub variants: Vec<Variant>,
}

impl Default for VariantsSpec {
    fn default() -> Self {
        VariantsSpec {
            nf: NfKind::FlowMeter,
            flows: 600_000,
            pkt_size: SizeDist::Fixed(512),
            count: 2_000_000,
            zipf: 1.1,
            cache_entries: 16 * 1024,
            seed: 1,
            fin_prob: 0.0,
            patterns: None,
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl VariantsSpec {
    pub fn trace(&self) -> Result<SynthSource, BenchError> {
        SynthSource::new(SynthConfig {
            flows: self.flows,
            zipf: self.zipf,
            pkt_size: self.pkt_size,
            count: self.count,
            seed: self.seed,
            fin_prob: self.fin_prob,
            patterns: self.patterns.as_ref().map(|p| p.patterns().to_vec()).unwrap_or_default(),
            pattern_prob: if self.patterns.is_some() { 0.05 } else { 0.0 },
            ..Default::default()
        })
        .map_err(BenchError::Config)
    }
}

/// Replay the same trace through each variant. `events_digest` is equal
/// across rows exactly when the variants produced the same events.
pub fn run_variants(spec: &VariantsSpec) -> Result<Vec<RunResult>, BenchError> {
    let mut out = Vec::new();
    for &v in &spec.variants {
        let cfg = NfConfig {
            variant: v,
            cache_entries: spec.cache_entries,
            patterns: spec.patterns.clone(),
            seed: Some(spec.seed),
            // nothing should time out inside the trace
            expiration_s: u32::MAX,
            ..NfConfig::new(spec.nf)
        };
        let mut nf = build_nf(&cfg, 0)?;
        let mut bytes = 0u64;
        let trace = spec.trace()?.inspect(|(_, d)| bytes += d.len() as u64);
        let Replay { events, busy, stats: st } = replay(nf.as_mut(), trace)?;
        let mut h = Sha256::new();
        for (fid, kind, detail) in oracle::normalize(&events) {
            h.update(fid.to_bytes());
            h.update(kind.as_str());
            h.update(detail.as_bytes());
            h.update(b"\n");
        }
        let secs = busy.as_secs_f64();
        log::info!("{v}: {:.3} us/pkt, miss rate {:.4}", secs * 1e6 / st.packets as f64, st.state.miss_rate());
        out.push(RunResult {
            param: "variant".into(),
            value: v.to_string(),
            packets: st.packets,
            bytes,
            elapsed_s: secs,
            mbps: bytes as f64 * 8.0 / secs / 1e6,
            mpps: st.packets as f64 / secs / 1e6,
            lat_mean_us: secs * 1e6 / st.packets as f64,
            miss_rate: st.state.miss_rate(),
            seals: st.state.seals,
            opens: st.state.opens,
            events: events.len() as u64,
            events_digest: h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect(),
            ..Default::default()
        });
    }
    Ok(out)
}
