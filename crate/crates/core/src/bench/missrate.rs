use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::Path;

use super::BenchError;
use crate::gateway::{PcapReader, SynthConfig, SynthSource};
use crate::packet::{self, FlowId};
use crate::par::{self, Execution};
use crate::statemgmt::{FlowStateStore, StateManager, StateManagerConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissRow {
    pub cache_entries: usize,
    pub tracks: u64,
    pub misses: u64,
    pub distinct_flows: u64,
    pub miss_rate: f64,
}

pub const MISS_CSV_HEADER: &str = "cache_entries,tracks,misses,distinct_flows,miss_rate";

impl MissRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6}",
            self.cache_entries, self.tracks, self.misses, self.distinct_flows, self.miss_rate
        )
    }

    pub fn write_csv<W: Write>(mut w: W, rows: &[MissRow]) -> io::Result<()> {
        writeln!(w, "{MISS_CSV_HEADER}")?;
        for r in rows {
            writeln!(w, "{}", r.csv_row())?;
        }
        w.flush()
    }
}

/// Canonical flow ids of every parseable packet in a capture file.
pub fn fids_from_pcap(path: &Path) -> Result<Vec<FlowId>, BenchError> {
    let r = PcapReader::new(BufReader::new(File::open(path)?))
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let mut out = Vec::new();
    for p in r {
        let p = p.map_err(|e| BenchError::Config(e.to_string()))?;
        if let Ok(parsed) = packet::parse(&p.data) {
            out.push(parsed.fid.canonical().0);
        }
    }
    Ok(out)
}

/// Canonical flow ids of a synthetic trace.
pub fn fids_from_synth(cfg: SynthConfig) -> Result<Vec<FlowId>, BenchError> {
    Ok(SynthSource::new(cfg)
        .map_err(BenchError::Config)?
        .filter_map(|(_, d)| packet::parse(&d).ok().map(|p| p.fid.canonical().0))
        .collect())
}

/// Replay the flow sequence through a fresh state manager per cache size
/// and count misses. Cache sizes are independent and run in parallel under
/// `exec`.
pub fn measure_miss_rate(
    fids: &[FlowId],
    cache_sizes: &[usize],
    state_size: usize,
    exec: Execution,
) -> Result<Vec<MissRow>, BenchError> {
    let distinct = fids.iter().collect::<HashSet<_>>().len() as u64;
    par::map(exec, cache_sizes, |&c| {
        let cfg = StateManagerConfig::new(c, state_size, u32::MAX).seed(c as u64);
        let mut m = StateManager::new(cfg)?;
        for f in fids {
            m.track(f, 0)?;
        }
        let s = m.stats();
        Ok(MissRow {
            cache_entries: c,
            tracks: s.tracks,
            misses: s.cache_misses,
            distinct_flows: distinct,
            miss_rate: s.miss_rate(),
        })
    })
    .into_iter()
    .collect()
}
