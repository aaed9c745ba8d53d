//! Reproduction harness: parameter sweeps over the full tunnel + device +
//! function pipeline, a three-way comparison of state-management
//! strategies, and cache miss-rate curves. Results are flat CSV rows.

mod missrate;
mod sweep;
mod variants;

use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::etap::EtapError;
use crate::gateway::GatewayError;
use crate::nf::NfError;
use crate::statemgmt::StateError;

pub use missrate::{fids_from_pcap, fids_from_synth, measure_miss_rate, MissRow, MISS_CSV_HEADER};
pub use sweep::{ring_throughput, run_once, run_sweep, RunConfig, SweepParam, SweepSpec, SyncMechanism};
pub use variants::{run_variants, VariantsSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Nf(#[from] NfError),
    #[error(transparent)]
    Etap(#[from] EtapError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One measured run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunResult {
    pub param: String,
    pub value: String,
    pub rep: u32,
    pub packets: u64,
    pub bytes: u64,
    pub elapsed_s: f64,
    pub mbps: f64,
    pub mpps: f64,
    pub lat_mean_us: f64,
    pub lat_p50_us: f64,
    pub lat_p99_us: f64,
    pub miss_rate: f64,
    pub seals: u64,
    pub opens: u64,
    pub crossings: u64,
    /// Number of function events and a digest over them, so runs can be
    /// checked for identical output.
    pub events: u64,
    pub events_digest: String,
}

pub const RUN_CSV_HEADER: &str = "param,value,rep,packets,bytes,elapsed_s,mbps,mpps,lat_mean_us,lat_p50_us,lat_p99_us,miss_rate,seals,opens,crossings,events,events_digest";

impl RunResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.3},{:.4},{:.3},{:.3},{:.3},{:.5},{},{},{},{},{}",
            self.param,
            self.value,
            self.rep,
            self.packets,
            self.bytes,
            self.elapsed_s,
            self.mbps,
            self.mpps,
            self.lat_mean_us,
            self.lat_p50_us,
            self.lat_p99_us,
            self.miss_rate,
            self.seals,
            self.opens,
            self.crossings,
            self.events,
            self.events_digest
        )
    }
}

/// Write rows as CSV.
pub fn write_csv<W: Write>(mut w: W, results: &[RunResult]) -> io::Result<()> {
    writeln!(w, "{RUN_CSV_HEADER}")?;
    for r in results {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()
}

/// Write `<dir>/<name>.csv` and return a short human-readable summary
/// (mean throughput and latency per value).
pub fn emit_report(dir: &Path, name: &str, results: &[RunResult]) -> io::Result<String> {
    std::fs::create_dir_all(dir)?;
    let f = std::fs::File::create(dir.join(format!("{name}.csv")))?;
    write_csv(io::BufWriter::new(f), results)?;
    Ok(summarize(results))
}

pub fn summarize(results: &[RunResult]) -> String {
    let mut out = String::new();
    let mut values: Vec<&str> = Vec::new();
    for r in results {
        if !values.contains(&r.value.as_str()) {
            values.push(&r.value);
        }
    }
    for v in values {
        let rs: Vec<_> = results.iter().filter(|r| r.value == v).collect();
        let n = rs.len() as f64;
        let mean = |f: fn(&RunResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        out += &format!(
            "{}={:<10} {:>9.1} Mbps {:>7.3} Mpps  lat {:>8.1} us  miss {:.3}\n",
            rs[0].param,
            v,
            mean(|r| r.mbps),
            mean(|r| r.mpps),
            mean(|r| r.lat_mean_us),
            mean(|r| r.miss_rate),
        );
    }
    out
}

/// Mean, median and 99th percentile of `xs` (sorted in place).
pub(crate) fn latency_summary(xs: &mut [u64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    xs.sort_unstable();
    let mean = xs.iter().sum::<u64>() as f64 / xs.len() as f64;
    let pct = |p: f64| xs[((xs.len() - 1) as f64 * p).round() as usize] as f64;
    (mean, pct(0.5), pct(0.99))
}

/// Parse a comma-separated list.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|e| format!("{v:?}: {e}")))
        .collect()
}
