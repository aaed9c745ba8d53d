//! Benchmark driver: parameter sweeps, state-management variant comparison
//! and cache miss-rate curves, all written as CSV.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use etapbox::bench::{
    emit_report, fids_from_pcap, fids_from_synth, measure_miss_rate, parse_list, run_sweep, run_variants,
    MissRow, RunConfig, SweepParam, SweepSpec, VariantsSpec,
};
use etapbox::gateway::{SizeDist, SynthConfig};
use etapbox::nf::{NfKind, PatternSet};
use etapbox::par::Execution;

#[derive(Debug, Parser)]
#[command(about = "Throughput, latency and miss-rate experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Vary one parameter of the full pipeline.
    Sweep(SweepArgs),
    /// Compare native, strawman and managed flow state.
    Variants(VariantsArgs),
    /// Flow-cache miss rate against cache size.
    Missrate(MissArgs),
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    /// batch_size, ring_size, pkt_size, flow_count, cache_entries,
    /// sync_mechanism or nf_cost.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long)]
    values: String,
    #[arg(long, default_value = "64")]
    pkt_size: SizeDist,
    #[arg(long, default_value_t = 1_000_000)]
    count: u64,
    #[arg(long, default_value_t = 1000)]
    flows: usize,
    #[arg(long, default_value_t = 1.0)]
    zipf: f64,
    /// Function behind the device: echo, flowmeter or ids.
    #[arg(long, default_value = "echo")]
    nf: NfKind,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 256)]
    ring_size: usize,
    #[arg(long, default_value_t = 16384)]
    cache_entries: usize,
    #[arg(long, default_value_t = 3000)]
    crossing_delay_ns: u64,
    #[arg(long, default_value_t = 1)]
    reps: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "csv")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct VariantsArgs {
    /// flowmeter or ids.
    #[arg(long, default_value = "flowmeter")]
    nf: NfKind,
    #[arg(long, default_value_t = 600_000)]
    flows: usize,
    #[arg(long, default_value = "512")]
    pkt_size: SizeDist,
    #[arg(long, default_value_t = 2_000_000)]
    count: u64,
    #[arg(long, default_value_t = 1.1)]
    zipf: f64,
    #[arg(long, default_value_t = 16384)]
    cache_entries: usize,
    /// Pattern file (needed for the IDS).
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "csv")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct MissArgs {
    /// Capture file to replay; without it a synthetic trace is used.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Comma-separated cache sizes.
    #[arg(long, default_value = "1024,4096,16384,32768")]
    cache: String,
    #[arg(long, default_value_t = 512)]
    state_size: usize,
    #[arg(long, default_value_t = 600_000)]
    synth_flows: usize,
    #[arg(long, default_value_t = 1.1)]
    zipf: f64,
    #[arg(long, default_value_t = 4_000_000)]
    count: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Run cache sizes one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
    #[arg(long, default_value = "csv")]
    out: PathBuf,
}

fn sweep(a: SweepArgs) -> Result<()> {
    let spec = SweepSpec {
        param: a.param,
        values: a.values.split(',').map(|v| v.trim().to_owned()).collect(),
        base: RunConfig {
            batch_size: a.batch,
            ring_size: a.ring_size,
            pkt_size: a.pkt_size,
            flows: a.flows,
            zipf: a.zipf,
            count: a.count,
            cache_entries: a.cache_entries,
            nf: a.nf,
            seed: a.seed,
            crossing_delay_ns: a.crossing_delay_ns,
            ..Default::default()
        },
        repetitions: a.reps,
    };
    let rows = run_sweep(&spec)?;
    print!("{}", emit_report(&a.out, &format!("sweep_{}", a.param), &rows)?);
    Ok(())
}

fn variants(a: VariantsArgs) -> Result<()> {
    if a.nf == NfKind::Echo {
        bail!("echo keeps no flow state; use flowmeter or ids");
    }
    let spec = VariantsSpec {
        nf: a.nf,
        flows: a.flows,
        pkt_size: a.pkt_size,
        count: a.count,
        zipf: a.zipf,
        cache_entries: a.cache_entries,
        seed: a.seed,
        patterns: a.patterns.as_deref().map(PatternSet::load).transpose()?,
        ..Default::default()
    };
    let rows = run_variants(&spec)?;
    print!("{}", emit_report(&a.out, &format!("variants_{}", a.nf), &rows)?);
    if rows.iter().any(|r| r.events_digest != rows[0].events_digest) {
        bail!("variants disagree on function output");
    }
    println!("all variants produced identical events ({} each)", rows[0].events);
    Ok(())
}

fn missrate(a: MissArgs) -> Result<()> {
    let sizes: Vec<usize> = parse_list(&a.cache).map_err(anyhow::Error::msg)?;
    let fids = match &a.trace {
        Some(p) => fids_from_pcap(p)?,
        None => fids_from_synth(SynthConfig {
            flows: a.synth_flows,
            zipf: a.zipf,
            count: a.count,
            seed: a.seed,
            ..Default::default()
        })?,
    };
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let rows = measure_miss_rate(&fids, &sizes, a.state_size, exec)?;
    std::fs::create_dir_all(&a.out)?;
    MissRow::write_csv(BufWriter::new(File::create(a.out.join("missrate.csv"))?), &rows)?;
    for r in &rows {
        println!(
            "cache {:>7}: miss rate {:.4} ({} of {} tracks; {} distinct flows)",
            r.cache_entries, r.miss_rate, r.misses, r.tracks, r.distinct_flows
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    etapbox_cli::init_logging();
    match Cli::parse().cmd {
        Cmd::Sweep(a) => sweep(a),
        Cmd::Variants(a) => variants(a),
        Cmd::Missrate(a) => missrate(a),
    }
}
