//! Device host: accepts a gateway connection, runs the tunnel endpoint and
//! a network function on each receive ring, and logs the function's events.

use std::fs::File;
use std::io::BufWriter;
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use etapbox::etap::{EtapConfig, EtapDevice};
use etapbox::link::Endpoint;
use etapbox::nf::{serve, write_events_csv, NfConfig, NfKind, PatternSet, Variant};
use etapbox::wire::Role;
use etapbox_cli::{init_logging, KeyArgs};

#[derive(Debug, Parser)]
#[command(about = "Host a network function behind the tunnel endpoint")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Serve one gateway connection, then exit.
    Run(RunArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// flowmeter, ids or echo.
    #[arg(long)]
    nf: NfKind,
    /// Address to accept the gateway on.
    #[arg(long)]
    peer_listen: String,
    /// Receive rings (one function thread each).
    #[arg(long, default_value_t = 1)]
    rings: usize,
    /// Plaintext flow states kept per ring.
    #[arg(long, default_value_t = 16384)]
    cache_entries: usize,
    /// Per-flow state bytes (defaults to the function's own size).
    #[arg(long)]
    state_size: Option<usize>,
    /// Pattern file for the IDS: one pattern per line, `\xNN` escapes.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Where to write the event log (CSV).
    #[arg(long)]
    events: Option<PathBuf>,
    /// State strategy: managed, native or strawman.
    #[arg(long, default_value = "managed")]
    variant: Variant,
    /// Seconds of inactivity before a stored flow is dropped.
    #[arg(long, default_value_t = 30)]
    expiration_s: u32,
    /// Extra hashing rounds per packet for the echo function.
    #[arg(long, default_value_t = 0)]
    busy_work: u32,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 256)]
    ring_size: usize,
    #[arg(long, default_value_t = 1000)]
    heartbeat_ms: u64,
    /// Simulated cost of each boundary crossing.
    #[arg(long, default_value_t = 0)]
    crossing_delay_ns: u64,
    #[command(flatten)]
    keys: KeyArgs,
}

fn run(a: RunArgs) -> Result<()> {
    let patterns = a.patterns.as_deref().map(PatternSet::load).transpose()?;
    let cfg = NfConfig {
        variant: a.variant,
        cache_entries: a.cache_entries,
        state_size: a.state_size,
        expiration_s: a.expiration_s,
        patterns,
        busy_work: a.busy_work,
        seed: None,
        ..NfConfig::new(a.nf)
    };
    // fail on bad settings before anyone connects
    etapbox::nf::build_nf(&cfg, 0)?;
    let listener = TcpListener::bind(&a.peer_listen).with_context(|| format!("binding {}", a.peer_listen))?;
    log::info!("waiting for gateway on {}", listener.local_addr()?);
    let (stream, peer) = listener.accept()?;
    log::info!("gateway connected from {peer}");
    let mut ecfg = EtapConfig {
        batch_size: a.batch,
        ring_size: a.ring_size,
        num_rx_rings: a.rings,
        heartbeat_period_ms: a.heartbeat_ms,
        ..Default::default()
    };
    ecfg.boundary.crossing_delay_ns = a.crossing_delay_ns;
    let dev = EtapDevice::start(ecfg, a.keys.keys(Role::Etap), Endpoint::tcp(stream)?)?;
    let report = serve(dev, &cfg)?;
    let s = &report.stats;
    println!(
        "{}: {} packets ({} unparsed, {} bypassed, {} out of order), {} flows ended, {} matches",
        a.nf, s.packets, s.parse_errors, s.bypassed, s.out_of_order, s.flows_ended, s.matches
    );
    println!(
        "state: {} tracks, miss rate {:.4}, {} seals, {} opens, {} expired, {} dropped on auth failure",
        s.state.tracks,
        s.state.miss_rate(),
        s.state.seals,
        s.state.opens,
        s.expired,
        s.dropped_flows
    );
    let e = &report.etap;
    println!(
        "tunnel: {} records in / {} out, {} rx crossings, {} tx crossings",
        e.records_in, e.records_out, e.rx_crossings, e.tx_crossings
    );
    if let Some(path) = a.events {
        write_events_csv(BufWriter::new(File::create(&path)?), &report.events)?;
        println!("wrote {} events to {}", report.events.len(), path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    init_logging();
    match Cli::parse().cmd {
        Cmd::Run(a) => run(a),
    }
}
