//! Gateway end of the tunnel: replays a capture or a synthetic workload to
//! a device and reports what came back.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::Parser;
use etapbox::gateway::{run_gateway, GatewayConfig, PcapWriter, SizeDist, Source, SynthConfig, LINKTYPE_ETHERNET};
use etapbox::link::Endpoint;
use etapbox::wire::Role;
use etapbox_cli::{init_logging, KeyArgs};

#[derive(Debug, Parser)]
#[command(about = "Tunnel packets to a device and collect the bounced traffic")]
struct Cli {
    /// `pcap:<path>` or `synth`.
    #[arg(long)]
    source: String,
    /// Synthetic flows.
    #[arg(long, default_value_t = 1000)]
    flows: usize,
    /// Zipf exponent of synthetic flow popularity (0 = uniform).
    #[arg(long, default_value_t = 1.0)]
    zipf: f64,
    /// Synthetic packet size: `N`, `MIN-MAX` or `imix`.
    #[arg(long, default_value = "64")]
    pkt_size: SizeDist,
    /// Synthetic packet count.
    #[arg(long, default_value_t = 100_000)]
    count: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Device address.
    #[arg(long)]
    peer: String,
    /// Largest frame carried unfragmented.
    #[arg(long, default_value_t = 1500)]
    mtu: usize,
    /// Stamp packets with the send time (enables latency figures).
    #[arg(long)]
    retimestamp: bool,
    /// Records per write; must match the device.
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 1000)]
    heartbeat_ms: u64,
    /// Save the bounced packets as a capture file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    keys: KeyArgs,
}

fn connect(peer: &str) -> Result<TcpStream> {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        match TcpStream::connect(peer) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                log::debug!("connect {peer}: {e}; retrying");
                std::thread::sleep(Duration::from_millis(100));
            }
            Err(e) => return Err(e).with_context(|| format!("connecting to {peer}")),
        }
    }
}

fn main() -> Result<()> {
    init_logging();
    let cli = Cli::parse();
    let source = match cli.source.split_once(':') {
        Some(("pcap", path)) => Source::Pcap(path.into()),
        None if cli.source == "synth" => Source::Synth(SynthConfig {
            flows: cli.flows,
            zipf: cli.zipf,
            pkt_size: cli.pkt_size,
            count: cli.count,
            seed: cli.seed,
            ..Default::default()
        }),
        _ => bail!("--source must be pcap:<path> or synth"),
    };
    let packets = source.open()?;
    let link = Endpoint::tcp(connect(&cli.peer)?)?;
    let cfg = GatewayConfig {
        batch_size: cli.batch,
        mtu: cli.mtu,
        retimestamp: cli.retimestamp,
        heartbeat_period_ms: cli.heartbeat_ms,
        wait_for_echo: true,
        collect: cli.out.is_some(),
    };
    let mut report = run_gateway(packets, link, cli.keys.keys(Role::Gateway), &cfg)?;
    let s = &report.stats;
    println!(
        "sent {} packets ({} bytes, {} fragments, {} dropped as unfragmentable) in {} records",
        s.packets_sent, s.bytes_sent, s.fragments_created, s.unfragmentable, s.records_sent
    );
    println!(
        "received {} packets ({} bytes) in {} records over {:.3} s: {:.1} Mbps, {:.3} Mpps",
        s.packets_received,
        s.bytes_received,
        s.records_received,
        s.elapsed.as_secs_f64(),
        report.throughput_mbps(),
        report.throughput_mpps()
    );
    if let Some(rtt) = s.heartbeat_rtt_us {
        println!("heartbeat rtt {rtt} us");
    }
    if !report.latencies_us.is_empty() {
        let l = &mut report.latencies_us;
        l.sort_unstable();
        let mean = l.iter().sum::<u64>() as f64 / l.len() as f64;
        println!(
            "latency mean {mean:.1} us, p50 {} us, p99 {} us",
            l[l.len() / 2],
            l[(l.len() - 1) * 99 / 100]
        );
    }
    if let Some(path) = cli.out {
        let mut w = PcapWriter::new(BufWriter::new(File::create(&path)?), LINKTYPE_ETHERNET)?;
        for (ts, data) in &report.received {
            w.write_packet(*ts, data)?;
        }
        w.into_inner().flush()?;
        println!("wrote {} packets to {}", report.received.len(), path.display());
    }
    Ok(())
}
