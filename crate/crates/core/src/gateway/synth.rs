//! Deterministic synthetic traffic: Zipf-popular flows carrying random
//! payloads, with well-formed Ethernet/IPv4/TCP-or-UDP headers.

use std::fmt;
use std::str::FromStr;

use rand::distr::Distribution;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::Zipf;

use crate::packet::{
    build_tcp, build_udp, FlowId, ETH_HEADER_LEN, IPV4_HEADER_LEN, PROTO_TCP, PROTO_UDP,
    TCP_ACK, TCP_FIN, TCP_HEADER_LEN, TCP_PSH, UDP_HEADER_LEN,
};

/// Frame sizes in bytes, link header included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeDist {
    Fixed(usize),
    Uniform { min: usize, max: usize },
    /// 7:4:1 mix of 64, 576 and 1500 bytes.
    Imix,
}

impl SizeDist {
    fn sample(&self, rng: &mut StdRng) -> usize {
        match *self {
            SizeDist::Fixed(n) => n,
            SizeDist::Uniform { min, max } => rng.random_range(min..=max),
            SizeDist::Imix => match rng.random_range(0..12) {
                0..7 => 64,
                7..11 => 576,
                _ => 1500,
            },
        }
    }
}

impl FromStr for SizeDist {
    type Err = String;

    /// `64`, `64-1500` or `imix`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad size {t:?}: {e}"));
        if s.eq_ignore_ascii_case("imix") {
            Ok(SizeDist::Imix)
        } else if let Some((a, b)) = s.split_once('-') {
            let (min, max) = (num(a)?, num(b)?);
            if min > max {
                return Err(format!("empty size range {s}"));
            }
            Ok(SizeDist::Uniform { min, max })
        } else {
            Ok(SizeDist::Fixed(num(s)?))
        }
    }
}

impl fmt::Display for SizeDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeDist::Fixed(n) => write!(f, "{n}"),
            SizeDist::Uniform { min, max } => write!(f, "{min}-{max}"),
            SizeDist::Imix => f.write_str("imix"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub flows: usize,
    /// Zipf exponent of flow popularity; 0 is uniform.
    pub zipf: f64,
    pub pkt_size: SizeDist,
    pub count: u64,
    pub seed: u64,
    /// Probability that a TCP packet closes its connection with FIN.
    pub fin_prob: f64,
    /// Share of flows that are UDP.
    pub udp_fraction: f64,
    /// Byte patterns planted into payloads.
    pub patterns: Vec<Vec<u8>>,
    /// Probability that a payload gets a planted pattern.
    pub pattern_prob: f64,
    pub start_us: u64,
    pub interval_us: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            flows: 1000,
            zipf: 1.0,
            pkt_size: SizeDist::Fixed(64),
            count: 100_000,
            seed: 1,
            fin_prob: 0.0,
            udp_fraction: 0.0,
            patterns: Vec::new(),
            pattern_prob: 0.0,
            start_us: 1_700_000_000_000_000,
            interval_us: 10,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Iterator of `(timestamp μs, frame)`.
pub struct SynthSource {
    cfg: SynthConfig,
    rng: StdRng,
    zipf: Zipf<f64>,
    next_seq: Vec<u32>,
    emitted: u64,
    salt: u64,
}

impl SynthSource {
    pub fn new(cfg: SynthConfig) -> Result<Self, String> {
        if cfg.flows == 0 {
            return Err("need at least one flow".into());
        }
        let zipf = Zipf::new(cfg.flows as f64, cfg.zipf).map_err(|e| e.to_string())?;
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let salt = rng.random();
        let next_seq = (0..cfg.flows).map(|i| mix(salt ^ i as u64) as u32).collect();
        Ok(SynthSource {
            cfg,
            rng,
            zipf,
            next_seq,
            emitted: 0,
            salt,
        })
    }

    /// The 5-tuple of flow `i`; distinct for distinct `i < 2^24`.
    pub fn flow_id(&self, i: usize) -> FlowId {
        let h = mix(self.salt.wrapping_add(i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let udp = ((h >> 40) as f64 / (1u64 << 24) as f64) < self.cfg.udp_fraction;
        let i = i as u32;
        FlowId {
            src_ip: [10, (i >> 16) as u8, (i >> 8) as u8, i as u8],
            dst_ip: [172, 16, (h >> 8) as u8, h as u8],
            src_port: 1024 + (h >> 16) as u16 % 60000,
            dst_port: [80, 443, 53, 8080][(h >> 32) as usize % 4],
            proto: if udp { PROTO_UDP } else { PROTO_TCP },
        }
    }

    fn payload(&mut self, len: usize) -> Vec<u8> {
        let mut p = vec![0u8; len];
        self.rng.fill(&mut p[..]);
        if !self.cfg.patterns.is_empty() && self.rng.random_bool(self.cfg.pattern_prob) {
            let pat = &self.cfg.patterns[self.rng.random_range(0..self.cfg.patterns.len())];
            if pat.len() <= len {
                let at = self.rng.random_range(0..=len - pat.len());
                p[at..at + pat.len()].copy_from_slice(pat);
            }
        }
        p
    }
}

impl Iterator for SynthSource {
    type Item = (u64, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.emitted == self.cfg.count {
            return None;
        }
        let ts = self.cfg.start_us + self.emitted * self.cfg.interval_us;
        self.emitted += 1;
        let flow = self.zipf.sample(&mut self.rng) as usize - 1;
        let fid = self.flow_id(flow);
        let size = self.cfg.pkt_size.sample(&mut self.rng);
        let ident = self.emitted as u16;
        let frame = if fid.proto == PROTO_UDP {
            let len = size.saturating_sub(ETH_HEADER_LEN + IPV4_HEADER_LEN + UDP_HEADER_LEN);
            let pl = self.payload(len);
            build_udp(&fid, ident, &pl)
        } else {
            let len = size.saturating_sub(ETH_HEADER_LEN + IPV4_HEADER_LEN + TCP_HEADER_LEN);
            let pl = self.payload(len);
            let fin = self.cfg.fin_prob > 0.0 && self.rng.random_bool(self.cfg.fin_prob);
            let seq = self.next_seq[flow];
            let flags = TCP_ACK | TCP_PSH | if fin { TCP_FIN } else { 0 };
            self.next_seq[flow] = if fin {
                // the next packet opens a new connection on the same tuple
                self.rng.random()
            } else {
                seq.wrapping_add(pl.len() as u32)
            };
            build_tcp(&fid, seq, flags, ident, &pl)
        };
        Some((ts, frame))
    }
}
