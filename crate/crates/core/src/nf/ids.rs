//! Per-flow pattern matching over reassembled TCP payload.
//!
//! Each flow buffers its in-order payload; when the buffer fills or the
//! flow closes, the buffer is scanned and reset. A pattern straddling two
//! buffer windows is not reported.

use std::path::Path;

use aho_corasick::AhoCorasick;

use super::{Event, EventKind, ExpiryTimer, NetworkFunction, NfError, NfStats};
use crate::packet::{self, FlowDirection, FlowId, Transport, TCP_FIN, TCP_RST, TCP_SYN};
use crate::statemgmt::{FlowStateStore, StateError};

pub const IDS_BUFFER_LEN: usize = 4096;
/// Buffer plus bookkeeping, padded to the size of the original engine's
/// flow record.
pub const IDS_STATE_SIZE: usize = 5632;

const HDR: usize = 24;
const FWD_KNOWN: u8 = 1;
const REV_KNOWN: u8 = 2;

/// Fixed multi-pattern matcher.
#[derive(Debug, Clone)]
pub struct PatternSet {
    patterns: Vec<Vec<u8>>,
    ac: AhoCorasick,
}

impl PatternSet {
    pub fn new(patterns: Vec<Vec<u8>>) -> Result<Self, NfError> {
        if patterns.iter().any(Vec::is_empty) {
            return Err(NfError::Pattern("empty pattern".into()));
        }
        let ac = AhoCorasick::new(&patterns).map_err(|e| NfError::Pattern(e.to_string()))?;
        Ok(PatternSet { patterns, ac })
    }

    /// One pattern per line. `\xNN` and `\\` escapes are decoded; blank
    /// lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, NfError> {
        let mut pats = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            pats.push(unescape(line).map_err(|e| NfError::Pattern(format!("line {}: {e}", n + 1)))?);
        }
        Self::new(pats)
    }

    pub fn load(path: &Path) -> Result<Self, NfError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn patterns(&self) -> &[Vec<u8>] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Every `(pattern id, start offset)` occurrence, overlapping ones
    /// included.
    pub fn scan<'a>(&'a self, hay: &'a [u8]) -> impl Iterator<Item = (usize, usize)> + 'a {
        self.ac
            .find_overlapping_iter(hay)
            .map(|m| (m.pattern().as_usize(), m.start()))
    }
}

fn unescape(s: &str) -> Result<Vec<u8>, String> {
    let b = s.as_bytes();
    let mut out = Vec::with_capacity(b.len());
    let mut i = 0;
    while i < b.len() {
        if b[i] != b'\\' {
            out.push(b[i]);
            i += 1;
            continue;
        }
        match b.get(i + 1) {
            Some(b'\\') => {
                out.push(b'\\');
                i += 2;
            }
            Some(b'x') => {
                let hex = s.get(i + 2..i + 4).ok_or("truncated \\x escape")?;
                out.push(u8::from_str_radix(hex, 16).map_err(|_| format!("bad hex {hex:?}"))?);
                i += 4;
            }
            _ => return Err("unknown escape".into()),
        }
    }
    Ok(out)
}

/// View over the bookkeeping prefix of an IDS flow state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdsState {
    /// Stream offset of the first buffered byte.
    pub base: u64,
    pub fill: u16,
    pub next_seq: [u32; 2],
    pub known: u8,
}

impl IdsState {
    pub fn read(b: &[u8]) -> Self {
        IdsState {
            base: u64::from_le_bytes(b[0..8].try_into().unwrap()),
            fill: u16::from_le_bytes([b[8], b[9]]),
            next_seq: [
                u32::from_le_bytes(b[10..14].try_into().unwrap()),
                u32::from_le_bytes(b[14..18].try_into().unwrap()),
            ],
            known: b[18],
        }
    }

    pub fn write(&self, b: &mut [u8]) {
        b[0..8].copy_from_slice(&self.base.to_le_bytes());
        b[8..10].copy_from_slice(&self.fill.to_le_bytes());
        b[10..14].copy_from_slice(&self.next_seq[0].to_le_bytes());
        b[14..18].copy_from_slice(&self.next_seq[1].to_le_bytes());
        b[18] = self.known;
    }
}

pub struct Ids<S> {
    store: S,
    patterns: PatternSet,
    expiry: ExpiryTimer,
    stats: NfStats,
}

fn flush(
    patterns: &PatternSet,
    fid: FlowId,
    st: &mut IdsState,
    buf: &[u8],
    now_us: u64,
    out: &mut Vec<Event>,
    stats: &mut NfStats,
) {
    for (pid, at) in patterns.scan(&buf[..st.fill as usize]) {
        out.push(Event {
            ts_us: now_us,
            fid,
            kind: EventKind::Match,
            detail: format!("pattern={pid};offset={}", st.base + at as u64),
        });
        stats.matches += 1;
    }
    st.base += st.fill as u64;
    st.fill = 0;
}

impl<S: FlowStateStore> Ids<S> {
    pub fn new(store: S, patterns: PatternSet) -> Result<Self, NfError> {
        if store.state_size() < HDR + IDS_BUFFER_LEN {
            return Err(NfError::Config(format!(
                "IDS needs at least {} bytes of state",
                HDR + IDS_BUFFER_LEN
            )));
        }
        Ok(Ids {
            store,
            patterns,
            expiry: ExpiryTimer::default(),
            stats: NfStats::default(),
        })
    }

    pub fn store(&self) -> &S {
        &self.store
    }
}

impl<S: FlowStateStore> NetworkFunction for Ids<S> {
    fn name(&self) -> &'static str {
        "ids"
    }

    fn process(&mut self, _ts: u64, data: &[u8], now_us: u64, out: &mut Vec<Event>) -> Result<(), NfError> {
        self.stats.packets += 1;
        if self.expiry.due(now_us) {
            self.stats.expired += self.store.expire((now_us / 1_000_000) as u32) as u64;
        }
        let p = match packet::parse(data) {
            Ok(p) => p,
            Err(_) => {
                self.stats.parse_errors += 1;
                return Ok(());
            }
        };
        let Transport::Tcp { seq, flags, payload } = p.transport else {
            self.stats.bypassed += 1;
            return Ok(());
        };
        let (fid, dir) = p.fid.canonical();
        let (d, bit) = match dir {
            FlowDirection::Forward => (0, FWD_KNOWN),
            FlowDirection::Reverse => (1, REV_KNOWN),
        };
        let closing = flags & (TCP_FIN | TCP_RST) != 0;
        let state = match self.store.track(&fid, (now_us / 1_000_000) as u32) {
            Ok(t) => t.state,
            Err(StateError::Auth(_)) => {
                self.stats.dropped_flows += 1;
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        let (hdr, buf) = state.split_at_mut(HDR);
        let buf = &mut buf[..IDS_BUFFER_LEN];
        let mut st = IdsState::read(hdr);
        if st.known & bit != 0 && st.next_seq[d] != seq {
            self.stats.out_of_order += 1;
            return Ok(());
        }
        st.known |= bit;
        st.next_seq[d] = seq
            .wrapping_add(payload.len() as u32)
            .wrapping_add((flags & TCP_SYN != 0) as u32);
        let mut rest = payload;
        while !rest.is_empty() {
            let fill = st.fill as usize;
            let take = rest.len().min(IDS_BUFFER_LEN - fill);
            buf[fill..fill + take].copy_from_slice(&rest[..take]);
            st.fill += take as u16;
            rest = &rest[take..];
            if st.fill as usize == IDS_BUFFER_LEN {
                flush(&self.patterns, fid, &mut st, buf, now_us, out, &mut self.stats);
            }
        }
        if closing {
            flush(&self.patterns, fid, &mut st, buf, now_us, out, &mut self.stats);
            self.store.terminate(&fid)?;
            self.stats.flows_ended += 1;
        } else {
            st.write(hdr);
        }
        Ok(())
    }

    fn finish(&mut self, now_us: u64, out: &mut Vec<Event>) -> Result<(), NfError> {
        for fid in self.store.flow_ids() {
            let state = match self.store.track(&fid, (now_us / 1_000_000) as u32) {
                Ok(t) => t.state,
                Err(StateError::Auth(_)) => {
                    self.stats.dropped_flows += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let (hdr, buf) = state.split_at_mut(HDR);
            let mut st = IdsState::read(hdr);
            flush(&self.patterns, fid, &mut st, &buf[..IDS_BUFFER_LEN], now_us, out, &mut self.stats);
            self.store.terminate(&fid)?;
        }
        Ok(())
    }

    fn stats(&self) -> NfStats {
        NfStats {
            state: self.store.stats(),
            ..self.stats
        }
    }
}
