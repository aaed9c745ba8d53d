//! Straightforward single-pass reference implementations of the sample
//! functions, with unbounded plaintext maps and naive matching. Used to
//! check the real functions' outputs.

use std::collections::{BTreeMap, HashMap};

use super::{Event, EventKind, FlowMeterState, IDS_BUFFER_LEN};
use crate::packet::{self, FlowDirection, FlowId, Transport, TCP_FIN, TCP_RST, TCP_SYN};

/// Flow meter reference: per-flow counters, closed on FIN/RST. Expiry is
/// not modelled, so compare on traces shorter than the timeout.
pub fn flowmeter<'a, I>(trace: I) -> Vec<Event>
where
    I: IntoIterator<Item = (u64, &'a [u8])>,
{
    let mut flows: BTreeMap<FlowId, FlowMeterState> = BTreeMap::new();
    let mut out = Vec::new();
    let mut last_ts = 0;
    for (ts, data) in trace {
        last_ts = ts;
        let Ok(p) = packet::parse(data) else { continue };
        let fid = p.fid.canonical().0;
        let flags = p.tcp_flags();
        let st = flows.entry(fid).or_insert(FlowMeterState {
            first_us: ts,
            proto: fid.proto,
            ..Default::default()
        });
        st.packets += 1;
        st.bytes += data.len() as u64;
        st.last_us = ts;
        st.flags |= flags;
        if flags & (TCP_FIN | TCP_RST) != 0 {
            out.push(Event {
                ts_us: ts,
                fid,
                kind: EventKind::FlowEnd,
                detail: st.detail(),
            });
            flows.remove(&fid);
        }
    }
    out.extend(flows.into_iter().map(|(fid, st)| Event {
        ts_us: last_ts,
        fid,
        kind: EventKind::FlowFinal,
        detail: st.detail(),
    }));
    out
}

#[derive(Default)]
struct Stream {
    bytes: Vec<u8>,
    next: [Option<u32>; 2],
}

/// IDS reference: rebuild each flow's in-order payload, cut it into the
/// windows the buffer would see, and search every window for every
/// pattern by brute force.
pub fn ids<'a, I>(trace: I, patterns: &[Vec<u8>]) -> Vec<Event>
where
    I: IntoIterator<Item = (u64, &'a [u8])>,
{
    let mut open: HashMap<FlowId, Stream> = HashMap::new();
    let mut done: Vec<(FlowId, Stream)> = Vec::new();
    for (_, data) in trace {
        let Ok(p) = packet::parse(data) else { continue };
        let Transport::Tcp { seq, flags, payload } = p.transport else { continue };
        let (fid, dir) = p.fid.canonical();
        let d = (dir == FlowDirection::Reverse) as usize;
        let s = open.entry(fid).or_default();
        if s.next[d].is_some_and(|n| n != seq) {
            continue;
        }
        s.next[d] = Some(
            seq.wrapping_add(payload.len() as u32)
                .wrapping_add((flags & TCP_SYN != 0) as u32),
        );
        s.bytes.extend_from_slice(payload);
        if flags & (TCP_FIN | TCP_RST) != 0 {
            let s = open.remove(&fid).unwrap();
            done.push((fid, s));
        }
    }
    done.extend(open);
    let mut out = Vec::new();
    for (fid, s) in done {
        for (k, hay) in s.bytes.chunks(IDS_BUFFER_LEN).enumerate() {
            let base = k * IDS_BUFFER_LEN;
            for (pid, pat) in patterns.iter().enumerate() {
                if pat.len() > hay.len() {
                    continue;
                }
                for i in 0..=hay.len() - pat.len() {
                    if &hay[i..i + pat.len()] == pat.as_slice() {
                        out.push(Event {
                            ts_us: 0,
                            fid,
                            kind: EventKind::Match,
                            detail: format!("pattern={pid};offset={}", base + i),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Timestamp-free, order-free view of an event list.
pub fn normalize(events: &[Event]) -> Vec<(FlowId, EventKind, String)> {
    let mut v: Vec<_> = events.iter().map(|e| (e.fid, e.kind, e.detail.clone())).collect();
    v.sort();
    v
}
