use std::fmt;
use std::io::{self, BufRead, Write};
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::packet::FlowId;

pub const EVENTS_CSV_HEADER: &str = "ts_us,fid,kind,detail";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    /// Flow closed by FIN/RST; detail carries its counters.
    FlowEnd,
    /// Flow still open at end of input.
    FlowFinal,
    /// Pattern occurrence; detail carries pattern id and stream offset.
    Match,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::FlowEnd => "flow_end",
            EventKind::FlowFinal => "flow_final",
            EventKind::Match => "match",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flow_end" => Ok(EventKind::FlowEnd),
            "flow_final" => Ok(EventKind::FlowFinal),
            "match" => Ok(EventKind::Match),
            _ => Err(format!("unknown event kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub ts_us: u64,
    /// Canonical flow id.
    pub fid: FlowId,
    pub kind: EventKind,
    pub detail: String,
}

impl Event {
    /// The event without its timestamp, for comparisons across runs whose
    /// clocks differ.
    pub fn key(&self) -> (FlowId, EventKind, &str) {
        (self.fid, self.kind, &self.detail)
    }
}

pub fn write_events_csv<W: Write>(mut w: W, events: &[Event]) -> io::Result<()> {
    writeln!(w, "{EVENTS_CSV_HEADER}")?;
    for e in events {
        writeln!(w, "{},{},{},{}", e.ts_us, e.fid, e.kind, e.detail)?;
    }
    w.flush()
}

fn parse_fid(s: &str) -> Option<FlowId> {
    // a.b.c.d:p>e.f.g.h:q/proto
    let (src, rest) = s.split_once('>')?;
    let (dst, proto) = rest.split_once('/')?;
    let (sip, sport) = src.rsplit_once(':')?;
    let (dip, dport) = dst.rsplit_once(':')?;
    Some(FlowId::new(
        sip.parse::<Ipv4Addr>().ok()?,
        sport.parse().ok()?,
        dip.parse::<Ipv4Addr>().ok()?,
        dport.parse().ok()?,
        proto.parse().ok()?,
    ))
}

pub fn read_events_csv<R: BufRead>(r: R) -> io::Result<Vec<Event>> {
    let bad = |line: &str| io::Error::new(io::ErrorKind::InvalidData, format!("bad event line {line:?}"));
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != EVENTS_CSV_HEADER {
                return Err(bad(&line));
            }
            continue;
        }
        let mut it = line.splitn(4, ',');
        let (Some(ts), Some(fid), Some(kind), Some(detail)) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad(&line));
        };
        out.push(Event {
            ts_us: ts.parse().map_err(|_| bad(&line))?,
            fid: parse_fid(fid).ok_or_else(|| bad(&line))?,
            kind: kind.parse().map_err(|_| bad(&line))?,
            detail: detail.to_owned(),
        });
    }
    Ok(out)
}
