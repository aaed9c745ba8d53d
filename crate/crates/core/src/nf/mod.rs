//! Sample stateful network functions running on the device: a flow meter,
//! a per-flow pattern matcher and a bare echo, plus a capture-style read
//! API and the event log they share.

mod compat;
mod echo;
mod events;
mod flowmeter;
mod ids;
pub mod oracle;
mod run;

use thiserror::Error;

use crate::etap::EtapError;
use crate::statemgmt::{StateError, StateStats};

pub use compat::{PcapCompat, PktHeader};
pub use echo::EchoNf;
pub use events::{read_events_csv, write_events_csv, Event, EventKind, EVENTS_CSV_HEADER};
pub use flowmeter::{FlowMeter, FlowMeterState, FLOWMETER_STATE_SIZE};
pub use ids::{Ids, IdsState, PatternSet, IDS_BUFFER_LEN, IDS_STATE_SIZE};
pub use run::{build_nf, replay, serve, NfConfig, NfKind, NfReport, Replay, Variant};

#[derive(Debug, Error)]
pub enum NfError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Etap(#[from] EtapError),
    #[error("pattern file: {0}")]
    Pattern(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NfStats {
    pub packets: u64,
    pub parse_errors: u64,
    /// Packets the function does not look at (e.g. non-TCP for the IDS).
    pub bypassed: u64,
    pub out_of_order: u64,
    pub flows_ended: u64,
    pub matches: u64,
    /// Flows dropped because their stored state failed authentication.
    pub dropped_flows: u64,
    pub expired: u64,
    pub state: StateStats,
}

impl NfStats {
    pub fn merge(&mut self, o: &NfStats) {
        self.packets += o.packets;
        self.parse_errors += o.parse_errors;
        self.bypassed += o.bypassed;
        self.out_of_order += o.out_of_order;
        self.flows_ended += o.flows_ended;
        self.matches += o.matches;
        self.dropped_flows += o.dropped_flows;
        self.expired += o.expired;
        let (s, t) = (&mut self.state, &o.state);
        s.tracks += t.tracks;
        s.cache_hits += t.cache_hits;
        s.cache_misses += t.cache_misses;
        s.new_flows += t.new_flows;
        s.seals += t.seals;
        s.opens += t.opens;
        s.terminated += t.terminated;
        s.expired += t.expired;
        s.auth_failures += t.auth_failures;
    }
}

/// A packet-processing function. Every packet is forwarded unchanged by
/// the runner; functions only observe and log.
pub trait NetworkFunction {
    fn name(&self) -> &'static str;

    /// Handle one packet. `now_us` is the trusted clock.
    fn process(&mut self, ts_us: u64, data: &[u8], now_us: u64, out: &mut Vec<Event>) -> Result<(), NfError>;

    /// End of input: report whatever per-flow results are still pending.
    fn finish(&mut self, now_us: u64, out: &mut Vec<Event>) -> Result<(), NfError>;

    fn stats(&self) -> NfStats;
}

/// Tracks when to run the periodic expiry sweep.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ExpiryTimer {
    last_s: Option<u64>,
}

impl ExpiryTimer {
    /// True once per elapsed second of `now_us`.
    pub(crate) fn due(&mut self, now_us: u64) -> bool {
        let s = now_us / 1_000_000;
        match self.last_s {
            Some(l) if s <= l => false,
            _ => {
                self.last_s = Some(s);
                true
            }
        }
    }
}
