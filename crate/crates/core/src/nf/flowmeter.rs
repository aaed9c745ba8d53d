//! Per-flow accounting: packet and byte counts, first/last seen and the
//! union of TCP flags. Flows are reported when they close and at the end of
//! input.

use super::{Event, EventKind, ExpiryTimer, NetworkFunction, NfError, NfStats};
use crate::packet::{self, FlowId, TCP_FIN, TCP_RST};
use crate::statemgmt::{FlowStateStore, StateError};

/// State is padded to this size so the memory behaviour matches a real
/// asset-detection engine.
pub const FLOWMETER_STATE_SIZE: usize = 512;

/// The meaningful prefix of a flow meter state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowMeterState {
    pub packets: u64,
    pub bytes: u64,
    pub first_us: u64,
    pub last_us: u64,
    pub proto: u8,
    pub flags: u8,
}

impl FlowMeterState {
    pub const LEN: usize = 34;

    pub fn read(b: &[u8]) -> Self {
        let u = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        FlowMeterState {
            packets: u(0),
            bytes: u(8),
            first_us: u(16),
            last_us: u(24),
            proto: b[32],
            flags: b[33],
        }
    }

    pub fn write(&self, b: &mut [u8]) {
        b[0..8].copy_from_slice(&self.packets.to_le_bytes());
        b[8..16].copy_from_slice(&self.bytes.to_le_bytes());
        b[16..24].copy_from_slice(&self.first_us.to_le_bytes());
        b[24..32].copy_from_slice(&self.last_us.to_le_bytes());
        b[32] = self.proto;
        b[33] = self.flags;
    }

    /// Account one packet.
    pub fn update(&mut self, ts_us: u64, len: usize, proto: u8, flags: u8) {
        if self.packets == 0 {
            self.first_us = ts_us;
            self.proto = proto;
        }
        self.packets += 1;
        self.bytes += len as u64;
        self.last_us = ts_us;
        self.flags |= flags;
    }

    pub fn detail(&self) -> String {
        format!(
            "pkts={};bytes={};first_us={};last_us={};proto={};flags={:#04x}",
            self.packets, self.bytes, self.first_us, self.last_us, self.proto, self.flags
        )
    }
}

pub struct FlowMeter<S> {
    store: S,
    expiry: ExpiryTimer,
    stats: NfStats,
}

impl<S: FlowStateStore> FlowMeter<S> {
    pub fn new(store: S) -> Result<Self, NfError> {
        if store.state_size() < FlowMeterState::LEN {
            return Err(NfError::Config(format!(
                "flow meter needs at least {} bytes of state",
                FlowMeterState::LEN
            )));
        }
        Ok(FlowMeter {
            store,
            expiry: ExpiryTimer::default(),
            stats: NfStats::default(),
        })
    }

    pub fn store(&self) -> &S {
        &self.store
    }
}

impl<S: FlowStateStore> NetworkFunction for FlowMeter<S> {
    fn name(&self) -> &'static str {
        "flowmeter"
    }

    fn process(&mut self, ts_us: u64, data: &[u8], now_us: u64, out: &mut Vec<Event>) -> Result<(), NfError> {
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
        let fid: FlowId = p.fid.canonical().0;
        let flags = p.tcp_flags();
        let st = match self.store.track(&fid, (now_us / 1_000_000) as u32) {
            Ok(t) => {
                let mut st = if t.is_new { FlowMeterState::default() } else { FlowMeterState::read(t.state) };
                st.update(ts_us, data.len(), fid.proto, flags);
                st.write(t.state);
                st
            }
            Err(StateError::Auth(_)) => {
                self.stats.dropped_flows += 1;
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        if flags & (TCP_FIN | TCP_RST) != 0 {
            out.push(Event {
                ts_us: now_us,
                fid,
                kind: EventKind::FlowEnd,
                detail: st.detail(),
            });
            self.store.terminate(&fid)?;
            self.stats.flows_ended += 1;
        }
        Ok(())
    }

    fn finish(&mut self, now_us: u64, out: &mut Vec<Event>) -> Result<(), NfError> {
        for fid in self.store.flow_ids() {
            let st = match self.store.track(&fid, (now_us / 1_000_000) as u32) {
                Ok(t) => FlowMeterState::read(t.state),
                Err(StateError::Auth(_)) => {
                    self.stats.dropped_flows += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            out.push(Event {
                ts_us: now_us,
                fid,
                kind: EventKind::FlowFinal,
                detail: st.detail(),
            });
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
