use std::hint::black_box;

use super::{Event, NetworkFunction, NfError, NfStats};

/// Reads packets and writes them straight back. `busy_work` adds that many
/// passes of hashing over each packet to stand in for real processing.
#[derive(Debug, Default)]
pub struct EchoNf {
    busy_work: u32,
    stats: NfStats,
}

impl EchoNf {
    pub fn new(busy_work: u32) -> Self {
        EchoNf {
            busy_work,
            stats: NfStats::default(),
        }
    }
}

fn burn(data: &[u8], rounds: u32) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for _ in 0..rounds {
        for &b in data {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl NetworkFunction for EchoNf {
    fn name(&self) -> &'static str {
        "echo"
    }

    fn process(&mut self, _ts: u64, data: &[u8], _now: u64, _out: &mut Vec<Event>) -> Result<(), NfError> {
        self.stats.packets += 1;
        if self.busy_work > 0 {
            black_box(burn(black_box(data), self.busy_work));
        }
        Ok(())
    }

    fn finish(&mut self, _now: u64, _out: &mut Vec<Event>) -> Result<(), NfError> {
        Ok(())
    }

    fn stats(&self) -> NfStats {
        self.stats
    }
}
