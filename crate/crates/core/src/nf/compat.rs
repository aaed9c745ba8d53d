//! Capture-library style reads over an rx port, for porting code written
//! against `pcap_next`/`pcap_loop`.

use crate::etap::{EtapError, Mode, RxPort};

/// Per-packet header as a capture library would report it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PktHeader {
    pub ts_us: u64,
    pub caplen: u32,
    pub len: u32,
}

pub struct PcapCompat<'a> {
    port: &'a mut RxPort,
}

impl<'a> PcapCompat<'a> {
    pub fn new(port: &'a mut RxPort) -> Self {
        PcapCompat { port }
    }

    /// Block for the next packet.
    pub fn next(&mut self) -> Result<(PktHeader, &[u8]), EtapError> {
        let p = self.port.read_pkt(Mode::Blocking)?;
        let hdr = PktHeader {
            ts_us: p.timestamp(),
            caplen: p.len() as u32,
            len: p.len() as u32,
        };
        Ok((hdr, p.data()))
    }

    /// Hand `count` packets (all of them with `None`) to `callback`.
    /// Returns how many were dispatched; device shutdown ends the loop
    /// early without error.
    pub fn dispatch<F>(&mut self, count: Option<usize>, mut callback: F) -> Result<usize, EtapError>
    where
        F: FnMut(&PktHeader, &[u8]),
    {
        let mut n = 0;
        while count.is_none_or(|c| n < c) {
            match self.next() {
                Ok((h, d)) => callback(&h, d),
                Err(EtapError::Shutdown) => break,
                Err(e) => return Err(e),
            }
            n += 1;
        }
        Ok(n)
    }
}
