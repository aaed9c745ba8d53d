//! Classic pcap files: both byte orders, microsecond and nanosecond
//! timestamp magics. Timestamps are always surfaced in microseconds.

use std::io::{self, Read, Write};

use thiserror::Error;

const MAGIC_US: u32 = 0xa1b2_c3d4;
const MAGIC_NS: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("malformed pcap header: {0}")]
    MalformedHeader(String),
    #[error("truncated packet record")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapPacket {
    pub ts_us: u64,
    /// Length on the wire; may exceed `data.len()` for snapped captures.
    pub orig_len: u32,
    pub data: Vec<u8>,
}

pub struct PcapReader<R> {
    inner: R,
    big_endian: bool,
    nanos: bool,
    linktype: u32,
    snaplen: u32,
}

/// Read as many bytes as are available, up to `buf.len()`.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PcapError> {
        let mut h = [0u8; 24];
        if read_full(&mut inner, &mut h)? < 24 {
            return Err(PcapError::MalformedHeader("shorter than 24 bytes".into()));
        }
        let le = u32::from_le_bytes(h[0..4].try_into().unwrap());
        let be = u32::from_be_bytes(h[0..4].try_into().unwrap());
        let (big_endian, nanos) = match (le, be) {
            (MAGIC_US, _) => (false, false),
            (MAGIC_NS, _) => (false, true),
            (_, MAGIC_US) => (true, false),
            (_, MAGIC_NS) => (true, true),
            _ => return Err(PcapError::MalformedHeader(format!("bad magic {le:#010x}"))),
        };
        let word = |b: &[u8]| {
            let b: [u8; 4] = b.try_into().unwrap();
            if big_endian {
                u32::from_be_bytes(b)
            } else {
                u32::from_le_bytes(b)
            }
        };
        Ok(PcapReader {
            inner,
            big_endian,
            nanos,
            snaplen: word(&h[16..20]),
            linktype: word(&h[20..24]),
        })
    }

    pub fn linktype(&self) -> u32 {
        self.linktype
    }

    pub fn snaplen(&self) -> u32 {
        self.snaplen
    }

    fn word(&self, b: &[u8]) -> u32 {
        let b: [u8; 4] = b.try_into().unwrap();
        if self.big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        }
    }

    /// Next packet, or `None` at a clean end of file.
    pub fn next_packet(&mut self) -> Result<Option<PcapPacket>, PcapError> {
        let mut h = [0u8; 16];
        match read_full(&mut self.inner, &mut h)? {
            0 => return Ok(None),
            16 => {}
            _ => return Err(PcapError::Truncated),
        }
        let sec = self.word(&h[0..4]) as u64;
        let frac = self.word(&h[4..8]) as u64;
        let caplen = self.word(&h[8..12]);
        let orig_len = self.word(&h[12..16]);
        if caplen > (1 << 26) {
            return Err(PcapError::MalformedHeader(format!("caplen {caplen}")));
        }
        let mut data = vec![0u8; caplen as usize];
        if read_full(&mut self.inner, &mut data)? < data.len() {
            return Err(PcapError::Truncated);
        }
        let ts_us = sec * 1_000_000 + if self.nanos { frac / 1000 } else { frac };
        Ok(Some(PcapPacket {
            ts_us,
            orig_len,
            data,
        }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<PcapPacket, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_packet().transpose()
    }
}

/// Writes little-endian microsecond pcap.
pub struct PcapWriter<W: Write> {
    inner: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, linktype: u32) -> io::Result<Self> {
        let mut h = Vec::with_capacity(24);
        h.extend_from_slice(&MAGIC_US.to_le_bytes());
        h.extend_from_slice(&2u16.to_le_bytes());
        h.extend_from_slice(&4u16.to_le_bytes());
        h.extend_from_slice(&0i32.to_le_bytes());
        h.extend_from_slice(&0u32.to_le_bytes());
        h.extend_from_slice(&65535u32.to_le_bytes());
        h.extend_from_slice(&linktype.to_le_bytes());
        inner.write_all(&h)?;
        Ok(PcapWriter { inner })
    }

    pub fn write_packet(&mut self, ts_us: u64, data: &[u8]) -> io::Result<()> {
        let mut h = [0u8; 16];
        h[0..4].copy_from_slice(&((ts_us / 1_000_000) as u32).to_le_bytes());
        h[4..8].copy_from_slice(&((ts_us % 1_000_000) as u32).to_le_bytes());
        h[8..12].copy_from_slice(&(data.len() as u32).to_le_bytes());
        h[12..16].copy_from_slice(&(data.len() as u32).to_le_bytes());
        self.inner.write_all(&h)?;
        self.inner.write_all(data)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}
