//! Ethernet/IPv4/{TCP,UDP} parsing and construction, and the 13-byte flow id.

use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

pub const ETH_HEADER_LEN: usize = 14;
pub const IPV4_HEADER_LEN: usize = 20;
pub const TCP_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_VLAN: u16 = 0x8100;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

pub const TCP_FIN: u8 = 0x01;
pub const TCP_SYN: u8 = 0x02;
pub const TCP_RST: u8 = 0x04;
pub const TCP_PSH: u8 = 0x08;
pub const TCP_ACK: u8 = 0x10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("truncated {0} header")]
    Truncated(&'static str),
    #[error("unsupported ethertype {0:#06x}")]
    NotIpv4(u16),
    #[error("unsupported IP protocol {0}")]
    UnsupportedProtocol(u8),
    #[error("bad IPv4 header")]
    BadIpHeader,
    #[error("non-initial IPv4 fragment")]
    NonInitialFragment,
}

/// 5-tuple flow identifier, 13 bytes on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FlowId {
    pub src_ip: [u8; 4],
    pub dst_ip: [u8; 4],
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

pub const FLOW_ID_LEN: usize = 13;

/// Whether a packet travels in the stored orientation of its canonical fid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Reverse,
}

impl FlowId {
    pub fn new(src: Ipv4Addr, sport: u16, dst: Ipv4Addr, dport: u16, proto: u8) -> Self {
        FlowId {
            src_ip: src.octets(),
            dst_ip: dst.octets(),
            src_port: sport,
            dst_port: dport,
            proto,
        }
    }

    pub fn to_bytes(&self) -> [u8; FLOW_ID_LEN] {
        let mut b = [0u8; FLOW_ID_LEN];
        b[0..4].copy_from_slice(&self.src_ip);
        b[4..8].copy_from_slice(&self.dst_ip);
        b[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        b[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        b[12] = self.proto;
        b
    }

    pub fn from_bytes(b: &[u8; FLOW_ID_LEN]) -> Self {
        FlowId {
            src_ip: b[0..4].try_into().unwrap(),
            dst_ip: b[4..8].try_into().unwrap(),
            src_port: u16::from_be_bytes([b[8], b[9]]),
            dst_port: u16::from_be_bytes([b[10], b[11]]),
            proto: b[12],
        }
    }

    pub fn reversed(&self) -> Self {
        FlowId {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }

    /// Bidirectional normal form: the smaller (ip, port) endpoint first.
    pub fn canonical(&self) -> (FlowId, FlowDirection) {
        if (self.src_ip, self.src_port) <= (self.dst_ip, self.dst_port) {
            (*self, FlowDirection::Forward)
        } else {
            (self.reversed(), FlowDirection::Reverse)
        }
    }
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}>{}:{}/{}",
            Ipv4Addr::from(self.src_ip),
            self.src_port,
            Ipv4Addr::from(self.dst_ip),
            self.dst_port,
            self.proto
        )
    }
}

impl fmt::Debug for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FlowId({self})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport<'a> {
    Tcp {
        seq: u32,
        flags: u8,
        payload: &'a [u8],
    },
    Udp {
        payload: &'a [u8],
    },
}

/// A parsed L2-L4 packet. `fid` is in packet orientation (not canonical).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parsed<'a> {
    pub fid: FlowId,
    pub ip_offset: usize,
    pub transport: Transport<'a>,
}

impl Parsed<'_> {
    pub fn payload(&self) -> &[u8] {
        match self.transport {
            Transport::Tcp { payload, .. } | Transport::Udp { payload } => payload,
        }
    }

    pub fn tcp_flags(&self) -> u8 {
        match self.transport {
            Transport::Tcp { flags, .. } => flags,
            Transport::Udp { .. } => 0,
        }
    }
}

/// Offset of the IPv4 header within an Ethernet frame.
pub fn ipv4_offset(frame: &[u8]) -> Result<usize, ParseError> {
    if frame.len() < ETH_HEADER_LEN {
        return Err(ParseError::Truncated("ethernet"));
    }
    let mut off = 12;
    let mut ethertype = u16::from_be_bytes([frame[off], frame[off + 1]]);
    while ethertype == ETHERTYPE_VLAN {
        off += 4;
        if frame.len() < off + 2 {
            return Err(ParseError::Truncated("vlan"));
        }
        ethertype = u16::from_be_bytes([frame[off], frame[off + 1]]);
    }
    if ethertype != ETHERTYPE_IPV4 {
        return Err(ParseError::NotIpv4(ethertype));
    }
    Ok(off + 2)
}

pub fn parse(frame: &[u8]) -> Result<Parsed<'_>, ParseError> {
    let ip_off = ipv4_offset(frame)?;
    let ip = &frame[ip_off..];
    if ip.len() < IPV4_HEADER_LEN {
        return Err(ParseError::Truncated("ipv4"));
    }
    if ip[0] >> 4 != 4 {
        return Err(ParseError::BadIpHeader);
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    let total = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    if ihl < IPV4_HEADER_LEN || total < ihl || ip.len() < ihl {
        return Err(ParseError::BadIpHeader);
    }
    let frag = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
    if frag != 0 {
        return Err(ParseError::NonInitialFragment);
    }
    // trailing Ethernet padding is not payload
    let ip = &ip[..total.min(ip.len())];
    let proto = ip[9];
    let src_ip: [u8; 4] = ip[12..16].try_into().unwrap();
    let dst_ip: [u8; 4] = ip[16..20].try_into().unwrap();
    let l4 = &ip[ihl..];
    let (src_port, dst_port, transport) = match proto {
        PROTO_TCP => {
            if l4.len() < TCP_HEADER_LEN {
                return Err(ParseError::Truncated("tcp"));
            }
            let doff = ((l4[12] >> 4) as usize) * 4;
            if doff < TCP_HEADER_LEN || l4.len() < doff {
                return Err(ParseError::Truncated("tcp"));
            }
            (
                u16::from_be_bytes([l4[0], l4[1]]),
                u16::from_be_bytes([l4[2], l4[3]]),
                Transport::Tcp {
                    seq: u32::from_be_bytes(l4[4..8].try_into().unwrap()),
                    flags: l4[13],
                    payload: &l4[doff..],
                },
            )
        }
        PROTO_UDP => {
            if l4.len() < UDP_HEADER_LEN {
                return Err(ParseError::Truncated("udp"));
            }
            (
                u16::from_be_bytes([l4[0], l4[1]]),
                u16::from_be_bytes([l4[2], l4[3]]),
                Transport::Udp {
                    payload: &l4[UDP_HEADER_LEN..],
                },
            )
        }
        other => return Err(ParseError::UnsupportedProtocol(other)),
    };
    Ok(Parsed {
        fid: FlowId {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            proto,
        },
        ip_offset: ip_off,
        transport,
    })
}

/// Standard one's-complement header checksum.
pub fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .enumerate()
        .filter(|(i, _)| *i != 5)
        .map(|(_, c)| u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

pub(crate) fn write_ipv4_header(
    out: &mut [u8],
    total_len: u16,
    ident: u16,
    flags_frag: u16,
    proto: u8,
    src: [u8; 4],
    dst: [u8; 4],
) {
    out[0] = 0x45;
    out[1] = 0;
    out[2..4].copy_from_slice(&total_len.to_be_bytes());
    out[4..6].copy_from_slice(&ident.to_be_bytes());
    out[6..8].copy_from_slice(&flags_frag.to_be_bytes());
    out[8] = 64;
    out[9] = proto;
    out[12..16].copy_from_slice(&src);
    out[16..20].copy_from_slice(&dst);
    let c = ipv4_checksum(&out[..IPV4_HEADER_LEN]);
    out[10..12].copy_from_slice(&c.to_be_bytes());
}

/// Build an Ethernet/IPv4/TCP frame.
pub fn build_tcp(fid: &FlowId, seq: u32, flags: u8, ident: u16, payload: &[u8]) -> Vec<u8> {
    let l4_len = TCP_HEADER_LEN + payload.len();
    let mut f = vec![0u8; ETH_HEADER_LEN + IPV4_HEADER_LEN + l4_len];
    write_eth(&mut f);
    write_ipv4_header(
        &mut f[ETH_HEADER_LEN..],
        (IPV4_HEADER_LEN + l4_len) as u16,
        ident,
        0,
        PROTO_TCP,
        fid.src_ip,
        fid.dst_ip,
    );
    let t = &mut f[ETH_HEADER_LEN + IPV4_HEADER_LEN..];
    t[0..2].copy_from_slice(&fid.src_port.to_be_bytes());
    t[2..4].copy_from_slice(&fid.dst_port.to_be_bytes());
    t[4..8].copy_from_slice(&seq.to_be_bytes());
    t[12] = 5 << 4;
    t[13] = flags;
    t[14..16].copy_from_slice(&0xffffu16.to_be_bytes());
    t[TCP_HEADER_LEN..].copy_from_slice(payload);
    f
}

/// Build an Ethernet/IPv4/UDP frame.
pub fn build_udp(fid: &FlowId, ident: u16, payload: &[u8]) -> Vec<u8> {
    let l4_len = UDP_HEADER_LEN + payload.len();
    let mut f = vec![0u8; ETH_HEADER_LEN + IPV4_HEADER_LEN + l4_len];
    write_eth(&mut f);
    write_ipv4_header(
        &mut f[ETH_HEADER_LEN..],
        (IPV4_HEADER_LEN + l4_len) as u16,
        ident,
        0,
        PROTO_UDP,
        fid.src_ip,
        fid.dst_ip,
    );
    let u = &mut f[ETH_HEADER_LEN + IPV4_HEADER_LEN..];
    u[0..2].copy_from_slice(&fid.src_port.to_be_bytes());
    u[2..4].copy_from_slice(&fid.dst_port.to_be_bytes());
    u[4..6].copy_from_slice(&(l4_len as u16).to_be_bytes());
    u[UDP_HEADER_LEN..].copy_from_slice(payload);
    f
}

fn write_eth(f: &mut [u8]) {
    f[0..6].copy_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    f[6..12].copy_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    f[12..14].copy_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
}
