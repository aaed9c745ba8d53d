//! IPv4 fragmentation so every packet fits the tunnel's packet buffer.

use thiserror::Error;

use crate::packet::{ipv4_checksum, ipv4_offset, IPV4_HEADER_LEN};

const DF: u16 = 0x4000;
const MF: u16 = 0x2000;
const OFFSET_MASK: u16 = 0x1fff;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FragmentError {
    #[error("oversize packet is not IPv4")]
    NotIpv4,
    #[error("oversize packet has DF set")]
    DontFragment,
    #[error("malformed IPv4 header")]
    BadHeader,
    #[error("mtu {0} leaves no room for payload")]
    MtuTooSmall(usize),
}

/// Split an IPv4 datagram into fragments of at most `mtu` bytes each.
/// Headers (options included) are copied into every fragment, offsets are
/// counted in 8-byte units and MF is set on all but the last piece.
/// Fragmenting a fragment preserves its offset and its MF bit.
pub fn fragment(datagram: &[u8], mtu: usize) -> Result<Vec<Vec<u8>>, FragmentError> {
    if datagram.len() <= mtu {
        return Ok(vec![datagram.to_vec()]);
    }
    if datagram.len() < IPV4_HEADER_LEN || datagram[0] >> 4 != 4 {
        return Err(FragmentError::NotIpv4);
    }
    let ihl = ((datagram[0] & 0x0f) as usize) * 4;
    let total = u16::from_be_bytes([datagram[2], datagram[3]]) as usize;
    if ihl < IPV4_HEADER_LEN || total < ihl || total > datagram.len() {
        return Err(FragmentError::BadHeader);
    }
    let flags = u16::from_be_bytes([datagram[6], datagram[7]]);
    if flags & DF != 0 {
        return Err(FragmentError::DontFragment);
    }
    let chunk = (mtu.saturating_sub(ihl)) & !7;
    if chunk == 0 {
        return Err(FragmentError::MtuTooSmall(mtu));
    }
    let base_off = (flags & OFFSET_MASK) as usize * 8;
    let last_mf = flags & MF;
    let header = &datagram[..ihl];
    let payload = &datagram[ihl..total];

    let mut out = Vec::with_capacity(payload.len().div_ceil(chunk));
    for (i, piece) in payload.chunks(chunk).enumerate() {
        let off = base_off + i * chunk;
        let last = (i + 1) * chunk >= payload.len();
        let mut f = Vec::with_capacity(ihl + piece.len());
        f.extend_from_slice(header);
        f.extend_from_slice(piece);
        f[2..4].copy_from_slice(&((ihl + piece.len()) as u16).to_be_bytes());
        let ff = ((off / 8) as u16) | if last { last_mf } else { MF };
        f[6..8].copy_from_slice(&ff.to_be_bytes());
        let c = ipv4_checksum(&f[..ihl]);
        f[10..12].copy_from_slice(&c.to_be_bytes());
        out.push(f);
    }
    Ok(out)
}

/// Fragment an Ethernet frame so every output frame is at most `max_len`
/// bytes, link-layer header included.
pub fn fragment_frame(frame: &[u8], max_len: usize) -> Result<Vec<Vec<u8>>, FragmentError> {
    if frame.len() <= max_len {
        return Ok(vec![frame.to_vec()]);
    }
    let l2 = ipv4_offset(frame).map_err(|_| FragmentError::NotIpv4)?;
    let ip = &frame[l2..];
    // anything past the IP total length is link padding
    let total = if ip.len() >= 4 {
        (u16::from_be_bytes([ip[2], ip[3]]) as usize).min(ip.len())
    } else {
        return Err(FragmentError::BadHeader);
    };
    let pieces = fragment(&ip[..total], max_len.saturating_sub(l2))?;
    Ok(pieces
        .into_iter()
        .map(|p| {
            let mut f = Vec::with_capacity(l2 + p.len());
            f.extend_from_slice(&frame[..l2]);
            f.extend_from_slice(&p);
            f
        })
        .collect())
}
