use std::fmt;

use super::WireError;

/// Largest packet a [`PktInfo`] can carry.
pub const MAX_PKT_LEN: usize = 1500;
/// type + len + timestamp
pub const DATA_HEADER_LEN: usize = 1 + 2 + 8;
/// type + timestamp
pub const HEARTBEAT_LEN: usize = 1 + 8;

/// Packet descriptor: size, timestamp (μs), raw bytes. Stored inline so ring
/// slots never allocate.
#[derive(Clone)]
pub struct PktInfo {
    len: u16,
    timestamp: u64,
    data: [u8; MAX_PKT_LEN],
}

impl PktInfo {
    pub fn new(timestamp: u64, data: &[u8]) -> Result<Self, WireError> {
        let mut p = PktInfo::default();
        p.set(timestamp, data)?;
        Ok(p)
    }

    pub fn set(&mut self, timestamp: u64, data: &[u8]) -> Result<(), WireError> {
        if data.len() > MAX_PKT_LEN {
            return Err(WireError::Oversize(data.len()));
        }
        self.len = data.len() as u16;
        self.timestamp = timestamp;
        self.data[..data.len()].copy_from_slice(data);
        Ok(())
    }

    /// Copy only the live bytes of `other`.
    pub fn copy_from(&mut self, other: &PktInfo) {
        self.len = other.len;
        self.timestamp = other.timestamp;
        self.data[..other.len()].copy_from_slice(other.data());
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    pub fn data(&self) -> &[u8] {
        &self.data[..self.len as usize]
    }
}

impl Default for PktInfo {
    fn default() -> Self {
        PktInfo {
            len: 0,
            timestamp: 0,
            data: [0; MAX_PKT_LEN],
        }
    }
}

impl PartialEq for PktInfo {
    fn eq(&self, other: &Self) -> bool {
        self.timestamp == other.timestamp && self.data() == other.data()
    }
}

impl Eq for PktInfo {}

impl fmt::Debug for PktInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PktInfo")
            .field("len", &self.len)
            .field("timestamp", &self.timestamp)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    Data = 0,
    HeartbeatReq = 1,
    HeartbeatResp = 2,
    Padding = 3,
}

impl TryFrom<u8> for FrameType {
    type Error = WireError;

    fn try_from(b: u8) -> Result<Self, WireError> {
        match b {
            0 => Ok(FrameType::Data),
            1 => Ok(FrameType::HeartbeatReq),
            2 => Ok(FrameType::HeartbeatResp),
            3 => Ok(FrameType::Padding),
            other => Err(WireError::UnknownFrameType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Data(PktInfo),
    HeartbeatReq(u64),
    HeartbeatResp(u64),
    /// Filler to the end of the record.
    Padding,
}

/// Borrowed form produced by the record parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRef<'a> {
    Data { timestamp: u64, data: &'a [u8] },
    HeartbeatReq(u64),
    HeartbeatResp(u64),
}

impl FrameRef<'_> {
    pub fn to_frame(&self) -> Result<Frame, WireError> {
        Ok(match *self {
            FrameRef::Data { timestamp, data } => Frame::Data(PktInfo::new(timestamp, data)?),
            FrameRef::HeartbeatReq(t) => Frame::HeartbeatReq(t),
            FrameRef::HeartbeatResp(t) => Frame::HeartbeatResp(t),
        })
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            FrameRef::Data { data, .. } => DATA_HEADER_LEN + data.len(),
            _ => HEARTBEAT_LEN,
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), WireError> {
        match *self {
            FrameRef::Data { timestamp, data } => {
                if data.len() > MAX_PKT_LEN {
                    return Err(WireError::Oversize(data.len()));
                }
                out.push(FrameType::Data as u8);
                out.extend_from_slice(&(data.len() as u16).to_be_bytes());
                out.extend_from_slice(&timestamp.to_be_bytes());
                out.extend_from_slice(data);
            }
            FrameRef::HeartbeatReq(t) => {
                out.push(FrameType::HeartbeatReq as u8);
                out.extend_from_slice(&t.to_be_bytes());
            }
            FrameRef::HeartbeatResp(t) => {
                out.push(FrameType::HeartbeatResp as u8);
                out.extend_from_slice(&t.to_be_bytes());
            }
        }
        Ok(())
    }
}

impl Frame {
    pub fn as_ref(&self) -> Option<FrameRef<'_>> {
        match self {
            Frame::Data(p) => Some(FrameRef::Data {
                timestamp: p.timestamp(),
                data: p.data(),
            }),
            Frame::HeartbeatReq(t) => Some(FrameRef::HeartbeatReq(*t)),
            Frame::HeartbeatResp(t) => Some(FrameRef::HeartbeatResp(*t)),
            Frame::Padding => None,
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self.as_ref() {
            Some(f) => f.encoded_len(),
            None => 1,
        }
    }
}

/// Encode one frame. Padding encodes to its marker byte only; the filler is
/// implied up to the record end.
pub fn frame_encode(frame: &Frame) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    match frame.as_ref() {
        Some(f) => f.encode_into(&mut out)?,
        None => out.push(FrameType::Padding as u8),
    }
    Ok(out)
}

/// Total encoded size of the frame starting with `header`, if enough of the
/// header is present to tell. Padding reports `None` as its extent depends
/// on the record position.
pub(crate) fn frame_len(header: &[u8]) -> Result<Option<usize>, WireError> {
    let Some(&ty) = header.first() else {
        return Ok(None);
    };
    match FrameType::try_from(ty)? {
        FrameType::Data => {
            if header.len() < 3 {
                return Ok(None);
            }
            let len = u16::from_be_bytes([header[1], header[2]]) as usize;
            if len > MAX_PKT_LEN {
                return Err(WireError::MalformedFrame("data length exceeds MTU"));
            }
            Ok(Some(DATA_HEADER_LEN + len))
        }
        FrameType::HeartbeatReq | FrameType::HeartbeatResp => Ok(Some(HEARTBEAT_LEN)),
        FrameType::Padding => Ok(None),
    }
}

/// Decode a complete, non-padding frame occupying exactly `bytes`.
pub(crate) fn decode_exact(bytes: &[u8]) -> Result<FrameRef<'_>, WireError> {
    let ty = FrameType::try_from(bytes[0])?;
    let ts = |b: &[u8]| u64::from_be_bytes(b.try_into().expect("8-byte timestamp"));
    Ok(match ty {
        FrameType::Data => FrameRef::Data {
            timestamp: ts(&bytes[3..11]),
            data: &bytes[DATA_HEADER_LEN..],
        },
        FrameType::HeartbeatReq => FrameRef::HeartbeatReq(ts(&bytes[1..9])),
        FrameType::HeartbeatResp => FrameRef::HeartbeatResp(ts(&bytes[1..9])),
        FrameType::Padding => return Err(WireError::MalformedFrame("padding has no body")),
    })
}

/// Decode the frame at the front of `bytes`, returning it and the number of
/// bytes consumed.
pub fn frame_decode(bytes: &[u8]) -> Result<(Frame, usize), WireError> {
    if bytes.first() == Some(&(FrameType::Padding as u8)) {
        return Ok((Frame::Padding, 1));
    }
    let need = frame_len(bytes)?.ok_or(WireError::Truncated)?;
    if bytes.len() < need {
        return Err(WireError::Truncated);
    }
    Ok((decode_exact(&bytes[..need])?.to_frame()?, need))
}
