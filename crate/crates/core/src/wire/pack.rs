//! Back-to-back packing of frames into fixed-size records and the inverse
//! streaming parser.

use super::frame::{decode_exact, frame_len, Frame, FrameRef, FrameType};
use super::{WireError, RECORD_LEN};

/// Accumulates encoded frames into a contiguous run of records. Frames
/// straddle record boundaries freely.
#[derive(Debug, Default)]
pub struct RecordPacker {
    stream: Vec<u8>,
}

impl RecordPacker {
    pub fn new() -> Self {
        RecordPacker::default()
    }

    pub fn push(&mut self, frame: FrameRef<'_>) -> Result<(), WireError> {
        frame.encode_into(&mut self.stream)
    }

    pub fn push_frame(&mut self, frame: &Frame) -> Result<(), WireError> {
        match frame.as_ref() {
            Some(f) => self.push(f),
            None => {
                self.flush();
                Ok(())
            }
        }
    }

    /// Close the partial record with a padding frame. No-op on a record
    /// boundary.
    pub fn flush(&mut self) {
        let partial = self.stream.len() % RECORD_LEN;
        if partial != 0 {
            self.stream.push(FrameType::Padding as u8);
            let pad = RECORD_LEN - partial - 1;
            self.stream.resize(self.stream.len() + pad, 0);
        }
    }

    /// Flush, then append padding-only records until the number of
    /// complete records is a multiple of `batch`.
    pub fn pad_to_batch(&mut self, batch: usize) {
        self.flush();
        while !self.complete().is_multiple_of(batch) {
            self.stream.push(FrameType::Padding as u8);
            self.stream.resize(self.stream.len() + RECORD_LEN - 1, 0);
        }
    }

    /// Number of complete records ready to be taken.
    pub fn complete(&self) -> usize {
        self.stream.len() / RECORD_LEN
    }

    /// Bytes sitting in the unfinished record.
    pub fn pending(&self) -> usize {
        self.stream.len() % RECORD_LEN
    }

    /// Plaintext of the `i`-th complete record.
    pub fn record_mut(&mut self, i: usize) -> &mut [u8] {
        assert!(i < self.complete());
        &mut self.stream[i * RECORD_LEN..(i + 1) * RECORD_LEN]
    }

    /// Drop the first `n` complete records.
    pub fn consume(&mut self, n: usize) {
        assert!(n <= self.complete());
        self.stream.drain(..n * RECORD_LEN);
    }

    /// Remove up to `max` complete records as owned buffers.
    pub fn take(&mut self, max: usize) -> Vec<Vec<u8>> {
        let n = self.complete().min(max);
        let out = self.stream[..n * RECORD_LEN]
            .chunks_exact(RECORD_LEN)
            .map(<[u8]>::to_vec)
            .collect();
        self.consume(n);
        out
    }
}

/// Pack `frames` into 16 KiB plaintext records. With `flush`, a trailing
/// partial record is padded and emitted; without it, the partial tail is
/// discarded from the output (callers that need it should keep a
/// [`RecordPacker`] instead).
pub fn pack_stream(frames: &[Frame], flush: bool) -> Result<Vec<Vec<u8>>, WireError> {
    let mut p = RecordPacker::new();
    for f in frames {
        p.push_frame(f)?;
    }
    if flush {
        p.flush();
    }
    Ok(p.take(usize::MAX))
}

/// Streaming record parser. Holds the carry-over of a frame cut at a record
/// boundary.
#[derive(Debug, Default)]
pub struct RecordBuf {
    pending: Vec<u8>,
}

impl RecordBuf {
    pub fn new() -> Self {
        RecordBuf::default()
    }

    /// Bytes of an incomplete frame carried from earlier records.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Parse one decrypted record, calling `sink` for every complete frame.
    /// Padding is consumed silently.
    pub fn parse<F>(&mut self, record: &[u8], mut sink: F) -> Result<(), WireError>
    where
        F: FnMut(FrameRef<'_>),
    {
        debug_assert_eq!(record.len(), RECORD_LEN);
        let mut pos = 0;

        // finish the frame pending from the previous record
        if !self.pending.is_empty() {
            loop {
                match frame_len(&self.pending)? {
                    Some(need) => {
                        let take = (need - self.pending.len()).min(record.len() - pos);
                        self.pending.extend_from_slice(&record[pos..pos + take]);
                        pos += take;
                        if self.pending.len() < need {
                            return Ok(());
                        }
                        sink(decode_exact(&self.pending)?);
                        self.pending.clear();
                        break;
                    }
                    None => {
                        // header itself was split; pull one byte at a time
                        if pos == record.len() {
                            return Ok(());
                        }
                        self.pending.push(record[pos]);
                        pos += 1;
                    }
                }
            }
        }

        while pos < record.len() {
            let rest = &record[pos..];
            if rest[0] == FrameType::Padding as u8 {
                return Ok(());
            }
            match frame_len(rest)? {
                Some(need) if need <= rest.len() => {
                    sink(decode_exact(&rest[..need])?);
                    pos += need;
                }
                _ => {
                    self.pending.extend_from_slice(rest);
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}

/// Parse a sequence of records into owned frames.
pub fn parse_records<'a, I>(records: I) -> Result<Vec<Frame>, WireError>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut buf = RecordBuf::new();
    let mut out = Vec::new();
    let mut err = None;
    for rec in records {
        buf.parse(rec, |f| match f.to_frame() {
            Ok(f) => out.push(f),
            Err(e) => err = Some(e),
        })?;
        if let Some(e) = err.take() {
            return Err(e);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::frame::{tests::arb_frame, PktInfo};
    use proptest::prelude::*;

    fn data(len: usize, ts: u64) -> Frame {
        Frame::Data(PktInfo::new(ts, &vec![(len % 251) as u8; len]).unwrap())
    }

    #[test]
    fn two_frames_one_padded_record() {
        let recs = pack_stream(&[data(1000, 1), data(600, 2)], true).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.len(), 16384);
        // 1011 + 611 = 1622 frame bytes, marker, then 16384-1622-1 = 14761 filler
        assert_eq!(r[1622], FrameType::Padding as u8);
        assert_eq!(r.len() - 1622 - 1, 14761);
        assert!(r[1623..].iter().all(|&b| b == 0));
        let back = parse_records(recs.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(back, vec![data(1000, 1), data(600, 2)]);
    }

    #[test]
    fn thirty_three_mtu_frames() {
        let frames: Vec<_> = (0..33).map(|i| data(1500, i)).collect();
        let recs = pack_stream(&frames, true).unwrap();
        assert_eq!(recs.len(), 49863usize.div_ceil(16384));
        assert_eq!(recs.len(), 4);
        // last record carries 49863 - 3*16384 = 711 frame bytes then padding
        assert_eq!(recs[3][711], FrameType::Padding as u8);
        assert_eq!(parse_records(recs.iter().map(Vec::as_slice)).unwrap(), frames);
    }

    #[test]
    fn empty_input_no_records() {
        assert!(pack_stream(&[], true).unwrap().is_empty());
    }

    #[test]
    fn padding_only_record_yields_nothing() {
        let mut rec = vec![0u8; RECORD_LEN];
        rec[0] = FrameType::Padding as u8;
        assert!(parse_records([rec.as_slice()]).unwrap().is_empty());
    }

    /// Data frames whose encodings total exactly `n` bytes (`n` >= 11).
    fn fill(mut n: usize) -> Vec<Frame> {
        let mut out = Vec::new();
        while n > 0 {
            let take = if n == 1511 || n >= 1511 + 11 {
                1511
            } else if n <= 1511 {
                n
            } else {
                1000
            };
            out.push(data(take - 11, 0));
            n -= take;
        }
        out
    }

    #[test]
    fn split_100_1411() {
        // 16284 bytes of earlier frames cut the next 1511-byte frame 100/1411.
        let mut frames = fill(16284);
        let target = Frame::Data(PktInfo::new(777, &[0x5a; 1500]).unwrap());
        frames.push(target.clone());
        let recs = pack_stream(&frames, true).unwrap();
        assert_eq!(recs.len(), 2);
        let mut buf = RecordBuf::new();
        let mut got = Vec::new();
        buf.parse(&recs[0], |f| got.push(f.to_frame().unwrap())).unwrap();
        assert_eq!(buf.pending(), 100);
        buf.parse(&recs[1], |f| got.push(f.to_frame().unwrap())).unwrap();
        assert_eq!(buf.pending(), 0);
        assert_eq!(got.last(), Some(&target));
        assert_eq!(got, frames);
    }

    #[test]
    fn header_split_across_records() {
        for cut in 1..=11 {
            let mut frames = fill(RECORD_LEN - cut);
            frames.push(data(300, 99));
            frames.push(Frame::HeartbeatResp(5));
            let recs = pack_stream(&frames, true).unwrap();
            assert_eq!(parse_records(recs.iter().map(Vec::as_slice)).unwrap(), frames);
        }
        for cut in 1..=9 {
            let mut frames = fill(RECORD_LEN - cut);
            frames.push(Frame::HeartbeatReq(0xdead_beef));
            let recs = pack_stream(&frames, true).unwrap();
            assert_eq!(parse_records(recs.iter().map(Vec::as_slice)).unwrap(), frames);
        }
    }

    #[test]
    fn unknown_type_is_malformed() {
        let mut rec = vec![0u8; RECORD_LEN];
        rec[0] = 0x7f;
        assert_eq!(
            parse_records([rec.as_slice()]).unwrap_err(),
            WireError::UnknownFrameType(0x7f)
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn pack_parse_round_trip(
            frames in proptest::collection::vec(arb_frame(), 0..40),
            flush_every in 1usize..20,
        ) {
            let mut p = RecordPacker::new();
            for (i, f) in frames.iter().enumerate() {
                p.push_frame(f).unwrap();
                if i % flush_every == flush_every - 1 {
                    p.flush();
                }
            }
            p.flush();
            let recs = p.take(usize::MAX);
            prop_assert!(recs.iter().all(|r| r.len() == RECORD_LEN));
            let back = parse_records(recs.iter().map(Vec::as_slice)).unwrap();
            prop_assert_eq!(back, frames);
        }
    }
}
