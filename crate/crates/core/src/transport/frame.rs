//! Socket frame layout, all fields little-endian:
//!
//! ```text
//! magic u32 | source u32 | dest u32 | dest_offset u64 | count u64 | payload
//! ```
//!
//! Data frames carry `count` elements of the exchange's element size, to be
//! written at `dest_offset` in the receiver's landing region. Control frames
//! (collectives, handshake) reuse the layout with the tag in `dest_offset`
//! and the payload length in bytes in `count`.

use std::io::{self, Read, Write};

pub const DATA_MAGIC: u32 = u32::from_le_bytes(*b"LBSD");
pub const CONTROL_MAGIC: u32 = u32::from_le_bytes(*b"LBSC");
pub const HEADER_BYTES: usize = 28;

/// Routing for one chunk of exchange data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExchangeHeader {
    pub source: u32,
    pub dest: u32,
    /// Element index into the receiver's landing region.
    pub dest_offset: u64,
    /// Element count.
    pub count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    Control,
}

pub fn encode_header(kind: FrameKind, h: &ExchangeHeader) -> [u8; HEADER_BYTES] {
    let magic = match kind {
        FrameKind::Data => DATA_MAGIC,
        FrameKind::Control => CONTROL_MAGIC,
    };
    let mut out = [0u8; HEADER_BYTES];
    out[0..4].copy_from_slice(&magic.to_le_bytes());
    out[4..8].copy_from_slice(&h.source.to_le_bytes());
    out[8..12].copy_from_slice(&h.dest.to_le_bytes());
    out[12..20].copy_from_slice(&h.dest_offset.to_le_bytes());
    out[20..28].copy_from_slice(&h.count.to_le_bytes());
    out
}

pub fn decode_header(raw: &[u8; HEADER_BYTES]) -> io::Result<(FrameKind, ExchangeHeader)> {
    let u32_at = |i: usize| u32::from_le_bytes(raw[i..i + 4].try_into().unwrap());
    let u64_at = |i: usize| u64::from_le_bytes(raw[i..i + 8].try_into().unwrap());
    let kind = match u32_at(0) {
        DATA_MAGIC => FrameKind::Data,
        CONTROL_MAGIC => FrameKind::Control,
        other => {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("bad frame magic {other:#010x}"),
            ))
        }
    };
    Ok((
        kind,
        ExchangeHeader {
            source: u32_at(4),
            dest: u32_at(8),
            dest_offset: u64_at(12),
            count: u64_at(20),
        },
    ))
}

pub fn write_frame<W: Write>(
    w: &mut W,
    kind: FrameKind,
    h: &ExchangeHeader,
    payload: &[u8],
) -> io::Result<()> {
    w.write_all(&encode_header(kind, h))?;
    w.write_all(payload)
}

/// Reads one header; `Ok(None)` on a clean EOF before the first byte.
pub fn read_header<R: Read>(r: &mut R) -> io::Result<Option<(FrameKind, ExchangeHeader)>> {
    let mut raw = [0u8; HEADER_BYTES];
    let mut filled = 0;
    while filled < HEADER_BYTES {
        match r.read(&mut raw[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    decode_header(&raw).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn header_roundtrip(source: u32, dest: u32, dest_offset: u64, count: u64, data: bool) {
            let h = ExchangeHeader { source, dest, dest_offset, count };
            let kind = if data { FrameKind::Data } else { FrameKind::Control };
            prop_assert_eq!(decode_header(&encode_header(kind, &h)).unwrap(), (kind, h));
        }
    }

    #[test]
    fn byte_layout() {
        let h = ExchangeHeader {
            source: 1,
            dest: 2,
            dest_offset: 3,
            count: 4,
        };
        let raw = encode_header(FrameKind::Data, &h);
        assert_eq!(&raw[0..4], b"LBSD");
        assert_eq!(&raw[4..8], &[1, 0, 0, 0]);
        assert_eq!(&raw[8..12], &[2, 0, 0, 0]);
        assert_eq!(&raw[12..20], &[3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&raw[20..28], &[4, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut raw = encode_header(
            FrameKind::Control,
            &ExchangeHeader {
                source: 0,
                dest: 0,
                dest_offset: 0,
                count: 0,
            },
        );
        raw[0] = b'X';
        assert!(decode_header(&raw).is_err());
        let mut short: &[u8] = &raw[..10];
        assert!(read_header(&mut short).is_err());
        let mut empty: &[u8] = &[];
        assert!(read_header(&mut empty).unwrap().is_none());
    }
}
