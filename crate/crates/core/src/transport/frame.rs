// Licensed under the Apache-2.0 license

//! Self-delimiting frames used on every transport.
//!
//! ```text
//! "LRAV" | version (1) | type (1) | payload_len (u32 BE) | payload
//! ```

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"LRAV";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
pub const MAX_PAYLOAD: usize = 65536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameType {
    M1 = 0x01,
    M2 = 0x02,
    M3 = 0x03,
    Error = 0xFF,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => FrameType::M1,
            0x02 => FrameType::M2,
            0x03 => FrameType::M3,
            0xFF => FrameType::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad frame magic")]
    BadMagic,
    /// Unsupported version byte, or a message type this version does not
    /// define.
    #[error("unsupported frame version or type")]
    BadVersion,
    #[error("frame payload exceeds {MAX_PAYLOAD} bytes")]
    Oversize,
    /// More bytes are needed. Not fatal on a stream.
    #[error("truncated frame")]
    Truncated,
}

impl Frame {
    pub fn new(frame_type: FrameType, payload: Vec<u8>) -> Self {
        Frame {
            frame_type,
            payload,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

pub fn encode_frame(frame_type: FrameType, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::Oversize);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame_type as u8);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Decodes one frame from the front of `bytes` and returns it together
/// with the number of bytes consumed.
///
/// Header fields are checked as soon as they are present, so a bad magic
/// or an oversize length is reported without waiting for more input.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
    let magic_seen = bytes.len().min(MAGIC.len());
    if bytes[..magic_seen] != MAGIC[..magic_seen] {
        return Err(FrameError::BadMagic);
    }
    if let Some(&v) = bytes.get(4) {
        if v != VERSION {
            return Err(FrameError::BadVersion);
        }
    }
    let frame_type = match bytes.get(5) {
        Some(&t) => Some(FrameType::from_byte(t).ok_or(FrameError::BadVersion)?),
        None => None,
    };
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated);
    }
    let len = u32::from_be_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::Oversize);
    }
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(FrameError::Truncated);
    }
    let frame = Frame {
        frame_type: frame_type.expect("header present"),
        payload: bytes[HEADER_LEN..total].to_vec(),
    };
    Ok((frame, total))
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        encode_frame(self.frame_type, &self.payload).expect("frame payload within cap")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn m1_frame_is_75_bytes() {
        let f = encode_frame(FrameType::M1, &[0x11; 65]).unwrap();
        assert_eq!(f.len(), 75);
        assert_eq!(&f[..10], b"LRAV\x01\x01\x00\x00\x00\x41");
    }

    #[test]
    fn header_errors() {
        let mut f = encode_frame(FrameType::M2, &[1, 2, 3]).unwrap();
        assert_eq!(decode_frame(&f[..5]), Err(FrameError::Truncated));
        assert_eq!(decode_frame(&[]), Err(FrameError::Truncated));
        f[0] = b'X';
        assert_eq!(decode_frame(&f), Err(FrameError::BadMagic));
        assert_eq!(decode_frame(b"LRX"), Err(FrameError::BadMagic));
        let mut g = encode_frame(FrameType::M3, &[]).unwrap();
        g[4] = 2;
        assert_eq!(decode_frame(&g), Err(FrameError::BadVersion));
        g[4] = 1;
        g[5] = 0x04;
        assert_eq!(decode_frame(&g), Err(FrameError::BadVersion));
        let over = [&MAGIC[..], &[1, 1, 0, 1, 0, 1]].concat();
        assert_eq!(decode_frame(&over), Err(FrameError::Oversize));
        assert_eq!(
            encode_frame(FrameType::M1, &vec![0; MAX_PAYLOAD + 1]),
            Err(FrameError::Oversize)
        );
    }

    #[test]
    fn cap_is_inclusive() {
        let f = encode_frame(FrameType::M2, &vec![7; MAX_PAYLOAD]).unwrap();
        let (frame, used) = decode_frame(&f).unwrap();
        assert_eq!(used, f.len());
        assert_eq!(frame.payload.len(), MAX_PAYLOAD);
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        (
            prop_oneof![
                Just(FrameType::M1),
                Just(FrameType::M2),
                Just(FrameType::M3),
                Just(FrameType::Error)
            ],
            proptest::collection::vec(any::<u8>(), 0..300),
        )
            .prop_map(|(t, p)| Frame::new(t, p))
    }

    proptest! {
        #[test]
        fn round_trip(frame in arb_frame(), tail in proptest::collection::vec(any::<u8>(), 0..20)) {
            let mut bytes = frame.encode();
            let n = bytes.len();
            bytes.extend_from_slice(&tail);
            let (back, used) = decode_frame(&bytes).unwrap();
            prop_assert_eq!(back, frame);
            prop_assert_eq!(used, n);
        }

        #[test]
        fn concatenation_is_self_delimiting(frames in proptest::collection::vec(arb_frame(), 0..8)) {
            let stream: Vec<u8> = frames.iter().flat_map(Frame::encode).collect();
            let mut rest = &stream[..];
            let mut out = Vec::new();
            while !rest.is_empty() {
                let (f, used) = decode_frame(rest).unwrap();
                out.push(f);
                rest = &rest[used..];
            }
            prop_assert_eq!(out, frames);
        }

        #[test]
        fn every_prefix_is_truncated(frame in arb_frame()) {
            let bytes = frame.encode();
            for cut in 0..bytes.len() {
                prop_assert_eq!(decode_frame(&bytes[..cut]), Err(FrameError::Truncated));
            }
        }

        #[test]
        fn arbitrary_input_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            if let Ok((_, used)) = decode_frame(&bytes) {
                prop_assert!(used <= bytes.len());
            }
        }
    }
}
