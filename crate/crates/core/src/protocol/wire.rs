// Licensed under the Apache-2.0 license

//! Byte layouts of the three protocol messages.
//!
//! ```text
//! M1 = n_A (32) || q_A (32) || AR (1)                      65 bytes
//! M2 = n_B (32) || q_B (32) || AR (1) || AE_K(Q_B || sig_B)  65 + 196 bytes
//! M3 = AE_K(Q_A || sig_A)                                  196 bytes
//! ```
//!
//! Ciphertext lengths are not checked here; a short or long ciphertext
//! fails authentication instead.

use super::crypto::{Nonce, AE_TAG_LEN, NONCE_LEN, POINT_LEN};
use super::AbortReason;
use crate::quote::{QUOTE_WIRE_LEN, SIGNATURE_LEN};
use crate::transport::{Frame, FrameType};

/// The attestation-request flag carried in M1 and M2.
pub const AR_REQUEST: u8 = 0x01;

pub const M1_LEN: usize = NONCE_LEN + POINT_LEN + 1;
/// Quote followed by the transcript signature.
pub const SEALED_PLAINTEXT_LEN: usize = QUOTE_WIRE_LEN + SIGNATURE_LEN;
pub const SEALED_LEN: usize = SEALED_PLAINTEXT_LEN + AE_TAG_LEN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireM1 {
    pub n_a: Nonce,
    pub q_a: [u8; POINT_LEN],
    pub ar: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireM2 {
    pub n_b: Nonce,
    pub q_b: [u8; POINT_LEN],
    pub ar: u8,
    pub ct: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireM3 {
    pub ct: Vec<u8>,
}

/// The fixed M1-shaped prefix, then the rest of the message.
type Header<'a> = (Nonce, [u8; POINT_LEN], u8, &'a [u8]);

fn split_header(bytes: &[u8]) -> Result<Header<'_>, AbortReason> {
    if bytes.len() < M1_LEN {
        return Err(AbortReason::Malformed);
    }
    let n = bytes[..NONCE_LEN].try_into().expect("32 bytes");
    let q = bytes[NONCE_LEN..NONCE_LEN + POINT_LEN]
        .try_into()
        .expect("32 bytes");
    Ok((n, q, bytes[M1_LEN - 1], &bytes[M1_LEN..]))
}

impl WireM1 {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(M1_LEN);
        out.extend_from_slice(&self.n_a);
        out.extend_from_slice(&self.q_a);
        out.push(self.ar);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AbortReason> {
        let (n_a, q_a, ar, rest) = split_header(bytes)?;
        if !rest.is_empty() {
            return Err(AbortReason::Malformed);
        }
        Ok(WireM1 { n_a, q_a, ar })
    }
}

impl WireM2 {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(M1_LEN + self.ct.len());
        out.extend_from_slice(&self.n_b);
        out.extend_from_slice(&self.q_b);
        out.push(self.ar);
        out.extend_from_slice(&self.ct);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AbortReason> {
        let (n_b, q_b, ar, ct) = split_header(bytes)?;
        Ok(WireM2 {
            n_b,
            q_b,
            ar,
            ct: ct.to_vec(),
        })
    }
}

impl WireM3 {
    pub fn encode(&self) -> Vec<u8> {
        self.ct.clone()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AbortReason> {
        Ok(WireM3 { ct: bytes.to_vec() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    M1,
    M2,
    M3,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    M1(WireM1),
    M2(WireM2),
    M3(WireM3),
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::M1(_) => MessageKind::M1,
            Message::M2(_) => MessageKind::M2,
            Message::M3(_) => MessageKind::M3,
        }
    }

    pub fn to_frame(&self) -> Frame {
        let (frame_type, payload) = match self {
            Message::M1(m) => (FrameType::M1, m.encode()),
            Message::M2(m) => (FrameType::M2, m.encode()),
            Message::M3(m) => (FrameType::M3, m.encode()),
        };
        Frame {
            frame_type,
            payload,
        }
    }

    /// Decodes a protocol frame. Error frames are not messages and yield
    /// `Ok(None)`.
    pub fn from_frame(frame: &Frame) -> Result<Option<Message>, AbortReason> {
        Ok(Some(match frame.frame_type {
            FrameType::M1 => Message::M1(WireM1::decode(&frame.payload)?),
            FrameType::M2 => Message::M2(WireM2::decode(&frame.payload)?),
            FrameType::M3 => Message::M3(WireM3::decode(&frame.payload)?),
            FrameType::Error => return Ok(None),
        }))
    }
}

/// Courtesy notice sent to the peer on abort: a single reason byte in a
/// frame of type 0xFF. Receivers never act on its content beyond logging.
pub fn error_frame(reason: AbortReason) -> Frame {
    Frame {
        frame_type: FrameType::Error,
        payload: vec![reason.code()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m1_is_65_bytes() {
        let m1 = WireM1 {
            n_a: [1; 32],
            q_a: [2; 32],
            ar: AR_REQUEST,
        };
        let b = m1.encode();
        assert_eq!(b.len(), 65);
        assert_eq!(WireM1::decode(&b), Ok(m1));
        assert_eq!(WireM1::decode(&b[..64]), Err(AbortReason::Malformed));
        let mut long = b.clone();
        long.push(0);
        assert_eq!(WireM1::decode(&long), Err(AbortReason::Malformed));
    }

    #[test]
    fn m2_layout() {
        let m2 = WireM2 {
            n_b: [3; 32],
            q_b: [4; 32],
            ar: AR_REQUEST,
            ct: vec![5; SEALED_LEN],
        };
        let b = m2.encode();
        assert_eq!(b.len(), 65 + 196);
        assert_eq!(b[64], AR_REQUEST);
        assert_eq!(WireM2::decode(&b), Ok(m2));
    }

    #[test]
    fn sealed_sizes() {
        assert_eq!(SEALED_PLAINTEXT_LEN, 180);
        assert_eq!(SEALED_LEN, 196);
    }

    #[test]
    fn frames_round_trip() {
        let msg = Message::M3(WireM3 { ct: vec![9; 196] });
        let f = msg.to_frame();
        assert_eq!(f.frame_type, FrameType::M3);
        assert_eq!(Message::from_frame(&f), Ok(Some(msg)));
        assert_eq!(
            Message::from_frame(&error_frame(AbortReason::BadTag)),
            Ok(None)
        );
    }
}
