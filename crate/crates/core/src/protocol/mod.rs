// Licensed under the Apache-2.0 license

//! Three-message mutual attestation with an ephemeral X25519 exchange.
//!
//! ```text
//! A -> B  M1 = n_A || q_A || AR
//! B -> A  M2 = n_B || q_B || AR || AE_K(Q_B || sig_B)
//! A -> B  M3 = AE_K(Q_A || sig_A)
//! ```

pub mod crypto;
pub mod session;
pub mod wire;

use serde::Serialize;
use thiserror::Error;

use crate::device::DeviceError;
use crate::quote::QuoteError;

pub use crypto::SessionKey;
pub use session::{initiate, respond_m1, Phase, Role, SessionSnapshot, SessionState};
pub use wire::{error_frame, Message, MessageKind, WireM1, WireM2, WireM3};

/// Why a session was aborted. The numeric codes travel in error frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Error)]
pub enum AbortReason {
    /// A local failure unrelated to peer input (for example a refused
    /// signing gate). Never caused by anything on the wire.
    #[error("internal failure")]
    Internal = 0x00,
    #[error("authentication tag mismatch")]
    BadTag = 0x01,
    #[error("signature verification failed")]
    BadSignature = 0x02,
    #[error("measurement mismatch")]
    MeasurementMismatch = 0x03,
    #[error("malformed message")]
    Malformed = 0x04,
    #[error("weak or low-order ephemeral point")]
    WeakPoint = 0x05,
}

impl AbortReason {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x00 => AbortReason::Internal,
            0x01 => AbortReason::BadTag,
            0x02 => AbortReason::BadSignature,
            0x03 => AbortReason::MeasurementMismatch,
            0x04 => AbortReason::Malformed,
            0x05 => AbortReason::WeakPoint,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Error)]
pub enum ProtocolError {
    #[error("session aborted: {0}")]
    Abort(AbortReason),
    #[error("peer {0:?} is not in the trust store")]
    UnknownPeer(String),
    /// The message does not fit the session's role and phase. The session
    /// is left unchanged.
    #[error("{message:?} not expected by {role:?} in phase {phase:?}")]
    UnexpectedMessage {
        phase: Phase,
        role: Role,
        message: MessageKind,
    },
    #[error("operation not valid for {role:?} in phase {phase:?}")]
    InvalidPhase { phase: Phase, role: Role },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Quote(#[from] QuoteError),
}

impl From<AbortReason> for ProtocolError {
    fn from(r: AbortReason) -> Self {
        ProtocolError::Abort(r)
    }
}

impl ProtocolError {
    /// The reason to report to the peer, if this error ends the session.
    pub fn abort_reason(&self) -> Option<AbortReason> {
        match self {
            ProtocolError::Abort(r) => Some(*r),
            ProtocolError::UnexpectedMessage { .. } | ProtocolError::InvalidPhase { .. } => None,
            _ => Some(AbortReason::Internal),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reason_codes() {
        assert_eq!(AbortReason::BadTag.code(), 0x01);
        assert_eq!(AbortReason::BadSignature.code(), 0x02);
        assert_eq!(AbortReason::MeasurementMismatch.code(), 0x03);
        assert_eq!(AbortReason::Malformed.code(), 0x04);
        assert_eq!(AbortReason::WeakPoint.code(), 0x05);
        for c in 0..=0xFF {
            if let Some(r) = AbortReason::from_code(c) {
                assert_eq!(r.code(), c);
            }
        }
        assert_eq!(AbortReason::from_code(0x06), None);
    }
}
