// Licensed under the Apache-2.0 license

//! Frame delivery over an in-memory duplex channel or TCP.

pub mod channel;
pub mod frame;
pub mod tcp;

use std::time::Duration;

use thiserror::Error;

pub use channel::{channel_pair, channel_pair_with, ChannelEndpoint, Tap};
pub use frame::{decode_frame, encode_frame, Frame, FrameError, FrameType, MAX_PAYLOAD};
pub use tcp::TcpTransport;

pub const DEFAULT_RECV_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("receive timed out")]
    Timeout,
    #[error("channel closed")]
    ChannelClosed,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A reliable, ordered carrier of frames.
pub trait FrameTransport {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError>;

    /// Blocks for the next whole frame, up to the receive timeout.
    fn recv(&mut self) -> Result<Frame, TransportError>;

    fn set_timeout(&mut self, timeout: Duration);
}

/// Pulls one frame off the front of a reassembly buffer, if complete.
pub(crate) fn take_frame(buf: &mut Vec<u8>) -> Result<Option<Frame>, FrameError> {
    match decode_frame(buf) {
        Ok((frame, used)) => {
            buf.drain(..used);
            Ok(Some(frame))
        }
        Err(FrameError::Truncated) => Ok(None),
        Err(e) => Err(e),
    }
}
