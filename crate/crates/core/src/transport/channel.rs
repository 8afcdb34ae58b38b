// Licensed under the Apache-2.0 license

//! In-memory duplex channel. Each direction can carry a tap that sees every
//! outbound frame and decides what is actually delivered, which is how the
//! network adversary is modelled.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use super::{take_frame, Frame, FrameTransport, TransportError, DEFAULT_RECV_TIMEOUT};

/// Maps one outbound frame to the frames actually delivered.
pub type Tap = Box<dyn FnMut(Frame) -> Vec<Frame> + Send>;

pub struct ChannelEndpoint {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    tap: Option<Tap>,
    timeout: Duration,
    closed: bool,
}

impl std::fmt::Debug for ChannelEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelEndpoint")
            .field("buffered", &self.buf.len())
            .field("tapped", &self.tap.is_some())
            .field("closed", &self.closed)
            .finish()
    }
}

/// Two connected endpoints with reliable, ordered delivery.
pub fn channel_pair() -> (ChannelEndpoint, ChannelEndpoint) {
    channel_pair_with(None, None)
}

/// As [`channel_pair`], with taps on the first-to-second and
/// second-to-first directions. Taps are fixed for the channel's lifetime.
pub fn channel_pair_with(
    a_to_b: Option<Tap>,
    b_to_a: Option<Tap>,
) -> (ChannelEndpoint, ChannelEndpoint) {
    let (tx_ab, rx_ab) = channel();
    let (tx_ba, rx_ba) = channel();
    let a = ChannelEndpoint {
        tx: Some(tx_ab),
        rx: rx_ba,
        buf: Vec::new(),
        tap: a_to_b,
        timeout: DEFAULT_RECV_TIMEOUT,
        closed: false,
    };
    let b = ChannelEndpoint {
        tx: Some(tx_ba),
        rx: rx_ab,
        buf: Vec::new(),
        tap: b_to_a,
        timeout: DEFAULT_RECV_TIMEOUT,
        closed: false,
    };
    (a, b)
}

impl ChannelEndpoint {
    /// Sends raw bytes, bypassing framing and taps. Used to inject garbage.
    pub fn send_raw(&mut self, bytes: Vec<u8>) -> Result<(), TransportError> {
        let tx = self.tx.as_ref().ok_or(TransportError::ChannelClosed)?;
        tx.send(bytes).map_err(|_| TransportError::ChannelClosed)
    }

    pub fn close(&mut self) {
        self.closed = true;
        self.tx = None;
    }
}

impl FrameTransport for ChannelEndpoint {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::ChannelClosed);
        }
        let delivered = match self.tap.as_mut() {
            Some(tap) => tap(frame.clone()),
            None => vec![frame.clone()],
        };
        for f in delivered {
            self.send_raw(f.encode())?;
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, TransportError> {
        if self.closed {
            return Err(TransportError::ChannelClosed);
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            if let Some(frame) = take_frame(&mut self.buf)? {
                return Ok(frame);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(chunk) => self.buf.extend_from_slice(&chunk),
                Err(RecvTimeoutError::Timeout) => return Err(TransportError::Timeout),
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::ChannelClosed),
            }
        }
    }

    fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }
}

/// Tap helpers for building adversaries.
pub mod taps {
    use super::{Frame, Tap};

    /// Drops the next frame, then passes everything.
    pub fn drop_next() -> Tap {
        drop_nth(0)
    }

    /// Drops the `n`th frame (zero-based).
    pub fn drop_nth(n: usize) -> Tap {
        let mut seen = 0usize;
        Box::new(move |f| {
            let i = seen;
            seen += 1;
            if i == n {
                Vec::new()
            } else {
                vec![f]
            }
        })
    }

    pub fn drop_all() -> Tap {
        Box::new(|_| Vec::new())
    }

    /// Delivers the next frame twice.
    pub fn duplicate_next() -> Tap {
        let mut done = false;
        Box::new(move |f| {
            if done {
                vec![f]
            } else {
                done = true;
                vec![f.clone(), f]
            }
        })
    }

    /// Holds the first frame back and delivers it after the second.
    pub fn swap_first_two() -> Tap {
        let mut held: Option<Frame> = None;
        let mut seen = 0usize;
        Box::new(move |f| {
            seen += 1;
            match seen {
                1 => {
                    held = Some(f);
                    Vec::new()
                }
                2 => vec![f, held.take().expect("held frame")],
                _ => vec![f],
            }
        })
    }

    /// Applies `edit` to the `n`th frame (zero-based).
    pub fn mutate_nth(n: usize, mut edit: impl FnMut(&mut Frame) + Send + 'static) -> Tap {
        let mut seen = 0usize;
        Box::new(move |mut f| {
            if seen == n {
                edit(&mut f);
            }
            seen += 1;
            vec![f]
        })
    }
}
