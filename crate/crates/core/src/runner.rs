// Licensed under the Apache-2.0 license

//! Drives one session over a frame transport until it settles.

use std::sync::Mutex;

use rand_core::CryptoRngCore;

use crate::device::Device;
use crate::protocol::wire::error_frame;
use crate::protocol::{AbortReason, Message, ProtocolError, Role, SessionState};
use crate::transport::{FrameTransport, FrameType, TransportError};

#[derive(Debug, Clone)]
pub enum Outcome {
    Established {
        peer_id: String,
        key_fingerprint: String,
    },
    /// This side aborted and told the peer why.
    Aborted(AbortReason),
    /// The peer sent an error frame. The code is reported as received.
    PeerAborted(u8),
    Timeout,
    Transport(String),
    /// A local refusal before any protocol state was created.
    Local(ProtocolError),
}

impl Outcome {
    pub fn is_established(&self) -> bool {
        matches!(self, Outcome::Established { .. })
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Established {
                peer_id,
                key_fingerprint,
            } => write!(
                f,
                "Established peer={peer_id} key-fingerprint={key_fingerprint}"
            ),
            Outcome::Aborted(r) => write!(f, "Aborted {r:?}"),
            Outcome::PeerAborted(code) => match AbortReason::from_code(*code) {
                Some(r) => write!(f, "PeerAborted {r:?}"),
                None => write!(f, "PeerAborted code={code:#04x}"),
            },
            Outcome::Timeout => write!(f, "Timeout"),
            Outcome::Transport(e) => write!(f, "TransportFailure {e}"),
            Outcome::Local(e) => write!(f, "LocalFailure {e}"),
        }
    }
}

#[derive(Debug)]
pub struct SessionReport {
    pub outcome: Outcome,
    pub state: SessionState,
}

fn established(st: &SessionState) -> Outcome {
    Outcome::Established {
        peer_id: st.peer_id().unwrap_or_default().to_string(),
        key_fingerprint: st
            .session_key()
            .map(|k| k.fingerprint())
            .unwrap_or_default(),
    }
}

fn transport_outcome(e: TransportError) -> Outcome {
    match e {
        TransportError::Timeout => Outcome::Timeout,
        other => Outcome::Transport(other.to_string()),
    }
}

/// How a session reaches its device. A session holds exclusive access only
/// while it handles one message, so one device can serve several sessions.
pub trait DeviceAccess {
    fn with_device<R>(&mut self, f: impl FnOnce(&mut Device) -> R) -> R;
}

impl DeviceAccess for &mut Device {
    fn with_device<R>(&mut self, f: impl FnOnce(&mut Device) -> R) -> R {
        f(self)
    }
}

impl DeviceAccess for &Mutex<Device> {
    fn with_device<R>(&mut self, f: impl FnOnce(&mut Device) -> R) -> R {
        // A panic mid-session leaves the device consistent: every write is a
        // whole-field assignment, so a poisoned lock is still usable.
        let mut guard = self.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }
}

fn abort_with(t: &mut dyn FrameTransport, reason: AbortReason) -> Outcome {
    // Best effort: the peer may already be gone.
    let _ = t.send(&error_frame(reason));
    Outcome::Aborted(reason)
}

/// Receives and handles frames until the session is established or ends.
/// Duplicated or out-of-phase messages are discarded.
fn pump(
    dev: &mut impl DeviceAccess,
    id: &str,
    st: &mut SessionState,
    t: &mut dyn FrameTransport,
    rng: &mut dyn CryptoRngCore,
) -> Outcome {
    loop {
        let frame = match t.recv() {
            Ok(f) => f,
            Err(e) => return transport_outcome(e),
        };
        if frame.frame_type == FrameType::Error {
            let code = frame.payload.first().copied().unwrap_or(0);
            log::info!("{id}: peer sent error frame {code:#04x}");
            return Outcome::PeerAborted(code);
        }
        let msg = match Message::from_frame(&frame) {
            Ok(Some(m)) => m,
            Ok(None) => continue,
            Err(reason) => {
                // A malformed message can only be one this side was waiting
                // for if the phase matches; anything else is noise.
                if expects(st, frame.frame_type) {
                    return abort_with(t, reason);
                }
                continue;
            }
        };
        match dev.with_device(|d| st.handle(d, &msg, rng)) {
            Ok(reply) => {
                if let Some(reply) = reply {
                    if let Err(e) = t.send(&reply.to_frame()) {
                        return transport_outcome(e);
                    }
                }
                if st.session_key().is_some() {
                    return established(st);
                }
            }
            Err(ProtocolError::UnexpectedMessage { message, .. }) => {
                log::debug!("{id}: discarding out-of-phase {message:?}");
            }
            Err(e) => {
                log::info!("{id}: session aborted: {e}");
                return match e.abort_reason() {
                    Some(r) => abort_with(t, r),
                    None => Outcome::Local(e),
                };
            }
        }
    }
}

fn expects(st: &SessionState, ft: FrameType) -> bool {
    use crate::protocol::Phase;
    matches!(
        (st.role(), st.phase(), ft),
        (Role::Responder, Phase::Start, FrameType::M1)
            | (Role::Initiator, Phase::SentM1, FrameType::M2)
            | (Role::Responder, Phase::SentM2, FrameType::M3)
    )
}

/// M3 is the last message, so the initiator learns of a rejection only from
/// an error frame. Wait until the responder hangs up or the receive timeout
/// passes; an error frame in that window ends the session and wipes the key.
/// Error frames are unauthenticated, so this can only turn success into
/// failure, never the reverse.
fn await_peer_verdict(
    id: &str,
    st: &mut SessionState,
    t: &mut dyn FrameTransport,
    established: Outcome,
) -> Outcome {
    loop {
        match t.recv() {
            Ok(f) if f.frame_type == FrameType::Error => {
                let code = f.payload.first().copied().unwrap_or(0);
                log::info!("{id}: peer rejected the session with {code:#04x}");
                st.close();
                return Outcome::PeerAborted(code);
            }
            Ok(_) => continue,
            Err(_) => return established,
        }
    }
}

/// Runs the initiator side toward `peer_id`.
pub fn run_initiator(
    dev: &mut Device,
    peer_id: &str,
    t: &mut dyn FrameTransport,
    rng: &mut dyn CryptoRngCore,
) -> SessionReport {
    run_initiator_with(dev, peer_id, t, rng)
}

pub fn run_initiator_with(
    mut dev: impl DeviceAccess,
    peer_id: &str,
    t: &mut dyn FrameTransport,
    rng: &mut dyn CryptoRngCore,
) -> SessionReport {
    let id = dev.with_device(|d| d.id().to_string());
    let mut st = SessionState::new(Role::Initiator);
    let m1 = match dev.with_device(|d| st.initiate(d, peer_id, rng)) {
        Ok(m) => m,
        Err(e) => {
            log::info!("{id}: cannot start session: {e}");
            return SessionReport {
                outcome: Outcome::Local(e),
                state: st,
            };
        }
    };
    if let Err(e) = t.send(&Message::M1(m1).to_frame()) {
        return SessionReport {
            outcome: transport_outcome(e),
            state: st,
        };
    }
    let mut outcome = pump(&mut dev, &id, &mut st, t, rng);
    if outcome.is_established() {
        outcome = await_peer_verdict(&id, &mut st, t, outcome);
    }
    log::info!("{id}: initiator outcome: {outcome}");
    SessionReport { outcome, state: st }
}

/// Runs the responder side for one inbound session.
pub fn run_responder(
    dev: &mut Device,
    t: &mut dyn FrameTransport,
    rng: &mut dyn CryptoRngCore,
) -> SessionReport {
    run_responder_with(dev, t, rng)
}

pub fn run_responder_with(
    mut dev: impl DeviceAccess,
    t: &mut dyn FrameTransport,
    rng: &mut dyn CryptoRngCore,
) -> SessionReport {
    let id = dev.with_device(|d| d.id().to_string());
    let mut st = SessionState::new(Role::Responder);
    let outcome = pump(&mut dev, &id, &mut st, t, rng);
    log::info!("{id}: responder outcome: {outcome}");
    SessionReport { outcome, state: st }
}
