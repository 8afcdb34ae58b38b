// Licensed under the Apache-2.0 license

use rand_core::CryptoRngCore;
use serde::Serialize;
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::Zeroizing;

use super::crypto::{
    ae_open, ae_seal, derive_session_key, shared_secret, transcript_hash, Direction, Nonce,
    SessionKey, POINT_LEN,
};
use super::wire::{Message, MessageKind, WireM1, WireM2, WireM3, AR_REQUEST, SEALED_PLAINTEXT_LEN};
use super::{AbortReason, ProtocolError};
use crate::device::Device;
use crate::quote::{
    sign_quote_gated, sign_transcript_gated, verify_quote_any, verify_signature, Quote,
    QuoteVerdict, RejectReason, QUOTE_WIRE_LEN, SIGNATURE_LEN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Start,
    SentM1,
    SentM2,
    Established,
    Aborted(AbortReason),
}

/// One endpoint's view of a protocol run.
///
/// The ephemeral scalar is dropped (and wiped) as soon as the session key
/// has been derived. The responder holds its key back until M3 validates.
pub struct SessionState {
    role: Role,
    phase: Phase,
    my_nonce: Option<Nonce>,
    peer_nonce: Option<Nonce>,
    eph: Option<StaticSecret>,
    my_q: Option<[u8; POINT_LEN]>,
    peer_q: Option<[u8; POINT_LEN]>,
    k: Option<SessionKey>,
    peer_id: Option<String>,
}

/// Serializable view of a session. Secret values are represented only by
/// their presence or by a fingerprint.
#[derive(Debug, Clone, Serialize)]
pub struct SessionSnapshot {
    pub role: Role,
    pub phase: Phase,
    pub peer_id: Option<String>,
    pub my_nonce: Option<String>,
    pub peer_nonce: Option<String>,
    pub my_q: Option<String>,
    pub peer_q: Option<String>,
    pub ephemeral_secret_present: bool,
    pub key_fingerprint: Option<String>,
}

impl std::fmt::Debug for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.snapshot().fmt(f)
    }
}

struct Opened {
    quote_bytes: [u8; QUOTE_WIRE_LEN],
    signature: [u8; SIGNATURE_LEN],
}

fn split_plaintext(pt: &[u8]) -> Result<Opened, AbortReason> {
    if pt.len() != SEALED_PLAINTEXT_LEN {
        return Err(AbortReason::Malformed);
    }
    Ok(Opened {
        quote_bytes: pt[..QUOTE_WIRE_LEN].try_into().expect("quote length"),
        signature: pt[QUOTE_WIRE_LEN..].try_into().expect("signature length"),
    })
}

fn check_quote(
    verify_key: &[u8; 32],
    quote_bytes: &[u8; QUOTE_WIRE_LEN],
    expected: &[crate::crtm::Measurement],
) -> Result<(), AbortReason> {
    let quote = Quote::from_bytes(quote_bytes).map_err(|_| AbortReason::Malformed)?;
    match verify_quote_any(verify_key, &quote, expected) {
        QuoteVerdict::Accept => Ok(()),
        QuoteVerdict::Reject(RejectReason::BadSignature) => Err(AbortReason::BadSignature),
        QuoteVerdict::Reject(RejectReason::MeasurementMismatch) => {
            Err(AbortReason::MeasurementMismatch)
        }
    }
}

/// Measures and signs this device's quote, stages it, then signs the transcript
/// over whatever the agent actually staged.
fn attest_and_seal(
    dev: &mut Device,
    k: &SessionKey,
    direction: Direction,
    n_a: &Nonce,
    n_b: &Nonce,
    q_first: &[u8; POINT_LEN],
    q_second: &[u8; POINT_LEN],
) -> Result<Vec<u8>, ProtocolError> {
    let measurement = dev.crtm_measure()?;
    let quote = sign_quote_gated(dev, &measurement)?;
    let staged = dev.agent_stage_quote(&quote.to_bytes())?;
    let th = transcript_hash(&staged, n_a, n_b, q_first, q_second);
    let sig = sign_transcript_gated(dev, &th)?;
    let mut pt = Zeroizing::new(Vec::with_capacity(SEALED_PLAINTEXT_LEN));
    pt.extend_from_slice(&staged);
    pt.extend_from_slice(&sig);
    Ok(ae_seal(k, direction, n_a, n_b, &pt))
}

fn fresh_ephemeral(rng: &mut dyn CryptoRngCore) -> (StaticSecret, [u8; POINT_LEN]) {
    let mut bytes = Zeroizing::new([0u8; 32]);
    rng.fill_bytes(bytes.as_mut());
    let secret = StaticSecret::from(*bytes);
    let public = PublicKey::from(&secret).to_bytes();
    (secret, public)
}

impl SessionState {
    pub fn new(role: Role) -> Self {
        SessionState {
            role,
            phase: Phase::Start,
            my_nonce: None,
            peer_nonce: None,
            eph: None,
            my_q: None,
            peer_q: None,
            k: None,
            peer_id: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn peer_id(&self) -> Option<&str> {
        self.peer_id.as_deref()
    }

    pub fn my_nonce(&self) -> Option<&Nonce> {
        self.my_nonce.as_ref()
    }

    pub fn peer_nonce(&self) -> Option<&Nonce> {
        self.peer_nonce.as_ref()
    }

    pub fn has_ephemeral_secret(&self) -> bool {
        self.eph.is_some()
    }

    /// The session key, available only once the run is established.
    pub fn session_key(&self) -> Option<&SessionKey> {
        match self.phase {
            Phase::Established => self.k.as_ref(),
            _ => None,
        }
    }

    /// Wipes the ephemeral secret and session key. Used when the session is
    /// torn down after this side finished, e.g. because the peer rejected it.
    pub fn close(&mut self) {
        self.eph = None;
        self.k = None;
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            role: self.role,
            phase: self.phase,
            peer_id: self.peer_id.clone(),
            my_nonce: self.my_nonce.map(hex::encode),
            peer_nonce: self.peer_nonce.map(hex::encode),
            my_q: self.my_q.map(hex::encode),
            peer_q: self.peer_q.map(hex::encode),
            ephemeral_secret_present: self.eph.is_some(),
            key_fingerprint: self.k.as_ref().map(SessionKey::fingerprint),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.snapshot()).expect("snapshot serializes")
    }

    fn unexpected(&self, message: MessageKind) -> ProtocolError {
        ProtocolError::UnexpectedMessage {
            phase: self.phase,
            role: self.role,
            message,
        }
    }

    fn abort(&mut self, reason: AbortReason) -> ProtocolError {
        self.phase = Phase::Aborted(reason);
        self.eph = None;
        self.k = None;
        ProtocolError::Abort(reason)
    }

    /// Maps a failure inside a valid transition to an abort.
    fn fail(&mut self, err: ProtocolError) -> ProtocolError {
        match err {
            ProtocolError::Abort(r) => self.abort(r),
            other => {
                self.abort(AbortReason::Internal);
                other
            }
        }
    }

    /// Feeds an inbound message. Messages that do not fit the current role
    /// and phase are rejected without changing state.
    pub fn handle(
        &mut self,
        dev: &mut Device,
        msg: &Message,
        rng: &mut dyn CryptoRngCore,
    ) -> Result<Option<Message>, ProtocolError> {
        match msg {
            Message::M1(m1) => self.respond_m1(dev, m1, rng).map(|m| Some(Message::M2(m))),
            Message::M2(m2) => self.process_m2(dev, m2).map(|m| Some(Message::M3(m))),
            Message::M3(m3) => self.process_m3(dev, m3).map(|()| None),
        }
    }

    /// Initiator: sample `n_A` and an ephemeral key pair and build M1.
    pub fn initiate(
        &mut self,
        dev: &mut Device,
        peer_id: &str,
        rng: &mut dyn CryptoRngCore,
    ) -> Result<WireM1, ProtocolError> {
        if self.role != Role::Initiator || self.phase != Phase::Start {
            return Err(ProtocolError::InvalidPhase {
                phase: self.phase,
                role: self.role,
            });
        }
        if dev.trust_store().get(peer_id).is_none() {
            return Err(ProtocolError::UnknownPeer(peer_id.to_string()));
        }
        let n_a = dev.issue_nonce(rng)?;
        let (secret, q_a) = fresh_ephemeral(rng);
        self.my_nonce = Some(n_a);
        self.my_q = Some(q_a);
        self.eph = Some(secret);
        self.peer_id = Some(peer_id.to_string());
        self.phase = Phase::SentM1;
        log::debug!("{}: sent M1 to {peer_id}", dev.id());
        Ok(WireM1 {
            n_a,
            q_a,
            ar: AR_REQUEST,
        })
    }

    /// Responder: attest, derive K and answer with M2.
    pub fn respond_m1(
        &mut self,
        dev: &mut Device,
        m1: &WireM1,
        rng: &mut dyn CryptoRngCore,
    ) -> Result<WireM2, ProtocolError> {
        if self.role != Role::Responder || self.phase != Phase::Start {
            return Err(self.unexpected(MessageKind::M1));
        }
        self.respond_m1_inner(dev, m1, rng)
            .map_err(|e| self.fail(e))
    }

    fn respond_m1_inner(
        &mut self,
        dev: &mut Device,
        m1: &WireM1,
        rng: &mut dyn CryptoRngCore,
    ) -> Result<WireM2, ProtocolError> {
        if m1.ar != AR_REQUEST {
            return Err(AbortReason::Malformed.into());
        }
        self.peer_nonce = Some(m1.n_a);
        self.peer_q = Some(m1.q_a);
        let n_b = dev.issue_nonce(rng)?;
        let (secret, q_b) = fresh_ephemeral(rng);
        self.my_nonce = Some(n_b);
        self.my_q = Some(q_b);

        let ss = shared_secret(&secret, &m1.q_a)?;
        drop(secret);
        let k = derive_session_key(&ss, &m1.n_a, &n_b)?;
        let ct = attest_and_seal(dev, &k, Direction::M2, &m1.n_a, &n_b, &q_b, &m1.q_a)?;
        self.k = Some(k);
        self.phase = Phase::SentM2;
        log::debug!("{}: sent M2", dev.id());
        Ok(WireM2 {
            n_b,
            q_b,
            ar: AR_REQUEST,
            ct,
        })
    }

    /// Initiator: validate B's attestation, then attest in return with M3.
    pub fn process_m2(&mut self, dev: &mut Device, m2: &WireM2) -> Result<WireM3, ProtocolError> {
        if self.role != Role::Initiator || self.phase != Phase::SentM1 {
            return Err(self.unexpected(MessageKind::M2));
        }
        self.process_m2_inner(dev, m2).map_err(|e| self.fail(e))
    }

    fn process_m2_inner(&mut self, dev: &mut Device, m2: &WireM2) -> Result<WireM3, ProtocolError> {
        if m2.ar != AR_REQUEST {
            return Err(AbortReason::Malformed.into());
        }
        let n_a = self.my_nonce.expect("set in initiate");
        let q_a = self.my_q.expect("set in initiate");
        let peer_id = self.peer_id.clone().expect("set in initiate");
        self.peer_nonce = Some(m2.n_b);
        self.peer_q = Some(m2.q_b);

        let secret = self.eph.take().expect("set in initiate");
        let ss = shared_secret(&secret, &m2.q_b)?;
        drop(secret);
        let k = derive_session_key(&ss, &n_a, &m2.n_b)?;

        let pt = ae_open(&k, Direction::M2, &n_a, &m2.n_b, &m2.ct)?;
        let opened = split_plaintext(&pt)?;
        let peer = dev
            .trust_store()
            .get(&peer_id)
            .ok_or_else(|| ProtocolError::UnknownPeer(peer_id.clone()))?
            .clone();
        let th = transcript_hash(&opened.quote_bytes, &n_a, &m2.n_b, &m2.q_b, &q_a);
        if !verify_signature(&peer.verify_key, &th, &opened.signature) {
            return Err(AbortReason::BadSignature.into());
        }
        check_quote(&peer.verify_key, &opened.quote_bytes, &peer.expected)?;

        let ct = attest_and_seal(dev, &k, Direction::M3, &n_a, &m2.n_b, &q_a, &m2.q_b)?;
        self.k = Some(k);
        self.phase = Phase::Established;
        log::debug!("{}: accepted {peer_id}, sent M3", dev.id());
        Ok(WireM3 { ct })
    }

    /// Responder: validate A's attestation. The session key becomes
    /// available only after this succeeds.
    ///
    /// M1 carries no identity, so the initiator is identified as the
    /// trust-store peer whose key verifies the transcript signature.
    pub fn process_m3(&mut self, dev: &mut Device, m3: &WireM3) -> Result<(), ProtocolError> {
        if self.role != Role::Responder || self.phase != Phase::SentM2 {
            return Err(self.unexpected(MessageKind::M3));
        }
        self.process_m3_inner(dev, m3).map_err(|e| self.fail(e))
    }

    fn process_m3_inner(&mut self, dev: &mut Device, m3: &WireM3) -> Result<(), ProtocolError> {
        let n_a = self.peer_nonce.expect("set in respond_m1");
        let n_b = self.my_nonce.expect("set in respond_m1");
        let q_a = self.peer_q.expect("set in respond_m1");
        let q_b = self.my_q.expect("set in respond_m1");
        let k = self.k.as_ref().expect("set in respond_m1");

        let pt = ae_open(k, Direction::M3, &n_a, &n_b, &m3.ct)?;
        let opened = split_plaintext(&pt)?;
        let th = transcript_hash(&opened.quote_bytes, &n_a, &n_b, &q_a, &q_b);
        let (peer_id, peer) = dev
            .trust_store()
            .peers()
            .find(|(_, rec)| verify_signature(&rec.verify_key, &th, &opened.signature))
            .map(|(id, rec)| (id.to_string(), rec.clone()))
            .ok_or(AbortReason::BadSignature)?;
        check_quote(&peer.verify_key, &opened.quote_bytes, &peer.expected)?;

        self.peer_id = Some(peer_id);
        self.phase = Phase::Established;
        log::debug!(
            "{}: accepted {}",
            dev.id(),
            self.peer_id.as_deref().unwrap_or("?")
        );
        Ok(())
    }
}

/// Starts an initiator session toward `peer_id`.
pub fn initiate(
    dev: &mut Device,
    peer_id: &str,
    rng: &mut dyn CryptoRngCore,
) -> Result<(SessionState, WireM1), ProtocolError> {
    let mut st = SessionState::new(Role::Initiator);
    let m1 = st.initiate(dev, peer_id, rng)?;
    Ok((st, m1))
}

/// Answers an M1 with a fresh responder session. On failure the returned
/// session, when present, is in the aborted phase.
pub fn respond_m1(
    dev: &mut Device,
    m1: &WireM1,
    rng: &mut dyn CryptoRngCore,
) -> (SessionState, Result<WireM2, ProtocolError>) {
    let mut st = SessionState::new(Role::Responder);
    let res = st.respond_m1(dev, m1, rng);
    (st, res)
}
