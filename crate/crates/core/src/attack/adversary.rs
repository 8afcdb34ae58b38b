// Licensed under the Apache-2.0 license

//! Attack bodies. Everything here goes through untrusted device views,
//! resident hooks, transport taps or public protocol arithmetic.

use std::sync::{Arc, Mutex};

use x25519_dalek::{PublicKey, StaticSecret};

use super::Verdict;
use crate::device::AgentEvent;
use crate::pmp::{AddressMatching, PmpConfig};
use crate::protocol::crypto::{ae_open, ae_seal, derive_session_key, shared_secret, Direction};
use crate::protocol::wire::{WireM1, WireM2, WireM3, AR_REQUEST};
use crate::protocol::Message;
use crate::runner::Outcome;
use crate::transport::channel::taps;
use crate::transport::{Frame, FrameTransport, FrameType, Tap};
use crate::world::World;

fn recorder(log: Arc<Mutex<Vec<Frame>>>) -> Tap {
    Box::new(move |f| {
        log.lock().expect("frame log").push(f.clone());
        vec![f]
    })
}

fn first_of(log: &Arc<Mutex<Vec<Frame>>>, t: FrameType) -> Option<Frame> {
    log.lock()
        .expect("frame log")
        .iter()
        .find(|f| f.frame_type == t)
        .cloned()
}

fn ephemeral(rng: &mut rand_chacha::ChaCha20Rng) -> (StaticSecret, [u8; 32]) {
    let secret = StaticSecret::random_from_rng(rng);
    let public = PublicKey::from(&secret).to_bytes();
    (secret, public)
}

fn unexpected(what: &str) -> Verdict {
    Verdict::Unexpected(what.to_string())
}

fn rw_napot() -> PmpConfig {
    PmpConfig {
        read: true,
        write: true,
        execute: true,
        addr_mode: AddressMatching::Napot,
        lock: false,
    }
}

fn key_region_addr_reg(base: u32, size: u32) -> u32 {
    crate::pmp::napot_encode(base, u64::from(size)).unwrap_or(0)
}

pub(super) fn pmp_lock_rewrite(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let (base, size) = w.beta.key_region();
    let addr_reg = key_region_addr_reg(base, size);
    let mut u = w.beta.untrusted();
    match u.pmp_configure(0, rw_napot(), addr_reg) {
        Ok(()) => match u.read(base, 32) {
            Ok(_) => Verdict::EstablishedDespiteAttack,
            Err(e) => Verdict::from(&e),
        },
        Err(e) => Verdict::from(&e),
    }
}

pub(super) fn non_response(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let (a, _) = w.run(None, Some(taps::drop_all()));
    Verdict::from(&a.outcome)
}

pub(super) fn quote_overwrite(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    w.beta.install_resident(Box::new(|ev, u| {
        let AgentEvent::QuoteStaged { addr, len } = ev;
        let _ = u.write(addr, &vec![0u8; len]);
    }));
    let (a, _) = w.run(None, None);
    Verdict::from(&a.outcome)
}

pub(super) fn key_read_attempt(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let (base, size) = w.beta.key_region();
    let u = w.beta.untrusted();
    for addr in [base, base + 1, base + size / 2, base + size - 1] {
        if let Err(e) = u.read(addr, 1) {
            return Verdict::from(&e);
        }
    }
    Verdict::EstablishedDespiteAttack
}

pub(super) fn m2_verbatim_replay(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let log = Arc::new(Mutex::new(Vec::new()));
    let (first, _) = w.run(None, Some(recorder(log.clone())));
    if !first.outcome.is_established() {
        return unexpected("honest session failed");
    }
    let Some(old_m2) = first_of(&log, FrameType::M2) else {
        return unexpected("no M2 recorded");
    };
    let replace = Box::new(move |f: Frame| {
        if f.frame_type == FrameType::M2 {
            vec![old_m2.clone()]
        } else {
            vec![f]
        }
    });
    let (a, _) = w.run(None, Some(replace));
    Verdict::from(&a.outcome)
}

/// Takes an old M2, keeps its responder nonce and sealed quote, and
/// re-seals it toward the initiator under a key the attacker controls.
pub(super) fn m2_replay(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let log = Arc::new(Mutex::new(Vec::new()));
    let (first, _) = w.run(Some(recorder(log.clone())), Some(recorder(log.clone())));
    // As in the splice scenario, the old session key is assumed leaked.
    let Some(old_key) = first.state.session_key().cloned() else {
        return unexpected("honest session failed");
    };
    let (Some(m1), Some(m2)) = (first_of(&log, FrameType::M1), first_of(&log, FrameType::M2))
    else {
        return unexpected("transcript incomplete");
    };
    let (Ok(m1), Ok(old)) = (WireM1::decode(&m1.payload), WireM2::decode(&m2.payload)) else {
        return unexpected("transcript undecodable");
    };
    let Ok(plain) = ae_open(&old_key, Direction::M2, &m1.n_a, &old.n_b, &old.ct) else {
        return unexpected("leaked key does not open M2");
    };

    let mut rng = w.side_rng("replay");
    let (d_e, q_e) = ephemeral(&mut rng);
    let fresh_n_a = Arc::new(Mutex::new(None));
    let seen = fresh_n_a.clone();
    let to_b: Tap = Box::new(move |f| {
        if let (FrameType::M1, Ok(m1)) = (f.frame_type, WireM1::decode(&f.payload)) {
            *seen.lock().expect("nonce slot") = Some((m1.n_a, m1.q_a));
        }
        vec![f]
    });
    let to_a: Tap = Box::new(move |f| {
        if f.frame_type != FrameType::M2 {
            return vec![f];
        }
        let Some((n_a, q_a)) = *fresh_n_a.lock().expect("nonce slot") else {
            return vec![f];
        };
        let Ok(ss) = shared_secret(&d_e, &q_a) else {
            return vec![f];
        };
        let Ok(k) = derive_session_key(&ss, &n_a, &old.n_b) else {
            return vec![f];
        };
        let forged = WireM2 {
            n_b: old.n_b,
            q_b: q_e,
            ar: AR_REQUEST,
            ct: ae_seal(&k, Direction::M2, &n_a, &old.n_b, &plain),
        };
        vec![Message::M2(forged).to_frame()]
    });
    let (a, _) = w.run(Some(to_b), Some(to_a));
    Verdict::from(&a.outcome)
}

pub(super) fn m3_cross_session_splice(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let log = Arc::new(Mutex::new(Vec::new()));
    let (first, _) = w.run(Some(recorder(log.clone())), Some(recorder(log.clone())));
    // Model a compromised past session: its key is handed to the attacker.
    let Some(old_key) = first.state.session_key().cloned() else {
        return unexpected("honest session failed");
    };
    let frames = (
        first_of(&log, FrameType::M1),
        first_of(&log, FrameType::M2),
        first_of(&log, FrameType::M3),
    );
    let (Some(m1), Some(m2), Some(m3)) = frames else {
        return unexpected("transcript incomplete");
    };
    let (Ok(m1), Ok(m2), Ok(m3)) = (
        WireM1::decode(&m1.payload),
        WireM2::decode(&m2.payload),
        WireM3::decode(&m3.payload),
    ) else {
        return unexpected("transcript undecodable");
    };
    let Ok(old_plain) = ae_open(&old_key, Direction::M3, &m1.n_a, &m2.n_b, &m3.ct) else {
        return unexpected("leaked key does not open M3");
    };

    let mut rng = w.side_rng("splice");
    let report = w.beta_responds_to(|ch| {
        let mut n_e = [0u8; 32];
        rand_core::RngCore::fill_bytes(&mut rng, &mut n_e);
        let (d_e, q_e) = ephemeral(&mut rng);
        let m1 = Message::M1(WireM1 {
            n_a: n_e,
            q_a: q_e,
            ar: AR_REQUEST,
        });
        if ch.send(&m1.to_frame()).is_err() {
            return;
        }
        let Ok(Ok(Some(Message::M2(m2)))) = ch.recv().map(|f| Message::from_frame(&f)) else {
            return;
        };
        let Ok(ss) = shared_secret(&d_e, &m2.q_b) else {
            return;
        };
        let Ok(k) = derive_session_key(&ss, &n_e, &m2.n_b) else {
            return;
        };
        let ct = ae_seal(&k, Direction::M3, &n_e, &m2.n_b, &old_plain);
        let _ = ch.send(&Message::M3(WireM3 { ct }).to_frame());
        let _ = ch.recv();
    });
    Verdict::from(&report.outcome)
}

pub(super) fn ciphertext_bitflip(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let flip = taps::mutate_nth(0, |f| {
        let i = f.payload.len() - 20;
        f.payload[i] ^= 0x01;
    });
    let (a, _) = w.run(None, Some(flip));
    Verdict::from(&a.outcome)
}

#[derive(Default)]
struct SwapState {
    initiator: Option<([u8; 32], [u8; 32])>,
}

pub(super) fn q_value_swap(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let mut rng = w.side_rng("mitm");
    let (d_toward_b, q_toward_b) = ephemeral(&mut rng);
    let (d_toward_a, q_toward_a) = ephemeral(&mut rng);
    let shared = Arc::new(Mutex::new(SwapState::default()));
    let opened = Arc::new(Mutex::new(false));

    let st = shared.clone();
    let to_b: Tap = Box::new(move |f| {
        let Ok(mut m1) = WireM1::decode(&f.payload) else {
            return vec![f];
        };
        if f.frame_type != FrameType::M1 {
            return vec![f];
        }
        st.lock().expect("mitm state").initiator = Some((m1.n_a, m1.q_a));
        m1.q_a = q_toward_b;
        vec![Message::M1(m1).to_frame()]
    });

    let st = shared.clone();
    let seen = opened.clone();
    let to_a: Tap = Box::new(move |f| {
        if f.frame_type != FrameType::M2 {
            return vec![f];
        }
        let Some((n_a, q_a)) = st.lock().expect("mitm state").initiator else {
            return vec![f];
        };
        let Ok(mut m2) = WireM2::decode(&f.payload) else {
            return vec![f];
        };
        let reseal = || -> Option<Vec<u8>> {
            let k_b =
                derive_session_key(&*shared_secret(&d_toward_b, &m2.q_b).ok()?, &n_a, &m2.n_b)
                    .ok()?;
            let plain = ae_open(&k_b, Direction::M2, &n_a, &m2.n_b, &m2.ct).ok()?;
            let k_a =
                derive_session_key(&*shared_secret(&d_toward_a, &q_a).ok()?, &n_a, &m2.n_b).ok()?;
            Some(ae_seal(&k_a, Direction::M2, &n_a, &m2.n_b, &plain))
        };
        let Some(ct) = reseal() else {
            return vec![f];
        };
        *seen.lock().expect("flag") = true;
        m2.q_b = q_toward_a;
        m2.ct = ct;
        vec![Message::M2(m2).to_frame()]
    });

    let (a, _) = w.run(Some(to_b), Some(to_a));
    if !*opened.lock().expect("flag") {
        return unexpected("attacker could not open M2");
    }
    Verdict::from(&a.outcome)
}

pub(super) fn nonce_reuse_detection(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let (first, _) = w.run(None, None);
    if !first.outcome.is_established() {
        return unexpected("honest session failed");
    }
    w.rewind_alpha_rng();
    let (a, _) = w.run(None, None);
    Verdict::from(&a.outcome)
}

pub(super) fn message_drop(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    // Frame 0 is M1, frame 1 is M3.
    let (a, b) = w.run(Some(taps::drop_nth(1)), None);
    if b.state.session_key().is_some() {
        return Verdict::EstablishedDespiteAttack;
    }
    match a.outcome {
        Outcome::Established { .. } => Verdict::from(&b.outcome),
        other => unexpected(&format!("initiator did not finish: {other}")),
    }
}

pub(super) fn firmware_tamper(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let addr = w.beta.layout().flash_base + 0x123;
    let mut u = w.beta.untrusted();
    let Ok(byte) = u.read(addr, 1) else {
        return unexpected("flash unreadable");
    };
    if let Err(e) = u.write(addr, &[byte[0] ^ 0x01]) {
        return Verdict::from(&e);
    }
    let (a, _) = w.run(None, None);
    Verdict::from(&a.outcome)
}

pub(super) fn crtm_rom_overwrite(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let rom = w.beta.layout().rom_base;
    let mut u = w.beta.untrusted();
    match u.write(rom, &[0x13, 0, 0, 0]) {
        Ok(()) => Verdict::EstablishedDespiteAttack,
        Err(e) => Verdict::from(&e),
    }
}

pub(super) fn pmp_shadow_entry(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let (base, size) = w.beta.key_region();
    let mut u = w.beta.untrusted();
    if let Err(e) = u.pmp_configure(1, rw_napot(), key_region_addr_reg(base, size)) {
        return Verdict::from(&e);
    }
    match u.read(base, 32) {
        Ok(_) => Verdict::EstablishedDespiteAttack,
        Err(e) => Verdict::from(&e),
    }
}

pub(super) fn low_order_point(seed: u64) -> Verdict {
    let mut w = World::new(seed);
    let (_, b) = w.run(
        Some(taps::mutate_nth(0, |f| {
            // The identity point: every scalar maps it to zero.
            f.payload[32..64].fill(0);
            f.payload[32] = 1;
        })),
        None,
    );
    Verdict::from(&b.outcome)
}
