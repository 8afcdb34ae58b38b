// Licensed under the Apache-2.0 license

//! Scripted adversaries against an honest device pair, each with the
//! verdict that counts as detection.
//!
//! The scenario bodies live in [`adversary`] and are restricted to what an
//! attacker controls: untrusted machine-mode code on a device, the network
//! taps, and public protocol arithmetic.

mod adversary;

use std::fmt;

use crate::device::DeviceError;
use crate::pmp::PmpError;
use crate::protocol::{AbortReason, ProtocolError};
use crate::runner::Outcome;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    AbortedWithReason(AbortReason),
    AccessFault,
    LockedEntry,
    Timeout,
    /// The honest device refused to reuse a nonce from a rewound source.
    NonceReuseRefused,
    /// The attack went unnoticed. Never an expected verdict.
    EstablishedDespiteAttack,
    Unexpected(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::AbortedWithReason(r) => write!(f, "AbortedWithReason({r:?})"),
            Verdict::Unexpected(s) => write!(f, "Unexpected({s})"),
            other => write!(f, "{other:?}"),
        }
    }
}

impl From<&Outcome> for Verdict {
    fn from(o: &Outcome) -> Self {
        match o {
            Outcome::Established { .. } => Verdict::EstablishedDespiteAttack,
            Outcome::Aborted(r) => Verdict::AbortedWithReason(*r),
            Outcome::Timeout => Verdict::Timeout,
            Outcome::Local(ProtocolError::Device(e)) => Verdict::from(e),
            other => Verdict::Unexpected(other.to_string()),
        }
    }
}

impl From<&DeviceError> for Verdict {
    fn from(e: &DeviceError) -> Self {
        match e {
            DeviceError::AccessFault(_) => Verdict::AccessFault,
            DeviceError::Pmp(PmpError::LockedEntry { .. }) => Verdict::LockedEntry,
            DeviceError::NonceReuse => Verdict::NonceReuseRefused,
            other => Verdict::Unexpected(other.to_string()),
        }
    }
}

/// Where in the system the attack is aimed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Device,
    Network,
    Entropy,
}

pub struct Scenario {
    pub name: &'static str,
    pub summary: &'static str,
    pub surface: Surface,
    pub expected: Verdict,
    action: fn(u64) -> Verdict,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("expected", &self.expected)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub name: &'static str,
    pub expected: Verdict,
    pub observed: Verdict,
}

impl ScenarioResult {
    pub fn passed(&self) -> bool {
        self.expected == self.observed
    }
}

pub const DEFAULT_SEED: u64 = 0x5EED_0001;

/// The built-in scenarios.
pub fn catalog() -> Vec<Scenario> {
    use AbortReason::*;
    use Surface::*;
    let s = |name, summary, surface, expected, action| Scenario {
        name,
        summary,
        surface,
        expected,
        action,
    };
    vec![
        s(
            "pmp-lock-rewrite",
            "untrusted code rewrites the locked key-region entry",
            Device,
            Verdict::LockedEntry,
            adversary::pmp_lock_rewrite,
        ),
        s(
            "non-response",
            "responder never answers (flash removed); verifier times out",
            Network,
            Verdict::Timeout,
            adversary::non_response,
        ),
        s(
            "quote-overwrite",
            "resident code zeroes the staged quote before it is sent",
            Device,
            Verdict::AbortedWithReason(Malformed),
            adversary::quote_overwrite,
        ),
        s(
            "key-read-attempt",
            "untrusted load from the signing-key region",
            Device,
            Verdict::AccessFault,
            adversary::key_read_attempt,
        ),
        s(
            "m2-replay",
            "M2 from an earlier session, re-sealed so its tag verifies",
            Network,
            Verdict::AbortedWithReason(BadSignature),
            adversary::m2_replay,
        ),
        s(
            "m2-verbatim-replay",
            "M2 from an earlier session replayed byte for byte",
            Network,
            Verdict::AbortedWithReason(BadTag),
            adversary::m2_verbatim_replay,
        ),
        s(
            "m3-cross-session-splice",
            "old M3 re-sealed under a fresh key with a leaked old session key",
            Network,
            Verdict::AbortedWithReason(BadSignature),
            adversary::m3_cross_session_splice,
        ),
        s(
            "ciphertext-bitflip",
            "one bit of the M2 ciphertext flipped in transit",
            Network,
            Verdict::AbortedWithReason(BadTag),
            adversary::ciphertext_bitflip,
        ),
        s(
            "q-value-swap",
            "man in the middle substitutes its own ephemeral points",
            Network,
            Verdict::AbortedWithReason(BadSignature),
            adversary::q_value_swap,
        ),
        s(
            "nonce-reuse-detection",
            "initiator entropy rewound so the same nonce comes up again",
            Entropy,
            Verdict::NonceReuseRefused,
            adversary::nonce_reuse_detection,
        ),
        s(
            "message-drop",
            "M3 dropped; responder never releases a key",
            Network,
            Verdict::Timeout,
            adversary::message_drop,
        ),
        s(
            "firmware-tamper",
            "one byte of attested flash flipped before the run",
            Device,
            Verdict::AbortedWithReason(MeasurementMismatch),
            adversary::firmware_tamper,
        ),
        s(
            "crtm-rom-overwrite",
            "untrusted store into the ROM holding the measurement routine",
            Device,
            Verdict::AccessFault,
            adversary::crtm_rom_overwrite,
        ),
        s(
            "pmp-shadow-entry",
            "unlocked higher-index entry granting reads over the key region",
            Device,
            Verdict::AccessFault,
            adversary::pmp_shadow_entry,
        ),
        s(
            "low-order-point",
            "M1 point replaced with a low-order point",
            Network,
            Verdict::AbortedWithReason(WeakPoint),
            adversary::low_order_point,
        ),
    ]
}

pub fn find(name: &str) -> Option<Scenario> {
    catalog().into_iter().find(|s| s.name == name)
}

/// Runs one scenario in a freshly built world.
pub fn run_scenario(s: &Scenario, seed: u64) -> ScenarioResult {
    log::info!("scenario {}: start", s.name);
    let observed = (s.action)(seed);
    log::info!("scenario {}: observed {observed}", s.name);
    ScenarioResult {
        name: s.name,
        expected: s.expected.clone(),
        observed,
    }
}

pub fn run_catalog(seed: u64) -> Vec<ScenarioResult> {
    catalog().iter().map(|s| run_scenario(s, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Names the adversary code must not mention. Each one is either trusted
    /// ROM code or a privileged way into device memory.
    const TRUSTED_ONLY: &[&str] = &[
        "with_gated_key",
        "slice_mut",
        "rom_boot",
        "sign_quote_gated",
        "sign_transcript_gated",
        "crtm_measure",
        "reset_with",
        "SkipPmpLock",
        "secret_seed",
        "QuoteSigningKey",
        "SigningKey",
        "ExecutionContext::RomTrusted",
        "mem_write",
        "mem_read",
        "alpha.pmp_configure",
        "beta.pmp_configure",
        "agent_stage_quote",
        "memory.",
        "crate::device::Device",
        "crate::crtm",
        "crate::quote",
        "crate::provisioning",
    ];

    #[test]
    fn adversary_is_confined() {
        let src = include_str!("adversary.rs");
        for name in TRUSTED_ONLY {
            let hits: Vec<_> = src.lines().filter(|l| l.contains(name)).collect();
            assert!(hits.is_empty(), "adversary mentions {name}: {hits:?}");
        }
    }

    #[test]
    fn catalog_shape() {
        let c = catalog();
        assert!(c.len() >= 10);
        let mut names: Vec<_> = c.iter().map(|s| s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), c.len());
        for required in [
            "pmp-lock-rewrite",
            "non-response",
            "quote-overwrite",
            "key-read-attempt",
            "m2-replay",
            "m3-cross-session-splice",
            "ciphertext-bitflip",
            "q-value-swap",
            "nonce-reuse-detection",
            "message-drop",
            "firmware-tamper",
        ] {
            assert!(names.contains(&required), "{required}");
        }
        assert!(c
            .iter()
            .all(|s| s.expected != Verdict::EstablishedDespiteAttack));
    }
}
