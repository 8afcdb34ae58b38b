// Licensed under the Apache-2.0 license

//! Quote signing behind the execute-only gate, and quote verification.

use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::crtm::{measurement_equals, Measurement, MEASUREMENT_WIRE_LEN};
use crate::device::Device;

pub const SIGNATURE_LEN: usize = 64;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SEED_LEN: usize = 32;
/// Measurement (52 bytes) followed by the Ed25519 signature.
pub const QUOTE_WIRE_LEN: usize = MEASUREMENT_WIRE_LEN + SIGNATURE_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuoteError {
    #[error("signing-key region is not locked execute-only; refusing to sign")]
    GateViolation,
    #[error("device has not completed its ROM boot")]
    NotBooted,
    #[error("malformed quote")]
    Malformed,
}

/// Ed25519 quote-signing key. The seed is wiped on drop and never printed.
#[derive(Clone)]
pub struct QuoteSigningKey {
    seed: Zeroizing<[u8; SEED_LEN]>,
    public: [u8; PUBLIC_KEY_LEN],
}

impl QuoteSigningKey {
    pub fn from_seed(seed: [u8; SEED_LEN]) -> Self {
        let sk = SigningKey::from_bytes(&seed);
        let public = sk.verifying_key().to_bytes();
        QuoteSigningKey {
            seed: Zeroizing::new(seed),
            public,
        }
    }

    pub fn public(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.public
    }

    /// The raw seed, for writing a device profile or burning ROM.
    pub fn secret_seed(&self) -> &[u8; SEED_LEN] {
        &self.seed
    }
}

impl fmt::Debug for QuoteSigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuoteSigningKey")
            .field("public", &hex::encode(self.public))
            .field("seed", &"<redacted>")
            .finish()
    }
}

/// A measurement and the device's signature over its canonical bytes.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Quote {
    pub measurement: Measurement,
    pub signature: [u8; SIGNATURE_LEN],
}

impl Quote {
    pub fn to_bytes(&self) -> [u8; QUOTE_WIRE_LEN] {
        let mut out = [0u8; QUOTE_WIRE_LEN];
        out[..MEASUREMENT_WIRE_LEN].copy_from_slice(&self.measurement.canonical_bytes());
        out[MEASUREMENT_WIRE_LEN..].copy_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Quote, QuoteError> {
        if bytes.len() != QUOTE_WIRE_LEN {
            return Err(QuoteError::Malformed);
        }
        let measurement = Measurement::from_canonical_bytes(&bytes[..MEASUREMENT_WIRE_LEN])
            .ok_or(QuoteError::Malformed)?;
        let signature = bytes[MEASUREMENT_WIRE_LEN..]
            .try_into()
            .map_err(|_| QuoteError::Malformed)?;
        Ok(Quote {
            measurement,
            signature,
        })
    }
}

impl fmt::Debug for Quote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Quote")
            .field("measurement", &self.measurement)
            .field("signature", &hex::encode(self.signature))
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    BadSignature,
    MeasurementMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuoteVerdict {
    Accept,
    Reject(RejectReason),
}

/// Signs `measurement` with the device's ROM-resident key.
///
/// The gate refuses to run unless every byte of the key is covered by a
/// locked entry that permits execution but denies reads from untrusted
/// code. Key material only exists in gate-local buffers, which are wiped
/// before returning.
pub fn sign_quote_gated(dev: &Device, measurement: &Measurement) -> Result<Quote, QuoteError> {
    let signature = dev.with_gated_key(|sk| sk.sign(&measurement.canonical_bytes()))?;
    Ok(Quote {
        measurement: *measurement,
        signature: signature.to_bytes(),
    })
}

/// Signs a 32-byte protocol transcript digest through the same gate.
/// Quote and transcript inputs have different lengths (52 vs 32 bytes), so
/// one can never be presented as the other.
pub fn sign_transcript_gated(
    dev: &Device,
    transcript: &[u8; 32],
) -> Result<[u8; SIGNATURE_LEN], QuoteError> {
    dev.with_gated_key(|sk| sk.sign(transcript).to_bytes())
}

pub fn verify_signature(verify_key: &[u8; PUBLIC_KEY_LEN], msg: &[u8], sig: &[u8; 64]) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(verify_key) else {
        return false;
    };
    vk.verify(msg, &Signature::from_bytes(sig)).is_ok()
}

/// Accepts iff the signature verifies under `verify_key` and the quoted
/// measurement equals `expected`.
pub fn verify_quote(
    verify_key: &[u8; PUBLIC_KEY_LEN],
    quote: &Quote,
    expected: &Measurement,
) -> QuoteVerdict {
    verify_quote_any(verify_key, quote, std::slice::from_ref(expected))
}

/// As [`verify_quote`], accepting any of several provisioned measurements.
pub fn verify_quote_any(
    verify_key: &[u8; PUBLIC_KEY_LEN],
    quote: &Quote,
    expected: &[Measurement],
) -> QuoteVerdict {
    if !verify_signature(
        verify_key,
        &quote.measurement.canonical_bytes(),
        &quote.signature,
    ) {
        return QuoteVerdict::Reject(RejectReason::BadSignature);
    }
    // Compare against every entry so timing does not reveal which one matched.
    let matched = expected.iter().fold(false, |acc, e| {
        acc | measurement_equals(&quote.measurement, e)
    });
    if matched {
        QuoteVerdict::Accept
    } else {
        QuoteVerdict::Reject(RejectReason::MeasurementMismatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crtm::AttestationConfig;

    fn measurement(fill: u8) -> Measurement {
        Measurement {
            digest: [fill; 32],
            config: AttestationConfig::new(0x2000_0000, 0x2000_1000, 1024).unwrap(),
        }
    }

    fn sign_plain(key: &QuoteSigningKey, m: &Measurement) -> Quote {
        let sk = SigningKey::from_bytes(key.secret_seed());
        Quote {
            measurement: *m,
            signature: sk.sign(&m.canonical_bytes()).to_bytes(),
        }
    }

    #[test]
    fn wire_form_is_116_bytes_and_round_trips() {
        let key = QuoteSigningKey::from_seed([3; 32]);
        let q = sign_plain(&key, &measurement(1));
        let bytes = q.to_bytes();
        assert_eq!(bytes.len(), 116);
        assert_eq!(Quote::from_bytes(&bytes), Ok(q));
        assert_eq!(Quote::from_bytes(&bytes[..115]), Err(QuoteError::Malformed));
        assert_eq!(Quote::from_bytes(&[0; 116]), Err(QuoteError::Malformed));
    }

    #[test]
    fn verify_outcomes() {
        let key = QuoteSigningKey::from_seed([9; 32]);
        let m = measurement(7);
        let q = sign_plain(&key, &m);
        assert_eq!(verify_quote(&key.public(), &q, &m), QuoteVerdict::Accept);

        let mut expected = m;
        expected.digest[0] ^= 0x01;
        assert_eq!(
            verify_quote(&key.public(), &q, &expected),
            QuoteVerdict::Reject(RejectReason::MeasurementMismatch)
        );

        let mut bad = q;
        bad.signature[10] ^= 0x04;
        assert_eq!(
            verify_quote(&key.public(), &bad, &m),
            QuoteVerdict::Reject(RejectReason::BadSignature)
        );

        let other = QuoteSigningKey::from_seed([10; 32]);
        assert_eq!(
            verify_quote(&other.public(), &q, &m),
            QuoteVerdict::Reject(RejectReason::BadSignature)
        );
    }

    #[test]
    fn any_of_several_expected() {
        let key = QuoteSigningKey::from_seed([1; 32]);
        let q = sign_plain(&key, &measurement(2));
        let list = [measurement(1), measurement(2)];
        assert_eq!(
            verify_quote_any(&key.public(), &q, &list),
            QuoteVerdict::Accept
        );
        assert_eq!(
            verify_quote_any(&key.public(), &q, &list[..1]),
            QuoteVerdict::Reject(RejectReason::MeasurementMismatch)
        );
    }

    #[test]
    fn debug_redacts_seed() {
        let seed = [0x5A; 32];
        let key = QuoteSigningKey::from_seed(seed);
        let dbg = format!("{key:?}");
        assert!(!dbg.contains(&hex::encode(seed)));
        assert!(dbg.contains("redacted"));
    }
}
