// Licensed under the Apache-2.0 license

//! Session-key derivation, transcript hashing and the authenticated
//! encryption wrapper used by M2 and M3.

use std::fmt;

use crypto_secretbox::aead::{Aead, KeyInit};
use crypto_secretbox::{Nonce as AeNonce, XSalsa20Poly1305};
use sha3::{Digest, Sha3_256};
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::Zeroizing;

use super::AbortReason;
use crate::quote::QUOTE_WIRE_LEN;

pub const NONCE_LEN: usize = 32;
pub const POINT_LEN: usize = 32;
pub const AE_TAG_LEN: usize = 16;
pub const AE_NONCE_LEN: usize = 24;

const KDF_LABEL: &[u8] = b"LIRA-V/1/KDF";
const AE_LABEL: &[u8] = b"LIRA-V/1/AE";

pub type Nonce = [u8; NONCE_LEN];

/// Symmetric session key shared by the two endpoints of a completed run.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey(Zeroizing<[u8; 32]>);

impl SessionKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SessionKey(Zeroizing::new(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// First eight hex characters of SHA3-256(K). Safe to print.
    pub fn fingerprint(&self) -> String {
        let d = Sha3_256::digest(self.0.as_ref());
        hex::encode(&d[..4])
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionKey(fp={})", self.fingerprint())
    }
}

/// Which message an AE payload belongs to; selects the AE nonce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    M2 = 0x02,
    M3 = 0x03,
}

/// X25519 with the contributory check: an all-zero shared secret, which a
/// low-order peer point produces, is rejected.
pub fn shared_secret(
    secret: &StaticSecret,
    peer_point: &[u8; POINT_LEN],
) -> Result<Zeroizing<[u8; 32]>, AbortReason> {
    let shared = secret.diffie_hellman(&PublicKey::from(*peer_point));
    if !shared.was_contributory() {
        return Err(AbortReason::WeakPoint);
    }
    Ok(Zeroizing::new(shared.to_bytes()))
}

/// `K = SHA3-256("LIRA-V/1/KDF" || shared_secret || n_A || n_B)`.
pub fn derive_session_key(
    shared_secret: &[u8; 32],
    n_a: &Nonce,
    n_b: &Nonce,
) -> Result<SessionKey, AbortReason> {
    if shared_secret.iter().all(|&b| b == 0) {
        return Err(AbortReason::WeakPoint);
    }
    let mut h = Sha3_256::new();
    h.update(KDF_LABEL);
    h.update(shared_secret);
    h.update(n_a);
    h.update(n_b);
    Ok(SessionKey::from_bytes(h.finalize().into()))
}

/// SHA3-256 over `quote || n_first || n_second || q_first || q_second`.
/// Callers pass the points in the order their message requires: the
/// responder signs `q_B || q_A`, the initiator `q_A || q_B`.
pub fn transcript_hash(
    quote: &[u8; QUOTE_WIRE_LEN],
    n_first: &Nonce,
    n_second: &Nonce,
    q_first: &[u8; POINT_LEN],
    q_second: &[u8; POINT_LEN],
) -> [u8; 32] {
    let mut h = Sha3_256::new();
    h.update(quote);
    h.update(n_first);
    h.update(n_second);
    h.update(q_first);
    h.update(q_second);
    h.finalize().into()
}

/// First 24 bytes of `SHA3-256("LIRA-V/1/AE" || direction || n_A || n_B)`.
pub fn ae_nonce(direction: Direction, n_a: &Nonce, n_b: &Nonce) -> [u8; AE_NONCE_LEN] {
    let mut h = Sha3_256::new();
    h.update(AE_LABEL);
    h.update([direction as u8]);
    h.update(n_a);
    h.update(n_b);
    let d = h.finalize();
    d[..AE_NONCE_LEN].try_into().expect("24 bytes")
}

/// XSalsa20-Poly1305 seal; the output is 16 bytes longer than the input.
pub fn ae_seal(
    k: &SessionKey,
    direction: Direction,
    n_a: &Nonce,
    n_b: &Nonce,
    plaintext: &[u8],
) -> Vec<u8> {
    let cipher = XSalsa20Poly1305::new(k.as_bytes().into());
    let nonce = ae_nonce(direction, n_a, n_b);
    cipher
        .encrypt(AeNonce::from_slice(&nonce), plaintext)
        .expect("XSalsa20-Poly1305 encryption is infallible for in-memory buffers")
}

/// Authenticates, then decrypts. Any failure is [`AbortReason::BadTag`].
pub fn ae_open(
    k: &SessionKey,
    direction: Direction,
    n_a: &Nonce,
    n_b: &Nonce,
    ciphertext: &[u8],
) -> Result<Zeroizing<Vec<u8>>, AbortReason> {
    let cipher = XSalsa20Poly1305::new(k.as_bytes().into());
    let nonce = ae_nonce(direction, n_a, n_b);
    cipher
        .decrypt(AeNonce::from_slice(&nonce), ciphertext)
        .map(Zeroizing::new)
        .map_err(|_| AbortReason::BadTag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha20Rng;
    use rand_core::{RngCore, SeedableRng};

    #[test]
    fn kdf_properties() {
        let ss = [9u8; 32];
        let k1 = derive_session_key(&ss, &[1; 32], &[2; 32]).unwrap();
        assert_eq!(k1, derive_session_key(&ss, &[1; 32], &[2; 32]).unwrap());
        assert_ne!(k1, derive_session_key(&ss, &[1; 32], &[3; 32]).unwrap());
        assert_eq!(
            derive_session_key(&[0; 32], &[1; 32], &[2; 32]),
            Err(AbortReason::WeakPoint)
        );
    }

    #[test]
    fn kdf_matches_label_layout() {
        let mut input = Vec::new();
        input.extend_from_slice(b"LIRA-V/1/KDF");
        input.extend_from_slice(&[5; 32]);
        input.extend_from_slice(&[6; 32]);
        input.extend_from_slice(&[7; 32]);
        let want: [u8; 32] = Sha3_256::digest(&input).into();
        assert_eq!(
            derive_session_key(&[5; 32], &[6; 32], &[7; 32])
                .unwrap()
                .as_bytes(),
            &want
        );
    }

    #[test]
    fn dh_symmetry_and_weak_point() {
        let a = StaticSecret::from([1u8; 32]);
        let b = StaticSecret::from([2u8; 32]);
        let qa = PublicKey::from(&a).to_bytes();
        let qb = PublicKey::from(&b).to_bytes();
        assert_eq!(
            *shared_secret(&a, &qb).unwrap(),
            *shared_secret(&b, &qa).unwrap()
        );
        assert_eq!(shared_secret(&a, &[0; 32]), Err(AbortReason::WeakPoint));
        // The order-2 point (u = 1) on the curve is also rejected.
        let mut one = [0u8; 32];
        one[0] = 1;
        assert_eq!(shared_secret(&a, &one), Err(AbortReason::WeakPoint));
    }

    #[test]
    fn transcript_order_matters() {
        let q = [0u8; QUOTE_WIRE_LEN];
        let a = transcript_hash(&q, &[1; 32], &[2; 32], &[3; 32], &[4; 32]);
        let b = transcript_hash(&q, &[1; 32], &[2; 32], &[4; 32], &[3; 32]);
        assert_ne!(a, b);
    }

    #[test]
    fn seal_open_round_trip_and_direction_binding() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..32 {
            let mut key = [0u8; 32];
            let mut pt = [0u8; 180];
            let (mut na, mut nb) = ([0u8; 32], [0u8; 32]);
            rng.fill_bytes(&mut key);
            rng.fill_bytes(&mut pt);
            rng.fill_bytes(&mut na);
            rng.fill_bytes(&mut nb);
            let k = SessionKey::from_bytes(key);
            let ct = ae_seal(&k, Direction::M3, &na, &nb, &pt);
            assert_eq!(ct.len(), 180 + AE_TAG_LEN);
            assert_eq!(
                &ae_open(&k, Direction::M3, &na, &nb, &ct).unwrap()[..],
                &pt[..]
            );
            assert_eq!(
                ae_open(&k, Direction::M2, &na, &nb, &ct),
                Err(AbortReason::BadTag)
            );
            assert_eq!(
                ae_open(&k, Direction::M3, &na, &nb, &ct[..ct.len() - 1]),
                Err(AbortReason::BadTag)
            );
        }
    }

    #[test]
    fn ae_nonces_differ_by_direction() {
        assert_ne!(
            ae_nonce(Direction::M2, &[1; 32], &[2; 32]),
            ae_nonce(Direction::M3, &[1; 32], &[2; 32])
        );
    }

    #[test]
    fn fingerprint_is_eight_hex_chars() {
        let k = SessionKey::from_bytes([0xAB; 32]);
        let fp = k.fingerprint();
        assert_eq!(fp.len(), 8);
        assert!(!format!("{k:?}").contains(&hex::encode([0xAB; 32])));
    }

    // Frozen vectors, computed once with Python's hashlib.sha3_256.
    #[test]
    fn frozen_vectors() {
        let q = [0u8; QUOTE_WIRE_LEN];
        assert_eq!(
            hex::encode(transcript_hash(&q, &[0; 32], &[0; 32], &[0; 32], &[0; 32])),
            "ad17cb196f25d881e83209846061c9a70457aa2a6d5a5b2dc92d958673cef874"
        );
        let k = derive_session_key(&[1; 32], &[2; 32], &[3; 32]).unwrap();
        assert_eq!(
            hex::encode(k.as_bytes()),
            "f4c536a554ccd87b6509392d62d2cc17edfe0870bd6c1497f44e0fe8cdcfdb2d"
        );
        assert_eq!(k.fingerprint(), "5c71e86f");
        assert_eq!(
            hex::encode(ae_nonce(Direction::M2, &[2; 32], &[3; 32])),
            "9cf0b8db25b468e79309d07f0c11fd9b7b52e861df71685e"
        );
        assert_eq!(
            hex::encode(ae_nonce(Direction::M3, &[2; 32], &[3; 32])),
            "d87f585d1b791fb16ffe243f56e8949be13064ba26bcb51a"
        );
    }
}
