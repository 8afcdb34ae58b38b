// Licensed under the Apache-2.0 license

//! Core root of trust for measurement.
//!
//! The attested range `[start, end)` is split into consecutive blocks of
//! `block_size` bytes (the last one may be short) and folded back to front:
//!
//! ```text
//! D_k = H(B_k)
//! D_j = H(B_j || D_{j+1})
//! measurement = D_0
//! ```
//!
//! Only one block and one 32-byte running digest are live at a time.

use std::fmt;

use sha3::{Digest, Sha3_256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::memory::MemoryImage;

pub const DIGEST_LEN: usize = 32;

/// Length of [`Measurement::canonical_bytes`].
pub const MEASUREMENT_WIRE_LEN: usize = 8 + 8 + 4 + DIGEST_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrtmError {
    #[error("invalid attested range {start:#010x}..{end:#010x} (block {block})")]
    InvalidRange { start: u32, end: u32, block: u32 },
}

/// The attested range and block granularity, fixed in ROM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AttestationConfig {
    pub start_addr: u32,
    /// Exclusive.
    pub end_addr: u32,
    pub block_size: u32,
}

impl AttestationConfig {
    pub fn new(start_addr: u32, end_addr: u32, block_size: u32) -> Result<Self, CrtmError> {
        let cfg = AttestationConfig {
            start_addr,
            end_addr,
            block_size,
        };
        cfg.check_shape()?;
        Ok(cfg)
    }

    fn invalid(&self) -> CrtmError {
        CrtmError::InvalidRange {
            start: self.start_addr,
            end: self.end_addr,
            block: self.block_size,
        }
    }

    fn check_shape(&self) -> Result<(), CrtmError> {
        if self.start_addr >= self.end_addr || self.block_size == 0 {
            return Err(self.invalid());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.end_addr - self.start_addr) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end_addr <= self.start_addr
    }

    pub fn block_count(&self) -> usize {
        self.len().div_ceil(self.block_size as usize)
    }
}

/// A CRTM digest bound to the configuration that produced it.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Measurement {
    pub digest: [u8; DIGEST_LEN],
    pub config: AttestationConfig,
}

impl Measurement {
    /// `start (u64 BE) || end (u64 BE) || block_size (u32 BE) || digest`.
    /// This is the byte string covered by a quote signature.
    pub fn canonical_bytes(&self) -> [u8; MEASUREMENT_WIRE_LEN] {
        let mut out = [0u8; MEASUREMENT_WIRE_LEN];
        out[0..8].copy_from_slice(&u64::from(self.config.start_addr).to_be_bytes());
        out[8..16].copy_from_slice(&u64::from(self.config.end_addr).to_be_bytes());
        out[16..20].copy_from_slice(&self.config.block_size.to_be_bytes());
        out[20..].copy_from_slice(&self.digest);
        out
    }

    /// Parses [`Measurement::canonical_bytes`]; rejects ranges that do not
    /// fit 32-bit addresses or violate the config invariants.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Option<Measurement> {
        if bytes.len() != MEASUREMENT_WIRE_LEN {
            return None;
        }
        let start = u64::from_be_bytes(bytes[0..8].try_into().ok()?);
        let end = u64::from_be_bytes(bytes[8..16].try_into().ok()?);
        let block = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
        let config =
            AttestationConfig::new(u32::try_from(start).ok()?, u32::try_from(end).ok()?, block)
                .ok()?;
        Some(Measurement {
            digest: bytes[20..].try_into().ok()?,
            config,
        })
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }
}

impl fmt::Debug for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Measurement")
            .field("digest", &self.digest_hex())
            .field("config", &self.config)
            .finish()
    }
}

/// Constant-time comparison of digest and configuration.
pub fn measurement_equals(a: &Measurement, b: &Measurement) -> bool {
    bool::from(a.canonical_bytes().ct_eq(&b.canonical_bytes()))
}

/// Work performed by one measurement.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeasureStats {
    /// Memory bytes fed to the hash (running digests are not counted).
    pub bytes_hashed: u64,
    pub hash_calls: u64,
}

/// Measures `config`'s range of `image`. The range must lie inside one
/// mapped region. Runs as trusted ROM code, so no PMP checks apply.
pub fn measure(image: &MemoryImage, config: &AttestationConfig) -> Result<Measurement, CrtmError> {
    measure_with_stats(image, config).map(|(m, _)| m)
}

pub fn measure_with_stats(
    image: &MemoryImage,
    config: &AttestationConfig,
) -> Result<(Measurement, MeasureStats), CrtmError> {
    config.check_shape()?;
    let data = image
        .slice(config.start_addr, config.len())
        .map_err(|_| config.invalid())?;
    let (digest, stats) = chained_digest(data, config.block_size as usize);
    Ok((
        Measurement {
            digest,
            config: *config,
        },
        stats,
    ))
}

/// Measures a raw byte string as if it were mapped at `config.start_addr`.
pub fn measure_bytes(data: &[u8], config: &AttestationConfig) -> Result<Measurement, CrtmError> {
    config.check_shape()?;
    if data.len() != config.len() {
        return Err(config.invalid());
    }
    let (digest, _) = chained_digest(data, config.block_size as usize);
    Ok(Measurement {
        digest,
        config: *config,
    })
}

fn chained_digest(data: &[u8], block_size: usize) -> ([u8; DIGEST_LEN], MeasureStats) {
    let mut stats = MeasureStats::default();
    let mut next: Option<[u8; DIGEST_LEN]> = None;
    for block in data.chunks(block_size).rev() {
        let mut h = Sha3_256::new();
        h.update(block);
        if let Some(d) = &next {
            h.update(d);
        }
        next = Some(h.finalize().into());
        stats.bytes_hashed += block.len() as u64;
        stats.hash_calls += 1;
    }
    (next.expect("non-empty range has at least one block"), stats)
}
