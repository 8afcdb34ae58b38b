// Licensed under the Apache-2.0 license

//! Offline provisioning: device identities, golden measurements, the
//! trust-store file and device profiles.
//!
//! Trust-store files are line-based UTF-8:
//!
//! ```text
//! # comment
//! peer <id>
//! key <64 hex chars>
//! expect <start-hex> <end-hex> <block-decimal> <64 hex chars>
//!
//! peer <next id>
//! ...
//! ```
//!
//! Records are separated by blank lines; each has exactly one `key` line
//! and at least one `expect` line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_core::{OsRng, RngCore};
use serde::{Deserialize, Serialize};
use sha3::{Digest, Sha3_256};
use thiserror::Error;

use crate::crtm::{self, AttestationConfig, CrtmError, Measurement};
use crate::device::{Device, DeviceError};
use crate::memory::{MemoryImage, MemoryLayout, MemoryRegion, RegionKind};
use crate::quote::{QuoteSigningKey, PUBLIC_KEY_LEN, SEED_LEN};

pub const MAX_PEER_ID_LEN: usize = 64;
const QSK_LABEL: &[u8] = b"LIRA-V/1/QSK";

#[derive(Debug, Error)]
pub enum ProvisioningError {
    #[error("at least {SEED_LEN} bytes of entropy required, got {0}")]
    InsufficientEntropy(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate peer id {0:?}")]
    DuplicatePeer(String),
    #[error("invalid peer id {0:?}")]
    InvalidPeerId(String),
    #[error("peer {0:?} has no expected measurement")]
    NoExpectation(String),
    #[error("invalid device profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Crtm(#[from] CrtmError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProvisioningError + '_ {
    move |source| ProvisioningError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Derives a quote-signing key from caller-supplied entropy. Identical
/// entropy yields an identical key, which is what deterministic test seeds
/// rely on.
pub fn gen_identity(entropy: &[u8]) -> Result<QuoteSigningKey, ProvisioningError> {
    if entropy.len() < SEED_LEN {
        return Err(ProvisioningError::InsufficientEntropy(entropy.len()));
    }
    let mut h = Sha3_256::new();
    h.update(QSK_LABEL);
    h.update(entropy);
    Ok(QuoteSigningKey::from_seed(h.finalize().into()))
}

/// Fresh identity from the operating system's CSPRNG.
pub fn gen_identity_random() -> QuoteSigningKey {
    let mut entropy = zeroize::Zeroizing::new([0u8; 64]);
    OsRng.fill_bytes(entropy.as_mut());
    gen_identity(entropy.as_ref()).expect("64 bytes of entropy")
}

/// Verifier-side golden value for `firmware` mapped at `flash_base`.
/// Shares its implementation with the device CRTM.
pub fn compute_expected(
    firmware: &[u8],
    flash_base: u32,
    config: &AttestationConfig,
) -> Result<Measurement, ProvisioningError> {
    let image = MemoryImage::new(vec![MemoryRegion::new(
        flash_base,
        RegionKind::Flash,
        firmware.to_vec(),
    )])
    .map_err(|e| ProvisioningError::Profile(e.to_string()))?;
    Ok(crtm::measure(&image, config)?)
}

/// What a device knows about one peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerRecord {
    pub verify_key: [u8; PUBLIC_KEY_LEN],
    pub expected: Vec<Measurement>,
}

/// Peer verification keys and expected measurements. Built once during
/// provisioning; there is no API for mutating a constructed store.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrustStore {
    entries: BTreeMap<String, PeerRecord>,
}

#[derive(Debug, Default)]
pub struct TrustStoreBuilder {
    entries: BTreeMap<String, PeerRecord>,
}

impl TrustStoreBuilder {
    pub fn peer(
        mut self,
        id: &str,
        verify_key: [u8; PUBLIC_KEY_LEN],
        expected: Vec<Measurement>,
    ) -> Result<Self, ProvisioningError> {
        validate_peer_id(id)?;
        if expected.is_empty() {
            return Err(ProvisioningError::NoExpectation(id.to_string()));
        }
        if self.entries.contains_key(id) {
            return Err(ProvisioningError::DuplicatePeer(id.to_string()));
        }
        self.entries.insert(
            id.to_string(),
            PeerRecord {
                verify_key,
                expected,
            },
        );
        Ok(self)
    }

    pub fn build(self) -> TrustStore {
        TrustStore {
            entries: self.entries,
        }
    }
}

fn validate_peer_id(id: &str) -> Result<(), ProvisioningError> {
    if id.is_empty() || id.len() > MAX_PEER_ID_LEN || id.chars().any(char::is_whitespace) {
        return Err(ProvisioningError::InvalidPeerId(id.to_string()));
    }
    Ok(())
}

impl TrustStore {
    pub fn builder() -> TrustStoreBuilder {
        TrustStoreBuilder::default()
    }

    pub fn get(&self, id: &str) -> Option<&PeerRecord> {
        self.entries.get(id)
    }

    pub fn peers(&self) -> impl Iterator<Item = (&str, &PeerRecord)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# lirav trust store\n");
        for (i, (id, rec)) in self.entries.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format_record(id, rec));
        }
        out
    }

    pub fn parse(text: &str) -> Result<TrustStore, ProvisioningError> {
        // Peer id, line it started on, key, expectations.
        type Pending = (String, usize, Option<[u8; 32]>, Vec<Measurement>);
        let mut builder = TrustStore::builder();
        let mut current: Option<Pending> = None;

        let finish = |builder: TrustStoreBuilder,
                      rec: Option<Pending>|
         -> Result<TrustStoreBuilder, ProvisioningError> {
            let Some((id, line, key, expected)) = rec else {
                return Ok(builder);
            };
            let key = key.ok_or_else(|| parse_err(line, "record has no key line"))?;
            if expected.is_empty() {
                return Err(parse_err(line, "record has no expect line"));
            }
            builder.peer(&id, key, expected)
        };

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                builder = finish(builder, current.take())?;
                continue;
            }
            let mut words = line.split_whitespace();
            let tag = words.next().unwrap_or_default();
            let args: Vec<&str> = words.collect();
            match tag {
                "peer" => {
                    if current.is_some() {
                        return Err(parse_err(
                            line_no,
                            "records must be separated by a blank line",
                        ));
                    }
                    let [id] = args[..] else {
                        return Err(parse_err(line_no, "expected `peer <id>`"));
                    };
                    validate_peer_id(id).map_err(|_| parse_err(line_no, "invalid peer id"))?;
                    current = Some((id.to_string(), line_no, None, Vec::new()));
                }
                "key" => {
                    let rec = current
                        .as_mut()
                        .ok_or_else(|| parse_err(line_no, "`key` outside a peer record"))?;
                    if rec.2.is_some() {
                        return Err(parse_err(line_no, "duplicate key line"));
                    }
                    let [hexkey] = args[..] else {
                        return Err(parse_err(line_no, "expected `key <64 hex>`"));
                    };
                    rec.2 = Some(parse_hex32(hexkey, line_no)?);
                }
                "expect" => {
                    let rec = current
                        .as_mut()
                        .ok_or_else(|| parse_err(line_no, "`expect` outside a peer record"))?;
                    let [start, end, block, digest] = args[..] else {
                        return Err(parse_err(
                            line_no,
                            "expected `expect <start> <end> <block> <digest>`",
                        ));
                    };
                    let start = parse_hex_u32(start, line_no)?;
                    let end = parse_hex_u32(end, line_no)?;
                    let block: u32 = block
                        .parse()
                        .map_err(|_| parse_err(line_no, "block size is not a decimal u32"))?;
                    let config = AttestationConfig::new(start, end, block)
                        .map_err(|e| parse_err(line_no, &e.to_string()))?;
                    rec.3.push(Measurement {
                        digest: parse_hex32(digest, line_no)?,
                        config,
                    });
                }
                other => return Err(parse_err(line_no, &format!("unknown directive `{other}`"))),
            }
        }
        builder = finish(builder, current.take())?;
        Ok(builder.build())
    }
}

/// One `peer` record as emitted by `provision` for the opposing device.
pub fn format_record(id: &str, rec: &PeerRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "peer {id}");
    let _ = writeln!(out, "key {}", hex::encode(rec.verify_key));
    for m in &rec.expected {
        let _ = writeln!(
            out,
            "expect {:#010x} {:#010x} {} {}",
            m.config.start_addr,
            m.config.end_addr,
            m.config.block_size,
            m.digest_hex()
        );
    }
    out
}

fn parse_err(line: usize, msg: &str) -> ProvisioningError {
    ProvisioningError::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn parse_hex32(s: &str, line: usize) -> Result<[u8; 32], ProvisioningError> {
    let mut out = [0u8; 32];
    if s.len() != 64 {
        return Err(parse_err(line, "expected 64 hex characters"));
    }
    hex::decode_to_slice(s, &mut out).map_err(|_| parse_err(line, "invalid hex"))?;
    Ok(out)
}

fn parse_hex_u32(s: &str, line: usize) -> Result<u32, ProvisioningError> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    u32::from_str_radix(digits, 16).map_err(|_| parse_err(line, "invalid hex address"))
}

pub fn save_trust_store(path: &Path, store: &TrustStore) -> Result<(), ProvisioningError> {
    std::fs::write(path, store.to_text()).map_err(io_err(path))
}

pub fn load_trust_store(path: &Path) -> Result<TrustStore, ProvisioningError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    TrustStore::parse(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationSection {
    pub start: u32,
    pub end: u32,
    pub block: u32,
}

impl AttestationSection {
    pub fn config(&self) -> Result<AttestationConfig, CrtmError> {
        AttestationConfig::new(self.start, self.end, self.block)
    }
}

impl From<AttestationConfig> for AttestationSection {
    fn from(c: AttestationConfig) -> Self {
        AttestationSection {
            start: c.start_addr,
            end: c.end_addr,
            block: c.block_size,
        }
    }
}

/// Everything needed to manufacture one device. The profile carries the
/// signing-key seed and must be handled as a secret.
#[derive(Clone, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    qsk_seed: String,
    pub firmware: PathBuf,
    pub attestation: AttestationSection,
    #[serde(default)]
    pub memory: MemoryLayout,
}

impl std::fmt::Debug for DeviceProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceProfile")
            .field("device_id", &self.device_id)
            .field("qsk_seed", &"<redacted>")
            .field("firmware", &self.firmware)
            .field("attestation", &self.attestation)
            .field("memory", &self.memory)
            .finish()
    }
}

impl DeviceProfile {
    pub fn new(
        device_id: &str,
        qsk: &QuoteSigningKey,
        firmware: PathBuf,
        attestation: AttestationConfig,
        memory: MemoryLayout,
    ) -> Result<Self, ProvisioningError> {
        validate_peer_id(device_id)?;
        let p = DeviceProfile {
            device_id: device_id.to_string(),
            qsk_seed: hex::encode(qsk.secret_seed()),
            firmware,
            attestation: attestation.into(),
            memory,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn qsk(&self) -> Result<QuoteSigningKey, ProvisioningError> {
        let mut seed = [0u8; SEED_LEN];
        hex::decode_to_slice(&self.qsk_seed, &mut seed)
            .map_err(|_| ProvisioningError::Profile("qsk_seed must be 64 hex chars".into()))?;
        Ok(QuoteSigningKey::from_seed(seed))
    }

    pub fn attestation_config(&self) -> Result<AttestationConfig, ProvisioningError> {
        Ok(self.attestation.config()?)
    }

    pub fn validate(&self) -> Result<(), ProvisioningError> {
        validate_peer_id(&self.device_id)?;
        self.qsk()?;
        self.memory
            .validate()
            .map_err(|e| ProvisioningError::Profile(e.to_string()))?;
        let cfg = self.attestation_config()?;
        let flash_end = u64::from(self.memory.flash_base) + u64::from(self.memory.flash_size);
        if cfg.start_addr < self.memory.flash_base || u64::from(cfg.end_addr) > flash_end {
            return Err(ProvisioningError::Profile(
                "attested range must lie inside flash".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ProvisioningError> {
        let p: DeviceProfile =
            toml::from_str(text).map_err(|e| ProvisioningError::Profile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProvisioningError> {
        std::fs::write(path, self.to_toml()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, ProvisioningError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    /// Firmware path, resolved relative to `profile_dir` when not absolute.
    pub fn firmware_path(&self, profile_dir: Option<&Path>) -> PathBuf {
        match profile_dir {
            Some(dir) if self.firmware.is_relative() => dir.join(&self.firmware),
            _ => self.firmware.clone(),
        }
    }

    /// Trust-store record describing this device to its peers.
    pub fn peer_record(&self, firmware: &[u8]) -> Result<PeerRecord, ProvisioningError> {
        let expected = compute_expected(
            &flash_contents(firmware, &self.memory)?,
            self.memory.flash_base,
            &self.attestation_config()?,
        )?;
        Ok(PeerRecord {
            verify_key: self.qsk()?.public(),
            expected: vec![expected],
        })
    }

    /// Manufactures and boots a device from this profile.
    pub fn build_device(
        &self,
        firmware: &[u8],
        trust: &TrustStore,
    ) -> Result<Device, ProvisioningError> {
        Ok(Device::new(
            &self.device_id,
            self.memory,
            &self.qsk()?,
            self.attestation_config()?,
            trust,
            firmware,
        )?)
    }
}

/// Flash as the device sees it: firmware followed by erased (0xFF) bytes.
pub fn flash_contents(
    firmware: &[u8],
    layout: &MemoryLayout,
) -> Result<Vec<u8>, ProvisioningError> {
    let size = layout.flash_size as usize;
    if firmware.len() > size {
        return Err(ProvisioningError::Profile(format!(
            "firmware ({} bytes) larger than flash ({size} bytes)",
            firmware.len()
        )));
    }
    let mut flash = vec![0xFF; size];
    flash[..firmware.len()].copy_from_slice(firmware);
    Ok(flash)
}
