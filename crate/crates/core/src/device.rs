// Licensed under the Apache-2.0 license

//! A single-core constrained device: memory map, PMP bank and boot ROM.
//!
//! Code on the device runs in one of two contexts. Trusted ROM routines
//! (boot, CRTM, the signing gate) are host functions on [`Device`] that
//! touch memory directly. Everything else, including the attestation agent
//! and any malware, goes through [`Untrusted`], where each byte is checked
//! against the PMP bank.
//!
//! ROM layout, relative to `rom_base`:
//!
//! ```text
//! 0x00  16-byte CRTM code image marker
//! 0x10  attested range: start, end, block size (u32 BE each)
//! 0x1C  reserved
//! 0x20  trust-store length (u32 BE)
//! 0x24  trust-store text
//! ...   signing-key region (seed, then signing routine), locked X-only
//! ```

use std::collections::HashSet;
use std::fmt;

use ed25519_dalek::SigningKey;
use rand_core::CryptoRngCore;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::crtm::{self, AttestationConfig, CrtmError, MeasureStats, Measurement};
use crate::memory::{MemoryError, MemoryImage, MemoryLayout, RegionKind};
use crate::pmp::{napot_encode, Access, ExecutionContext, PmpBank, PmpConfig, PmpError, Verdict};
use crate::provisioning::TrustStore;
use crate::quote::{QuoteError, QuoteSigningKey, QUOTE_WIRE_LEN, SEED_LEN};

/// PMP entry the boot ROM locks over the signing-key region.
pub const QSK_PMP_INDEX: usize = 0;

pub(crate) const ROM_HEADER_LEN: usize = 0x24;
const ROM_MARKER: &[u8; 16] = b"lirav-crtm-rom01";
const ROM_CONFIG_OFFSET: u32 = 0x10;
const ROM_TRUST_LEN_OFFSET: u32 = 0x20;
const ROM_TRUST_OFFSET: u32 = 0x24;
/// `addi x0, x0, 0`, filling the rest of the signing routine region.
const RV_NOP: [u8; 4] = [0x13, 0x00, 0x00, 0x00];

/// Offset into SRAM where the attestation agent stages the signed quote.
pub const QUOTE_BUFFER_OFFSET: u32 = 0x100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("access fault at {0:#010x}")]
    AccessFault(u32),
    #[error("address {addr:#010x}+{len} is not mapped")]
    OutOfRange { addr: u32, len: usize },
    #[error(transparent)]
    Pmp(#[from] PmpError),
    #[error(transparent)]
    Crtm(#[from] CrtmError),
    #[error("invalid device image: {0}")]
    Image(String),
    #[error("device has not completed its ROM boot")]
    NotBooted,
    #[error("entropy source repeated a nonce")]
    NonceReuse,
}

impl From<MemoryError> for DeviceError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::OutOfRange { addr, len } => DeviceError::OutOfRange { addr, len },
            other => DeviceError::Image(other.to_string()),
        }
    }
}

/// How the ROM boot routine configures protection. Anything other than
/// `Standard` models a faulty ROM and exists for negative tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BootPolicy {
    #[default]
    Standard,
    SkipPmpLock,
}

/// Points in the attestation agent's flow where resident code gets to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentEvent {
    /// The signed quote has been written to SRAM and is about to be sent.
    QuoteStaged { addr: u32, len: usize },
}

/// Code persisting in untrusted memory, invoked at agent events.
pub type ResidentHook = Box<dyn FnMut(AgentEvent, &mut Untrusted<'_>) + Send>;

pub struct Device {
    id: String,
    layout: MemoryLayout,
    memory: MemoryImage,
    pmp: PmpBank,
    public_key: [u8; 32],
    attestation: AttestationConfig,
    trust: TrustStore,
    boot_complete: bool,
    issued_nonces: HashSet<[u8; 32]>,
    resident: Option<ResidentHook>,
}

impl fmt::Debug for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Device")
            .field("id", &self.id)
            .field("public_key", &hex::encode(self.public_key))
            .field("memory", &self.memory)
            .field("pmp", &self.pmp)
            .field("attestation", &self.attestation)
            .field("boot_complete", &self.boot_complete)
            .finish_non_exhaustive()
    }
}

impl Device {
    /// Burns ROM and flash for a new device and runs its first boot.
    pub fn new(
        id: &str,
        layout: MemoryLayout,
        qsk: &QuoteSigningKey,
        attestation: AttestationConfig,
        trust: &TrustStore,
        firmware: &[u8],
    ) -> Result<Device, DeviceError> {
        let mut memory = layout.blank_image()?;
        if firmware.len() > layout.flash_size as usize {
            return Err(DeviceError::Image("firmware larger than flash".into()));
        }
        memory
            .slice_mut(layout.flash_base, firmware.len())?
            .copy_from_slice(firmware);

        let trust_text = trust.to_text();
        let trust_end = ROM_TRUST_OFFSET as usize + trust_text.len();
        if trust_end > (layout.qsk_region_base - layout.rom_base) as usize {
            return Err(DeviceError::Image("trust store does not fit in ROM".into()));
        }
        let rom = memory.slice_mut(layout.rom_base, layout.rom_size as usize)?;
        rom[..16].copy_from_slice(ROM_MARKER);
        let cfg_off = ROM_CONFIG_OFFSET as usize;
        rom[cfg_off..cfg_off + 4].copy_from_slice(&attestation.start_addr.to_be_bytes());
        rom[cfg_off + 4..cfg_off + 8].copy_from_slice(&attestation.end_addr.to_be_bytes());
        rom[cfg_off + 8..cfg_off + 12].copy_from_slice(&attestation.block_size.to_be_bytes());
        let len_off = ROM_TRUST_LEN_OFFSET as usize;
        rom[len_off..len_off + 4].copy_from_slice(&(trust_text.len() as u32).to_be_bytes());
        rom[ROM_TRUST_OFFSET as usize..trust_end].copy_from_slice(trust_text.as_bytes());

        let key_off = (layout.qsk_region_base - layout.rom_base) as usize;
        let key_region = &mut rom[key_off..key_off + layout.qsk_region_size as usize];
        key_region[..SEED_LEN].copy_from_slice(qsk.secret_seed());
        for word in key_region[SEED_LEN..].chunks_mut(4) {
            word.copy_from_slice(&RV_NOP[..word.len()]);
        }

        let mut dev = Device {
            id: id.to_string(),
            layout,
            memory,
            pmp: PmpBank::new(),
            public_key: qsk.public(),
            attestation,
            trust: TrustStore::default(),
            boot_complete: false,
            issued_nonces: HashSet::new(),
            resident: None,
        };
        dev.reset()?;
        if dev.attestation != attestation {
            return Err(DeviceError::Image("ROM config read-back mismatch".into()));
        }
        Ok(dev)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.public_key
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn attestation_config(&self) -> &AttestationConfig {
        &self.attestation
    }

    pub fn trust_store(&self) -> &TrustStore {
        &self.trust
    }

    pub fn boot_complete(&self) -> bool {
        self.boot_complete
    }

    /// PMP CSRs are readable by machine-mode code.
    pub fn pmp(&self) -> &PmpBank {
        &self.pmp
    }

    /// Address range of the signing-key region in ROM.
    pub fn key_region(&self) -> (u32, u32) {
        (self.layout.qsk_region_base, self.layout.qsk_region_size)
    }

    /// Address and length of the trust-store text in ROM.
    pub fn trust_store_rom_range(&self) -> (u32, usize) {
        let len = self
            .rom_u32(ROM_TRUST_LEN_OFFSET)
            .expect("ROM header is mapped") as usize;
        (self.layout.rom_base + ROM_TRUST_OFFSET, len)
    }

    pub fn quote_buffer_addr(&self) -> u32 {
        self.layout.sram_base + QUOTE_BUFFER_OFFSET
    }

    pub fn reset(&mut self) -> Result<(), DeviceError> {
        self.reset_with(BootPolicy::Standard)
    }

    /// Power-on reset: PMP cleared (locks released), SRAM zeroed, then the
    /// ROM boot routine runs before any untrusted code.
    pub fn reset_with(&mut self, policy: BootPolicy) -> Result<(), DeviceError> {
        self.boot_complete = false;
        self.pmp.clear();
        for r in self.memory.regions_mut() {
            if r.kind == RegionKind::Sram {
                r.bytes.fill(0);
            }
        }
        self.rom_boot(policy)
    }

    fn rom_u32(&self, offset: u32) -> Result<u32, DeviceError> {
        let b = self.memory.slice(self.layout.rom_base + offset, 4)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    fn rom_boot(&mut self, policy: BootPolicy) -> Result<(), DeviceError> {
        if policy == BootPolicy::Standard {
            let addr_reg = napot_encode(
                self.layout.qsk_region_base,
                u64::from(self.layout.qsk_region_size),
            )
            .ok_or_else(|| DeviceError::Image("key region is not NAPOT-encodable".into()))?;
            self.pmp
                .configure(QSK_PMP_INDEX, PmpConfig::locked_execute_only(), addr_reg)?;
        }
        self.attestation = AttestationConfig::new(
            self.rom_u32(ROM_CONFIG_OFFSET)?,
            self.rom_u32(ROM_CONFIG_OFFSET + 4)?,
            self.rom_u32(ROM_CONFIG_OFFSET + 8)?,
        )?;
        let (addr, len) = self.trust_store_rom_range();
        let text = std::str::from_utf8(self.memory.slice(addr, len)?)
            .map_err(|_| DeviceError::Image("trust store is not UTF-8".into()))?;
        self.trust =
            TrustStore::parse(text).map_err(|e| DeviceError::Image(format!("trust store: {e}")))?;
        self.boot_complete = true;
        Ok(())
    }

    pub fn pmp_check(&self, access: Access, addr: u32, ctx: ExecutionContext) -> Verdict {
        self.pmp.check(access, addr, ctx)
    }

    /// Machine-mode write to a pmpcfg/pmpaddr pair.
    pub fn pmp_configure(
        &mut self,
        index: usize,
        config: PmpConfig,
        addr_reg: u32,
    ) -> Result<(), DeviceError> {
        Ok(self.pmp.configure(index, config, addr_reg)?)
    }

    fn check_each(
        &self,
        access: Access,
        addr: u32,
        len: usize,
        ctx: ExecutionContext,
    ) -> Result<(), DeviceError> {
        let region = self.memory.region_at(addr, len)?;
        if access == Access::Write && region.kind == RegionKind::Rom {
            return Err(DeviceError::AccessFault(addr));
        }
        for a in (0..len as u32).map(|i| addr + i) {
            if self.pmp.check(access, a, ctx) == Verdict::Deny {
                return Err(DeviceError::AccessFault(a));
            }
        }
        Ok(())
    }

    /// PMP-checked load of `len` bytes from a single region.
    pub fn mem_read(
        &self,
        addr: u32,
        len: usize,
        ctx: ExecutionContext,
    ) -> Result<Vec<u8>, DeviceError> {
        self.check_each(Access::Read, addr, len, ctx)?;
        Ok(self.memory.slice(addr, len)?.to_vec())
    }

    /// PMP-checked store into a single region. ROM rejects all writes.
    pub fn mem_write(
        &mut self,
        addr: u32,
        data: &[u8],
        ctx: ExecutionContext,
    ) -> Result<(), DeviceError> {
        self.check_each(Access::Write, addr, data.len(), ctx)?;
        self.memory
            .slice_mut(addr, data.len())?
            .copy_from_slice(data);
        Ok(())
    }

    /// View of the device as seen by untrusted machine-mode code.
    pub fn untrusted(&mut self) -> Untrusted<'_> {
        Untrusted { dev: self }
    }

    /// Installs code that persists in untrusted memory across agent runs.
    pub fn install_resident(&mut self, hook: ResidentHook) {
        self.resident = Some(hook);
    }

    /// ROM CRTM over the range configured in ROM.
    pub fn crtm_measure(&self) -> Result<Measurement, DeviceError> {
        self.crtm_measure_with_stats().map(|(m, _)| m)
    }

    pub fn crtm_measure_with_stats(&self) -> Result<(Measurement, MeasureStats), DeviceError> {
        if !self.boot_complete {
            return Err(DeviceError::NotBooted);
        }
        Ok(crtm::measure_with_stats(&self.memory, &self.attestation)?)
    }

    /// Runs `f` with the signing key, inside the execute-only gate.
    pub(crate) fn with_gated_key<R>(
        &self,
        f: impl FnOnce(&SigningKey) -> R,
    ) -> Result<R, QuoteError> {
        if !self.boot_complete {
            return Err(QuoteError::NotBooted);
        }
        let base = self.layout.qsk_region_base;
        let ctx = ExecutionContext::UntrustedM;
        let x_only = (base..base + SEED_LEN as u32).all(|a| {
            self.pmp.check(Access::Execute, a, ctx) == Verdict::Allow
                && self.pmp.check(Access::Read, a, ctx) == Verdict::Deny
        });
        if !x_only {
            return Err(QuoteError::GateViolation);
        }
        let mut seed = Zeroizing::new([0u8; SEED_LEN]);
        seed.copy_from_slice(
            self.memory
                .slice(base, SEED_LEN)
                .map_err(|_| QuoteError::GateViolation)?,
        );
        // SigningKey wipes itself on drop.
        let sk = SigningKey::from_bytes(&seed);
        Ok(f(&sk))
    }

    /// Draws a nonce, refusing any value this device has issued before.
    pub fn issue_nonce(&mut self, rng: &mut dyn CryptoRngCore) -> Result<[u8; 32], DeviceError> {
        let mut n = [0u8; 32];
        rng.fill_bytes(&mut n);
        if !self.issued_nonces.insert(n) {
            return Err(DeviceError::NonceReuse);
        }
        Ok(n)
    }

    pub fn issued_nonce_count(&self) -> usize {
        self.issued_nonces.len()
    }

    /// Attestation-agent step: place the quote in SRAM, let resident code
    /// run, then read back whatever is there for transmission.
    pub(crate) fn agent_stage_quote(
        &mut self,
        quote: &[u8; QUOTE_WIRE_LEN],
    ) -> Result<[u8; QUOTE_WIRE_LEN], DeviceError> {
        let addr = self.quote_buffer_addr();
        self.untrusted().write(addr, quote)?;
        if let Some(mut hook) = self.resident.take() {
            hook(
                AgentEvent::QuoteStaged {
                    addr,
                    len: QUOTE_WIRE_LEN,
                },
                &mut self.untrusted(),
            );
            self.resident = Some(hook);
        }
        let staged = self.untrusted().read(addr, QUOTE_WIRE_LEN)?;
        Ok(staged.try_into().expect("quote buffer length"))
    }
}

/// Untrusted machine-mode code. Every memory touch is PMP-checked.
pub struct Untrusted<'a> {
    dev: &'a mut Device,
}

impl Untrusted<'_> {
    const CTX: ExecutionContext = ExecutionContext::UntrustedM;

    pub fn read(&self, addr: u32, len: usize) -> Result<Vec<u8>, DeviceError> {
        self.dev.mem_read(addr, len, Self::CTX)
    }

    pub fn write(&mut self, addr: u32, data: &[u8]) -> Result<(), DeviceError> {
        self.dev.mem_write(addr, data, Self::CTX)
    }

    pub fn pmp_configure(
        &mut self,
        index: usize,
        config: PmpConfig,
        addr_reg: u32,
    ) -> Result<(), DeviceError> {
        self.dev.pmp_configure(index, config, addr_reg)
    }

    pub fn pmp_check(&self, access: Access, addr: u32) -> Verdict {
        self.dev.pmp_check(access, addr, Self::CTX)
    }

    pub fn pmp(&self) -> &PmpBank {
        self.dev.pmp()
    }

    pub fn layout(&self) -> MemoryLayout {
        *self.dev.layout()
    }
}
