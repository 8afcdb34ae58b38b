// Licensed under the Apache-2.0 license

//! Flat physical memory map of the simulated device.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("address range {addr:#010x}+{len} is not mapped by a single region")]
    OutOfRange { addr: u32, len: usize },
    #[error("regions at {0:#010x} and {1:#010x} overlap or are unsorted")]
    Overlap(u32, u32),
    #[error("region at {0:#010x} extends past the 32-bit address space")]
    Wraps(u32),
    #[error("invalid layout: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Rom,
    Flash,
    Sram,
}

#[derive(Clone, PartialEq, Eq)]
pub struct MemoryRegion {
    pub base: u32,
    pub kind: RegionKind,
    pub bytes: Vec<u8>,
}

impl MemoryRegion {
    pub fn new(base: u32, kind: RegionKind, bytes: Vec<u8>) -> Self {
        MemoryRegion { base, kind, bytes }
    }

    /// Exclusive end address as a 64-bit value.
    pub fn end(&self) -> u64 {
        u64::from(self.base) + self.bytes.len() as u64
    }

    pub fn contains(&self, addr: u32, len: usize) -> bool {
        let addr = u64::from(addr);
        addr >= u64::from(self.base) && addr + len as u64 <= self.end()
    }
}

// Region contents are deliberately not printed: ROM holds key material.
impl std::fmt::Debug for MemoryRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryRegion")
            .field("base", &format_args!("{:#010x}", self.base))
            .field("kind", &self.kind)
            .field("len", &self.bytes.len())
            .finish()
    }
}

/// Non-overlapping regions sorted by base address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryImage {
    regions: Vec<MemoryRegion>,
}

impl MemoryImage {
    pub fn new(mut regions: Vec<MemoryRegion>) -> Result<Self, MemoryError> {
        regions.sort_by_key(|r| r.base);
        for r in &regions {
            if r.end() > 1u64 << 32 {
                return Err(MemoryError::Wraps(r.base));
            }
        }
        for pair in regions.windows(2) {
            if pair[0].end() > u64::from(pair[1].base) {
                return Err(MemoryError::Overlap(pair[0].base, pair[1].base));
            }
        }
        Ok(MemoryImage { regions })
    }

    pub fn regions(&self) -> &[MemoryRegion] {
        &self.regions
    }

    fn region_index(&self, addr: u32, len: usize) -> Result<usize, MemoryError> {
        self.regions
            .iter()
            .position(|r| r.contains(addr, len))
            .ok_or(MemoryError::OutOfRange { addr, len })
    }

    pub fn region_at(&self, addr: u32, len: usize) -> Result<&MemoryRegion, MemoryError> {
        self.region_index(addr, len).map(|i| &self.regions[i])
    }

    /// Borrow `len` bytes at `addr` without any access control. Used by the
    /// trusted ROM routines and by verifier-side tooling.
    pub fn slice(&self, addr: u32, len: usize) -> Result<&[u8], MemoryError> {
        let r = self.region_at(addr, len)?;
        let off = (addr - r.base) as usize;
        Ok(&r.bytes[off..off + len])
    }

    pub(crate) fn slice_mut(&mut self, addr: u32, len: usize) -> Result<&mut [u8], MemoryError> {
        let i = self.region_index(addr, len)?;
        let r = &mut self.regions[i];
        let off = (addr - r.base) as usize;
        Ok(&mut r.bytes[off..off + len])
    }

    pub(crate) fn regions_mut(&mut self) -> &mut [MemoryRegion] {
        &mut self.regions
    }
}

/// Region placement for a device. Defaults follow a small RV32 MCU with
/// 16 KB of mask ROM, 4 MB of SPI flash and 16 KB of SRAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryLayout {
    pub rom_base: u32,
    pub rom_size: u32,
    pub flash_base: u32,
    pub flash_size: u32,
    pub sram_base: u32,
    pub sram_size: u32,
    /// Base of the execute-only signing-key region inside ROM.
    pub qsk_region_base: u32,
    /// Size of the signing-key region; a power of two, at least 64 bytes.
    pub qsk_region_size: u32,
}

pub const DEFAULT_FLASH_SIZE: u32 = 4 * 1024 * 1024;

impl Default for MemoryLayout {
    fn default() -> Self {
        MemoryLayout {
            rom_base: 0x0000_1000,
            rom_size: 16 * 1024,
            flash_base: 0x2000_0000,
            flash_size: DEFAULT_FLASH_SIZE,
            sram_base: 0x8000_0000,
            sram_size: 16 * 1024,
            qsk_region_base: 0x0000_4F00,
            qsk_region_size: 256,
        }
    }
}

impl MemoryLayout {
    pub fn with_flash_size(mut self, size: u32) -> Self {
        self.flash_size = size;
        self
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        let bad = |m: &str| Err(MemoryError::Layout(m.to_string()));
        if self.rom_size == 0 || self.flash_size == 0 || self.sram_size < 1024 {
            return bad("region sizes must be non-zero and SRAM at least 1 KB");
        }
        let size = u64::from(self.qsk_region_size);
        if size < 64 || !size.is_power_of_two() || u64::from(self.qsk_region_base) % size != 0 {
            return bad("key region must be a naturally aligned power of two of at least 64 bytes");
        }
        let rom_end = u64::from(self.rom_base) + u64::from(self.rom_size);
        let key_end = u64::from(self.qsk_region_base) + size;
        if self.qsk_region_base < self.rom_base || key_end > rom_end {
            return bad("key region must lie inside ROM");
        }
        if u64::from(self.qsk_region_base - self.rom_base) < crate::device::ROM_HEADER_LEN as u64 {
            return bad("key region overlaps the ROM header");
        }
        Ok(())
    }

    /// Builds an empty image: zeroed ROM and SRAM, erased (0xFF) flash.
    pub fn blank_image(&self) -> Result<MemoryImage, MemoryError> {
        self.validate()?;
        MemoryImage::new(vec![
            MemoryRegion::new(
                self.rom_base,
                RegionKind::Rom,
                vec![0; self.rom_size as usize],
            ),
            MemoryRegion::new(
                self.flash_base,
                RegionKind::Flash,
                vec![0xFF; self.flash_size as usize],
            ),
            MemoryRegion::new(
                self.sram_base,
                RegionKind::Sram,
                vec![0; self.sram_size as usize],
            ),
        ])
    }
}
