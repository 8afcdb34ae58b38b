// Licensed under the Apache-2.0 license

//! Physical Memory Protection register bank.
//!
//! Models the eight `pmpcfg`/`pmpaddr` pairs of a small RV32 core. Only
//! machine mode exists on the simulated device, so an entry constrains an
//! access only when its lock bit is set; unlocked entries and unmatched
//! addresses are always permitted.

use std::fmt;

use thiserror::Error;

/// Number of PMP entries implemented by the device.
pub const PMP_ENTRIES: usize = 8;

const CFG_R: u8 = 1 << 0;
const CFG_W: u8 = 1 << 1;
const CFG_X: u8 = 1 << 2;
const CFG_A_SHIFT: u8 = 3;
const CFG_A_MASK: u8 = 0b11 << CFG_A_SHIFT;
const CFG_RESERVED: u8 = 0b0110_0000;
const CFG_L: u8 = 1 << 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PmpError {
    #[error("PMP entry {index} is locked until reset")]
    LockedEntry { index: usize },
    #[error("R=0, W=1 is a reserved PMP permission combination")]
    ReservedCombination,
    #[error("pmpcfg bits 5-6 must be zero (got {0:#04x})")]
    ReservedBits(u8),
    #[error("PMP index {0} out of range")]
    IndexOutOfRange(usize),
}

/// The `A` field of a pmpcfg byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddressMatching {
    Off = 0,
    /// Top of range: `[pmpaddr[i-1] << 2, pmpaddr[i] << 2)`.
    Tor = 1,
    /// Naturally aligned four-byte region.
    Na4 = 2,
    /// Naturally aligned power-of-two region, at least eight bytes.
    Napot = 3,
}

impl AddressMatching {
    fn from_bits(bits: u8) -> Self {
        match bits & 0b11 {
            0 => Self::Off,
            1 => Self::Tor,
            2 => Self::Na4,
            _ => Self::Napot,
        }
    }
}

/// One pmpcfg byte, decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PmpConfig {
    pub read: bool,
    pub write: bool,
    pub execute: bool,
    pub addr_mode: AddressMatching,
    pub lock: bool,
}

impl PmpConfig {
    pub const OFF: PmpConfig = PmpConfig {
        read: false,
        write: false,
        execute: false,
        addr_mode: AddressMatching::Off,
        lock: false,
    };

    /// Locked execute-only NAPOT entry, as installed by the boot ROM over the
    /// signing-key region.
    pub const fn locked_execute_only() -> Self {
        PmpConfig {
            read: false,
            write: false,
            execute: true,
            addr_mode: AddressMatching::Napot,
            lock: true,
        }
    }

    pub fn is_reserved(&self) -> bool {
        !self.read && self.write
    }

    pub fn to_byte(&self) -> u8 {
        let mut b = (self.addr_mode as u8) << CFG_A_SHIFT;
        if self.read {
            b |= CFG_R;
        }
        if self.write {
            b |= CFG_W;
        }
        if self.execute {
            b |= CFG_X;
        }
        if self.lock {
            b |= CFG_L;
        }
        b
    }

    pub fn from_byte(b: u8) -> Result<Self, PmpError> {
        if b & CFG_RESERVED != 0 {
            return Err(PmpError::ReservedBits(b));
        }
        let cfg = PmpConfig {
            read: b & CFG_R != 0,
            write: b & CFG_W != 0,
            execute: b & CFG_X != 0,
            addr_mode: AddressMatching::from_bits((b & CFG_A_MASK) >> CFG_A_SHIFT),
            lock: b & CFG_L != 0,
        };
        if cfg.is_reserved() {
            return Err(PmpError::ReservedCombination);
        }
        Ok(cfg)
    }

    fn permits(&self, access: Access) -> bool {
        match access {
            Access::Read => self.read,
            Access::Write => self.write,
            Access::Execute => self.execute,
        }
    }
}

impl Default for PmpConfig {
    fn default() -> Self {
        Self::OFF
    }
}

impl fmt::Display for PmpConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flag = |set, c| if set { c } else { '-' };
        write!(
            f,
            "{}{}{}{} {:?}",
            flag(self.lock, 'L'),
            flag(self.read, 'R'),
            flag(self.write, 'W'),
            flag(self.execute, 'X'),
            self.addr_mode
        )
    }
}

/// A pmpcfg/pmpaddr pair. `addr_reg` holds the physical address shifted
/// right by two, as in the privileged architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PmpEntry {
    pub config: PmpConfig,
    pub addr_reg: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
    Execute,
}

/// Who is performing an access. Both contexts run in machine mode; the
/// distinction only records whether the code is the trusted boot ROM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionContext {
    RomTrusted,
    UntrustedM,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Allow,
    Deny,
}

/// Inclusive byte-address interval matched by an entry. Bounds are 64-bit
/// because a NAPOT entry over the full `pmpaddr` width spans 2^35 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddrRange {
    pub lo: u64,
    pub hi: u64,
}

impl AddrRange {
    pub fn contains(&self, addr: u64) -> bool {
        self.lo <= addr && addr <= self.hi
    }

    pub fn len(&self) -> u64 {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Decodes a NAPOT `pmpaddr` value: `k` trailing ones select a region of
/// `2^(k+3)` bytes.
pub fn napot_range(addr_reg: u32) -> AddrRange {
    let k = addr_reg.trailing_ones();
    let size = 1u64 << (k + 3);
    let lo = (u64::from(addr_reg) << 2) & !(size - 1);
    AddrRange {
        lo,
        hi: lo + size - 1,
    }
}

/// Encodes a naturally aligned power-of-two region into a NAPOT `pmpaddr`
/// value. Returns `None` when `size` is not a power of two of at least eight
/// bytes or `base` is not aligned to it.
pub fn napot_encode(base: u32, size: u64) -> Option<u32> {
    if size < 8 || !size.is_power_of_two() || u64::from(base) % size != 0 {
        return None;
    }
    let ones = (size >> 3) - 1;
    u32::try_from((u64::from(base) >> 2) | ones).ok()
}

/// The eight-entry register bank.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PmpBank {
    entries: [PmpEntry; PMP_ENTRIES],
}

impl PmpBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[PmpEntry; PMP_ENTRIES] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Result<&PmpEntry, PmpError> {
        self.entries
            .get(index)
            .ok_or(PmpError::IndexOutOfRange(index))
    }

    /// Writes `(config, addr_reg)` into entry `index`.
    ///
    /// Writes to a locked entry, or to the entry below a locked TOR entry
    /// (whose lower bound it supplies), fail with [`PmpError::LockedEntry`]
    /// and leave the bank unchanged.
    pub fn configure(
        &mut self,
        index: usize,
        config: PmpConfig,
        addr_reg: u32,
    ) -> Result<(), PmpError> {
        if index >= PMP_ENTRIES {
            return Err(PmpError::IndexOutOfRange(index));
        }
        if config.is_reserved() {
            return Err(PmpError::ReservedCombination);
        }
        if self.entries[index].config.lock {
            return Err(PmpError::LockedEntry { index });
        }
        if let Some(above) = self.entries.get(index + 1) {
            if above.config.lock && above.config.addr_mode == AddressMatching::Tor {
                return Err(PmpError::LockedEntry { index });
            }
        }
        self.entries[index] = PmpEntry { config, addr_reg };
        Ok(())
    }

    /// Address interval matched by entry `index`, or `None` if the entry is
    /// off or is an empty TOR range.
    pub fn match_range(&self, index: usize) -> Result<Option<AddrRange>, PmpError> {
        let entry = self.entry(index)?;
        let reg = u64::from(entry.addr_reg);
        Ok(match entry.config.addr_mode {
            AddressMatching::Off => None,
            AddressMatching::Na4 => Some(AddrRange {
                lo: reg << 2,
                hi: (reg << 2) + 3,
            }),
            AddressMatching::Tor => {
                let prev = if index == 0 {
                    0
                } else {
                    u64::from(self.entries[index - 1].addr_reg)
                };
                (reg > prev).then(|| AddrRange {
                    lo: prev << 2,
                    hi: (reg << 2) - 1,
                })
            }
            AddressMatching::Napot => Some(napot_range(entry.addr_reg)),
        })
    }

    /// Index of the lowest-numbered entry whose range contains `addr`.
    pub fn matching_entry(&self, addr: u32) -> Option<usize> {
        (0..PMP_ENTRIES)
            .find(|&i| matches!(self.match_range(i), Ok(Some(r)) if r.contains(u64::from(addr))))
    }

    /// Checks a single-byte access. The lowest matching entry decides; in
    /// machine mode it only constrains the access when locked.
    pub fn check(&self, access: Access, addr: u32, _ctx: ExecutionContext) -> Verdict {
        match self.matching_entry(addr) {
            Some(i) => {
                let cfg = self.entries[i].config;
                if !cfg.lock || cfg.permits(access) {
                    Verdict::Allow
                } else {
                    Verdict::Deny
                }
            }
            None => Verdict::Allow,
        }
    }

    /// Clears every entry, releasing locks. Only reachable through device reset.
    pub(crate) fn clear(&mut self) {
        self.entries = [PmpEntry::default(); PMP_ENTRIES];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(r: bool, w: bool, x: bool, mode: AddressMatching, lock: bool) -> PmpConfig {
        PmpConfig {
            read: r,
            write: w,
            execute: x,
            addr_mode: mode,
            lock,
        }
    }

    #[test]
    fn locked_entry_rejects_rewrite() {
        let mut bank = PmpBank::new();
        let xo = PmpConfig::locked_execute_only();
        bank.configure(0, xo, 0x0800_0007).unwrap();
        let err = bank
            .configure(0, cfg(true, true, true, AddressMatching::Napot, false), 0)
            .unwrap_err();
        assert_eq!(err, PmpError::LockedEntry { index: 0 });
        assert_eq!(
            bank.entry(0).unwrap(),
            &PmpEntry {
                config: xo,
                addr_reg: 0x0800_0007
            }
        );
    }

    #[test]
    fn unlocked_entry_is_mutable() {
        let mut bank = PmpBank::new();
        let rw = cfg(true, true, false, AddressMatching::Tor, false);
        bank.configure(3, rw, 0x100).unwrap();
        bank.configure(3, rw, 0x200).unwrap();
        assert_eq!(bank.entry(3).unwrap().addr_reg, 0x200);
    }

    #[test]
    fn reserved_combination_rejected() {
        let mut bank = PmpBank::new();
        let err = bank
            .configure(1, cfg(false, true, false, AddressMatching::Napot, false), 0)
            .unwrap_err();
        assert_eq!(err, PmpError::ReservedCombination);
        assert_eq!(
            PmpConfig::from_byte(0b0000_0010),
            Err(PmpError::ReservedCombination)
        );
    }

    #[test]
    fn index_out_of_range() {
        let mut bank = PmpBank::new();
        assert_eq!(
            bank.configure(8, PmpConfig::OFF, 0),
            Err(PmpError::IndexOutOfRange(8))
        );
        assert!(bank.match_range(8).is_err());
    }

    #[test]
    fn locked_tor_guards_entry_below() {
        let mut bank = PmpBank::new();
        bank.configure(
            2,
            cfg(true, false, false, AddressMatching::Off, false),
            0x100,
        )
        .unwrap();
        bank.configure(
            3,
            cfg(true, false, false, AddressMatching::Tor, true),
            0x200,
        )
        .unwrap();
        assert_eq!(
            bank.configure(2, PmpConfig::OFF, 0x0),
            Err(PmpError::LockedEntry { index: 2 })
        );
        // The entry above a locked TOR entry is unaffected.
        bank.configure(4, PmpConfig::OFF, 0x0).unwrap();
    }

    #[test]
    fn napot_example_range() {
        let mut bank = PmpBank::new();
        let reg = (0x2000_0000u32 >> 2) | 0b0111;
        bank.configure(
            0,
            cfg(true, false, false, AddressMatching::Napot, false),
            reg,
        )
        .unwrap();
        assert_eq!(
            bank.match_range(0).unwrap(),
            Some(AddrRange {
                lo: 0x2000_0000,
                hi: 0x2000_003F
            })
        );
        assert_eq!(napot_encode(0x2000_0000, 64), Some(reg));
    }

    #[test]
    fn off_matches_nothing() {
        let mut bank = PmpBank::new();
        bank.configure(5, PmpConfig::OFF, 0xdead_beef).unwrap();
        assert_eq!(bank.match_range(5).unwrap(), None);
    }

    #[test]
    fn tor_at_index_zero_starts_at_zero() {
        let mut bank = PmpBank::new();
        bank.configure(
            0,
            cfg(true, false, false, AddressMatching::Tor, false),
            0x400,
        )
        .unwrap();
        assert_eq!(
            bank.match_range(0).unwrap(),
            Some(AddrRange { lo: 0, hi: 0xFFF })
        );
    }

    #[test]
    fn tor_with_non_increasing_bounds_is_empty() {
        let mut bank = PmpBank::new();
        bank.configure(0, PmpConfig::OFF, 0x400).unwrap();
        bank.configure(
            1,
            cfg(true, false, false, AddressMatching::Tor, true),
            0x400,
        )
        .unwrap();
        assert_eq!(bank.match_range(1).unwrap(), None);
        assert_eq!(
            bank.check(Access::Read, 0x0, ExecutionContext::UntrustedM),
            Verdict::Allow
        );
    }

    #[test]
    fn na4_covers_four_bytes() {
        let mut bank = PmpBank::new();
        bank.configure(
            0,
            cfg(false, false, false, AddressMatching::Na4, true),
            0x100,
        )
        .unwrap();
        assert_eq!(
            bank.match_range(0).unwrap(),
            Some(AddrRange {
                lo: 0x400,
                hi: 0x403
            })
        );
        let ctx = ExecutionContext::UntrustedM;
        assert_eq!(bank.check(Access::Read, 0x3FF, ctx), Verdict::Allow);
        assert_eq!(bank.check(Access::Read, 0x400, ctx), Verdict::Deny);
        assert_eq!(bank.check(Access::Read, 0x403, ctx), Verdict::Deny);
        assert_eq!(bank.check(Access::Read, 0x404, ctx), Verdict::Allow);
    }

    #[test]
    fn execute_only_locked_entry() {
        let mut bank = PmpBank::new();
        bank.configure(
            0,
            PmpConfig::locked_execute_only(),
            napot_encode(0x4F00, 256).unwrap(),
        )
        .unwrap();
        let ctx = ExecutionContext::UntrustedM;
        assert_eq!(bank.check(Access::Read, 0x4F10, ctx), Verdict::Deny);
        assert_eq!(bank.check(Access::Write, 0x4F10, ctx), Verdict::Deny);
        assert_eq!(bank.check(Access::Execute, 0x4F10, ctx), Verdict::Allow);
        // No entry covers this address: machine mode default is allow.
        assert_eq!(bank.check(Access::Write, 0x8000_0000, ctx), Verdict::Allow);
    }

    #[test]
    fn unlocked_entry_does_not_constrain_machine_mode() {
        let mut bank = PmpBank::new();
        bank.configure(
            0,
            cfg(false, false, false, AddressMatching::Napot, false),
            napot_encode(0, 64).unwrap(),
        )
        .unwrap();
        assert_eq!(
            bank.check(Access::Read, 8, ExecutionContext::UntrustedM),
            Verdict::Allow
        );
    }

    #[test]
    fn clear_releases_locks() {
        let mut bank = PmpBank::new();
        bank.configure(0, PmpConfig::locked_execute_only(), 7)
            .unwrap();
        bank.clear();
        bank.configure(0, PmpConfig::OFF, 0).unwrap();
    }

    fn any_config() -> impl Strategy<Value = PmpConfig> {
        (
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            0u8..4,
            any::<bool>(),
        )
            .prop_filter("reserved R/W", |(r, w, ..)| *r || !*w)
            .prop_map(|(r, w, x, a, l)| cfg(r, w, x, AddressMatching::from_bits(a), l))
    }

    proptest! {
        #[test]
        fn config_round_trips(c in any_config()) {
            prop_assert_eq!(PmpConfig::from_byte(c.to_byte()), Ok(c));
            prop_assert_eq!(c.to_byte() & CFG_RESERVED, 0);
        }

        #[test]
        fn byte_round_trips(b in any::<u8>()) {
            match PmpConfig::from_byte(b) {
                Ok(c) => prop_assert_eq!(c.to_byte(), b),
                Err(_) => prop_assert!(b & CFG_RESERVED != 0 || (b & CFG_R == 0 && b & CFG_W != 0)),
            }
        }

        #[test]
        fn locked_entries_never_change(
            ops in proptest::collection::vec((0usize..PMP_ENTRIES, any_config(), any::<u32>()), 1..64)
        ) {
            let mut bank = PmpBank::new();
            let mut frozen: [Option<PmpEntry>; PMP_ENTRIES] = [None; PMP_ENTRIES];
            for (i, c, a) in ops {
                let _ = bank.configure(i, c, a);
                for (j, slot) in frozen.iter_mut().enumerate() {
                    let e = *bank.entry(j).unwrap();
                    match slot {
                        Some(f) => prop_assert_eq!(*f, e),
                        None if e.config.lock => *slot = Some(e),
                        None => {}
                    }
                }
            }
        }
    }
}
