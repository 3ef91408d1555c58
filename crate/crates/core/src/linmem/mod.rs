//! Guest linear memory and the unsafe libc-style primitives the scenarios
//! are built on: unchecked copies, a reuse-happy free-list allocator, stack
//! frames with optional canaries and a small `printf` with `%n`.

mod alloc;
mod format;
mod frame;
mod memory;

pub use alloc::{AllocatorState, Chunk, QUARANTINE_ALLOCATIONS, REUSE_TOLERANCE};
pub use format::{mini_printf, parse_format, FormatItem, FormatProgram, SpecKind, PRINTF_STRING_MAX};
pub use frame::{canary_value, check_canary, place_canary, Local, LocalDecl, StackFrame};
pub use memory::{
    latin1, latin1_bytes, GuestMemory, LinearMemory, RegionMap, DEFAULT_PAGES, DUMP_HEADER_LEN, DUMP_MAGIC,
    DUMP_VERSION, PAGE_SIZE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("EOOB: access of {len} bytes at {addr:#x} exceeds memory size {size:#x}")]
    OutOfBounds { addr: u32, len: u64, size: u32 },
    #[error("ENONUL: no NUL terminator within {max} bytes of {addr:#x}")]
    NoNul { addr: u32, max: u32 },
    #[error("EHEAPFULL: cannot allocate {requested} bytes")]
    HeapFull { requested: u32 },
    #[error("EDOUBLEFREE: {addr:#x} is not a live allocation")]
    DoubleFree { addr: u32 },
    #[error("EINVAL: zero-sized allocation")]
    ZeroAlloc,
    #[error("EBADFMT: unknown conversion {spec:?} at offset {offset}")]
    BadFormat { offset: usize, spec: Option<char> },
    #[error("EARGS: conversion #{index} has no matching argument")]
    ArgsExhausted { index: u32 },
    #[error("ECANARY: stack guard of frame at {frame_base:#x} was overwritten")]
    CanaryClobbered { frame_base: u32 },
    #[error("EDUMP: {0}")]
    BadDump(String),
}

impl MemError {
    pub fn code(&self) -> &'static str {
        match self {
            MemError::OutOfBounds { .. } => "EOOB",
            MemError::NoNul { .. } => "ENONUL",
            MemError::HeapFull { .. } => "EHEAPFULL",
            MemError::DoubleFree { .. } => "EDOUBLEFREE",
            MemError::ZeroAlloc => "EINVAL",
            MemError::BadFormat { .. } => "EBADFMT",
            MemError::ArgsExhausted { .. } => "EARGS",
            MemError::CanaryClobbered { .. } => "ECANARY",
            MemError::BadDump(_) => "EDUMP",
        }
    }
}

/// Compiler/runtime hardening switches. All off is the vulnerable build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HardeningConfig {
    pub canaries: bool,
    pub checked_copy: bool,
    pub quarantine_and_zero: bool,
    pub template_integrity: bool,
    pub boundary_validation: bool,
}

impl HardeningConfig {
    pub const FLAG_NAMES: [&'static str; 5] = [
        "canaries",
        "checked_copy",
        "quarantine_and_zero",
        "template_integrity",
        "boundary_validation",
    ];

    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self::from_bits(0b11111)
    }

    pub fn any(&self) -> bool {
        self.bits() != 0
    }

    pub fn bits(&self) -> u32 {
        self.canaries as u32
            | (self.checked_copy as u32) << 1
            | (self.quarantine_and_zero as u32) << 2
            | (self.template_integrity as u32) << 3
            | (self.boundary_validation as u32) << 4
    }

    pub fn from_bits(bits: u32) -> Self {
        Self {
            canaries: bits & 1 != 0,
            checked_copy: bits & 2 != 0,
            quarantine_and_zero: bits & 4 != 0,
            template_integrity: bits & 8 != 0,
            boundary_validation: bits & 16 != 0,
        }
    }

    /// Sets one flag by name. Accepts the short aliases `quarantine`,
    /// `integrity` and `boundary`.
    pub fn enable(&mut self, name: &str) -> Result<(), String> {
        match name.trim() {
            "canaries" | "canary" => self.canaries = true,
            "checked_copy" | "checked-copy" => self.checked_copy = true,
            "quarantine_and_zero" | "quarantine" => self.quarantine_and_zero = true,
            "template_integrity" | "integrity" => self.template_integrity = true,
            "boundary_validation" | "boundary" => self.boundary_validation = true,
            other => return Err(format!("unknown hardening flag `{other}`")),
        }
        Ok(())
    }

    /// Comma-separated flag list; empty, `none` and `all` are accepted.
    pub fn parse_list(list: &str) -> Result<Self, String> {
        let mut cfg = Self::none();
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "none" => {}
                "all" => cfg = Self::all(),
                flag => cfg.enable(flag)?,
            }
        }
        Ok(cfg)
    }

    pub fn names(&self) -> Vec<&'static str> {
        Self::FLAG_NAMES
            .iter()
            .enumerate()
            .filter(|(i, _)| self.bits() & (1 << i) != 0)
            .map(|(_, n)| *n)
            .collect()
    }
}

impl std::fmt::Display for HardeningConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names = self.names();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

/// Result of a bounds-respecting copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckedCopy {
    pub written: u32,
    pub truncated: bool,
}

/// `strcpy`-grade copy: writes all of `src` at `dst` no matter how small the
/// destination buffer was declared. Only the end of linear memory stops it,
/// and then nothing is written at all.
pub fn memcpy_unchecked<M: GuestMemory + ?Sized>(
    mem: &mut M,
    dst: u32,
    src: &[u8],
    _declared_capacity: u32,
) -> Result<u32, MemError> {
    mem.write(dst, src)?;
    Ok(src.len() as u32)
}

/// Copy clipped to `declared_capacity` bytes.
pub fn memcpy_checked<M: GuestMemory + ?Sized>(
    mem: &mut M,
    dst: u32,
    src: &[u8],
    declared_capacity: u32,
) -> Result<CheckedCopy, MemError> {
    let n = src.len().min(declared_capacity as usize);
    mem.write(dst, &src[..n])?;
    Ok(CheckedCopy {
        written: n as u32,
        truncated: n < src.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn overflow_clobbers_the_adjacent_local() {
        let mut mem = LinearMemory::default();
        let buf = 0x7f00;
        mem.write(buf + 32, b"SELECT name FROM users WHERE id = ?\0").unwrap();
        let mut payload = vec![b'A'; 32];
        payload.extend_from_slice(b"SELECT 1\0");
        assert_eq!(memcpy_unchecked(&mut mem, buf, &payload, 32).unwrap(), 41);
        assert_eq!(mem.read_cstring(buf + 32, 64).unwrap(), "SELECT 1");
    }

    #[test]
    fn forty_bytes_into_thirty_two() {
        let mut mem = LinearMemory::default();
        let f = 0x3000;
        memcpy_unchecked(&mut mem, f, &[b'B'; 40], 32).unwrap();
        assert_eq!(mem.read(f + 32, 8).unwrap(), &[b'B'; 8]);

        let mut mem = LinearMemory::default();
        let out = memcpy_checked(&mut mem, f, &[b'B'; 40], 32).unwrap();
        assert_eq!(out, CheckedCopy { written: 32, truncated: true });
        assert_eq!(mem.read(f + 32, 8).unwrap(), &[0; 8]);
        let out = memcpy_checked(&mut mem, f, &[b'C'; 8], 32).unwrap();
        assert_eq!(out, CheckedCopy { written: 8, truncated: false });
    }

    #[test]
    fn short_input_leaves_neighbours_alone() {
        let mut mem = LinearMemory::default();
        mem.write(0x3020, b"keep").unwrap();
        memcpy_unchecked(&mut mem, 0x3000, b"short", 32).unwrap();
        assert_eq!(mem.read(0x3020, 4).unwrap(), b"keep");
    }

    #[test]
    fn copy_past_memory_end_writes_nothing() {
        let mut mem = LinearMemory::default();
        let size = mem.size();
        let before = mem.clone();
        assert!(memcpy_unchecked(&mut mem, size - 4, &[1; 8], 4).is_err());
        assert_eq!(mem, before);
    }

    #[test]
    fn hardening_names_round_trip() {
        let cfg = HardeningConfig::parse_list("canaries, integrity").unwrap();
        assert!(cfg.canaries && cfg.template_integrity && !cfg.checked_copy);
        assert_eq!(cfg.to_string(), "canaries,template_integrity");
        assert_eq!(HardeningConfig::from_bits(cfg.bits()), cfg);
        assert_eq!(HardeningConfig::parse_list("").unwrap(), HardeningConfig::none());
        assert_eq!(HardeningConfig::parse_list("all").unwrap().bits(), 0b11111);
        assert!(HardeningConfig::parse_list("aslr").is_err());
        assert!(!HardeningConfig::default().any());
    }

    proptest! {
        #[test]
        fn checked_copy_stays_inside_capacity(
            cap in 0u32..96,
            len in 0usize..200,
            dst in 0x2000u32..0x7000,
        ) {
            let mut mem = LinearMemory::default();
            let before = mem.clone();
            let src: Vec<u8> = (0..len).map(|i| (i as u8) | 0x80).collect();
            let out = memcpy_checked(&mut mem, dst, &src, cap).unwrap();
            prop_assert_eq!(out.written as usize, len.min(cap as usize));
            for (i, (a, b)) in before.bytes().iter().zip(mem.bytes()).enumerate() {
                if a != b {
                    let i = i as u32;
                    prop_assert!(i >= dst && i < dst + cap, "byte {:#x} changed outside buffer", i);
                }
            }
        }

        #[test]
        fn unchecked_copy_writes_exactly_its_length(len in 0usize..300, dst in 0x2000u32..0x7000) {
            let mut mem = LinearMemory::default();
            let src = vec![0xAB; len];
            let n = memcpy_unchecked(&mut mem, dst, &src, 8).unwrap();
            prop_assert_eq!(n as usize, len);
            let changed: Vec<usize> = mem.bytes().iter().enumerate().filter(|(_, b)| **b != 0).map(|(i, _)| i).collect();
            prop_assert_eq!(changed.len(), len);
            if let (Some(first), Some(last)) = (changed.first(), changed.last()) {
                prop_assert_eq!(*first, dst as usize);
                prop_assert_eq!(*last, dst as usize + len - 1);
            }
        }
    }
}
