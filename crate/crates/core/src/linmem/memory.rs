//! Guest linear memory and the fixed region layout every scenario shares.

use super::MemError;

pub const PAGE_SIZE: u32 = 65_536;
pub const DEFAULT_PAGES: u32 = 2;

/// Magic prefix of a serialized memory dump.
pub const DUMP_MAGIC: &[u8; 6] = b"LMLAB1";
pub const DUMP_VERSION: u16 = 1;
pub const DUMP_HEADER_LEN: usize = 16;

/// Byte-addressable view over a guest memory.
///
/// Implemented for the owned [`LinearMemory`] used by the simulator and for
/// a bare `[u8]`, which is what a WebAssembly runtime hands to host imports.
/// Every access is bounds checked against the current size; nothing wraps.
pub trait GuestMemory {
    fn bytes(&self) -> &[u8];
    fn bytes_mut(&mut self) -> &mut [u8];

    fn size(&self) -> u32 {
        self.bytes().len() as u32
    }

    fn check_range(&self, addr: u32, len: u64) -> Result<std::ops::Range<usize>, MemError> {
        let end = addr as u64 + len;
        if end > self.size() as u64 {
            return Err(MemError::OutOfBounds {
                addr,
                len,
                size: self.size(),
            });
        }
        Ok(addr as usize..end as usize)
    }

    fn read(&self, addr: u32, len: u32) -> Result<&[u8], MemError> {
        let range = self.check_range(addr, len as u64)?;
        Ok(&self.bytes()[range])
    }

    fn write(&mut self, addr: u32, data: &[u8]) -> Result<(), MemError> {
        let range = self.check_range(addr, data.len() as u64)?;
        self.bytes_mut()[range].copy_from_slice(data);
        Ok(())
    }

    fn fill(&mut self, addr: u32, len: u32, byte: u8) -> Result<(), MemError> {
        let range = self.check_range(addr, len as u64)?;
        self.bytes_mut()[range].fill(byte);
        Ok(())
    }

    fn read_u32(&self, addr: u32) -> Result<u32, MemError> {
        let raw = self.read(addr, 4)?;
        Ok(u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]))
    }

    fn write_u32(&mut self, addr: u32, value: u32) -> Result<(), MemError> {
        self.write(addr, &value.to_le_bytes())
    }

    /// Bytes from `addr` up to (not including) the first NUL, scanning at
    /// most `max` bytes.
    fn read_cstring_bytes(&self, addr: u32, max: u32) -> Result<&[u8], MemError> {
        let size = self.size();
        if addr > size {
            return Err(MemError::OutOfBounds {
                addr,
                len: 0,
                size,
            });
        }
        let avail = (size - addr).min(max) as usize;
        let window = &self.bytes()[addr as usize..addr as usize + avail];
        match window.iter().position(|&b| b == 0) {
            Some(n) => Ok(&window[..n]),
            // Ran into the end of memory before the scan limit.
            None if avail < max as usize => Err(MemError::OutOfBounds {
                addr,
                len: max as u64,
                size,
            }),
            None => Err(MemError::NoNul { addr, max }),
        }
    }

    /// NUL-terminated string at `addr`, one char per byte.
    fn read_cstring(&self, addr: u32, max: u32) -> Result<String, MemError> {
        self.read_cstring_bytes(addr, max).map(latin1)
    }

    /// `strnlen`-style read of a fixed-size field: stops at the first NUL or
    /// after `cap` bytes, whichever comes first. Never fails on a missing NUL.
    fn read_field(&self, addr: u32, cap: u32) -> Result<String, MemError> {
        let raw = self.read(addr, cap)?;
        let n = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
        Ok(latin1(&raw[..n]))
    }
}

impl GuestMemory for [u8] {
    fn bytes(&self) -> &[u8] {
        self
    }

    fn bytes_mut(&mut self) -> &mut [u8] {
        self
    }
}

/// Maps each byte to the char with the same code point.
pub fn latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| b as char).collect()
}

/// Inverse of [`latin1`]; chars above U+00FF are replaced by `?`.
pub fn latin1_bytes(text: &str) -> Vec<u8> {
    text.chars()
        .map(|c| u8::try_from(c as u32).unwrap_or(b'?'))
        .collect()
}

/// Owned guest memory: a whole number of 64 KiB pages, zero initialised.
#[derive(Clone, PartialEq, Eq)]
pub struct LinearMemory {
    bytes: Vec<u8>,
}

impl Default for LinearMemory {
    fn default() -> Self {
        Self::new(DEFAULT_PAGES)
    }
}

impl std::fmt::Debug for LinearMemory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearMemory")
            .field("size", &self.size())
            .finish_non_exhaustive()
    }
}

impl LinearMemory {
    pub fn new(pages: u32) -> Self {
        Self {
            bytes: vec![0; (pages * PAGE_SIZE) as usize],
        }
    }

    /// Wraps an existing byte image. Its length must be a page multiple.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, MemError> {
        if bytes.is_empty() || bytes.len() % PAGE_SIZE as usize != 0 || bytes.len() > u32::MAX as usize {
            return Err(MemError::BadDump(format!(
                "memory size {} is not a non-zero multiple of {PAGE_SIZE}",
                bytes.len()
            )));
        }
        Ok(Self { bytes })
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Raw dump: 16-byte header (`LMLAB1`, version u16, size u32, trailer
    /// length u32, all little endian) followed by the memory bytes and an
    /// optional opaque trailer.
    pub fn dump_with_trailer(&self, trailer: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(DUMP_HEADER_LEN + self.bytes.len() + trailer.len());
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.extend_from_slice(&self.size().to_le_bytes());
        out.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out.extend_from_slice(trailer);
        out
    }

    pub fn dump(&self) -> Vec<u8> {
        self.dump_with_trailer(&[])
    }

    /// Parses a dump produced by [`LinearMemory::dump_with_trailer`],
    /// returning the memory and the trailer bytes.
    pub fn parse_dump(raw: &[u8]) -> Result<(Self, &[u8]), MemError> {
        if raw.len() < DUMP_HEADER_LEN || &raw[..6] != DUMP_MAGIC {
            return Err(MemError::BadDump("missing LMLAB1 header".into()));
        }
        let version = u16::from_le_bytes([raw[6], raw[7]]);
        if version != DUMP_VERSION {
            return Err(MemError::BadDump(format!("unsupported dump version {version}")));
        }
        let size = u32::from_le_bytes(raw[8..12].try_into().unwrap()) as usize;
        let trailer_len = u32::from_le_bytes(raw[12..16].try_into().unwrap()) as usize;
        if raw.len() != DUMP_HEADER_LEN + size + trailer_len {
            return Err(MemError::BadDump(format!(
                "dump length {} does not match header (size {size}, trailer {trailer_len})",
                raw.len()
            )));
        }
        let body = raw[DUMP_HEADER_LEN..DUMP_HEADER_LEN + size].to_vec();
        Ok((Self::from_bytes(body)?, &raw[DUMP_HEADER_LEN + size..]))
    }
}

impl GuestMemory for LinearMemory {
    fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }
}

/// Fixed address layout of a guest. Ordered `static < stack < heap`; the
/// stack grows down from `stack_top` towards `stack_limit`.
///
/// The top of memory (`input_base..`) is a host-owned staging window where
/// request bodies are marshaled before a guest export is called; the heap
/// never hands out addresses there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionMap {
    pub static_base: u32,
    pub static_end: u32,
    pub stack_top: u32,
    pub stack_limit: u32,
    pub heap_base: u32,
    pub heap_limit: u32,
    pub input_base: u32,
}

impl RegionMap {
    pub const DEFAULT: RegionMap = RegionMap {
        static_base: 0x1000,
        static_end: 0x2000,
        stack_top: 0x8000,
        stack_limit: 0x2000,
        heap_base: 0x8000,
        heap_limit: 0x1E000,
        input_base: 0x1E000,
    };

    /// Bytes available in the input staging window for a memory of `size`.
    pub fn input_capacity(&self, size: u32) -> u32 {
        size.saturating_sub(self.input_base)
    }
}

impl Default for RegionMap {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_length_read_is_empty() {
        let mem = LinearMemory::default();
        assert!(mem.read(0x1000, 0).unwrap().is_empty());
    }

    #[test]
    fn last_word_is_readable_and_one_past_is_not() {
        let mut mem = LinearMemory::default();
        let size = mem.size();
        assert_eq!(size, 131_072);
        mem.write(size - 4, b"WXYZ").unwrap();
        assert_eq!(mem.read(size - 4, 4).unwrap(), b"WXYZ");
        assert!(matches!(mem.read(size - 3, 4), Err(MemError::OutOfBounds { .. })));
    }

    #[test]
    fn write_round_trips_and_ignores_regions() {
        let mut mem = LinearMemory::default();
        mem.write(0x1000, b"AB").unwrap();
        assert_eq!(mem.read(0x1000, 2).unwrap(), b"AB");
        let regions = RegionMap::DEFAULT;
        mem.write(regions.static_end - 1, b"Z").unwrap();
        let size = mem.size();
        assert!(matches!(mem.write(size, b"A"), Err(MemError::OutOfBounds { .. })));
    }

    #[test]
    fn huge_lengths_do_not_wrap() {
        let mem = LinearMemory::default();
        assert!(mem.read(u32::MAX, u32::MAX).is_err());
        assert!(mem.read(1, u32::MAX).is_err());
    }

    #[test]
    fn cstrings() {
        let mut mem = LinearMemory::default();
        mem.write(0x1040, b"SELECT 1\0").unwrap();
        assert_eq!(mem.read_cstring(0x1040, 64).unwrap(), "SELECT 1");
        assert_eq!(mem.read_cstring(0x1100, 64).unwrap(), "");
        mem.write(0x1200, &[b'A'; 64]).unwrap();
        assert!(matches!(mem.read_cstring(0x1200, 64), Err(MemError::NoNul { .. })));
        let size = mem.size();
        mem.write(size - 2, b"QQ").unwrap();
        assert!(matches!(mem.read_cstring(size - 2, 64), Err(MemError::OutOfBounds { .. })));
        assert!(mem.read_cstring(size + 1, 4).is_err());
    }

    #[test]
    fn field_reads_stop_at_capacity() {
        let mut mem = LinearMemory::default();
        mem.write(0x1100, &[b'x'; 40]).unwrap();
        assert_eq!(mem.read_field(0x1100, 32).unwrap().len(), 32);
    }

    #[test]
    fn dump_round_trip_and_rejects_garbage() {
        let mut mem = LinearMemory::default();
        mem.write(0x1234, b"hello").unwrap();
        let dump = mem.dump_with_trailer(b"meta");
        assert_eq!(&dump[..6], b"LMLAB1");
        assert_eq!(dump.len(), 16 + 131_072 + 4);
        let (back, trailer) = LinearMemory::parse_dump(&dump).unwrap();
        assert_eq!(back, mem);
        assert_eq!(trailer, b"meta");
        assert!(LinearMemory::parse_dump(&dump[..100]).is_err());
        assert!(LinearMemory::parse_dump(b"NOTLAB").is_err());
    }

    #[test]
    fn page_multiple_required() {
        assert!(LinearMemory::from_bytes(vec![0; 100]).is_err());
        assert!(LinearMemory::from_bytes(vec![0; 65_536]).is_ok());
    }

    #[test]
    fn slices_are_guest_memory() {
        let mut raw = vec![0u8; 16];
        let view: &mut [u8] = &mut raw;
        view.write_u32(4, 0xdead_beef).unwrap();
        assert_eq!(view.read_u32(4).unwrap(), 0xdead_beef);
        assert!(view.write_u32(14, 1).is_err());
    }

    #[test]
    fn layout_is_ordered() {
        let r = RegionMap::DEFAULT;
        assert!(r.static_base < r.static_end);
        assert!(r.static_end <= r.stack_limit && r.stack_limit < r.stack_top);
        assert!(r.stack_top <= r.heap_base && r.heap_base < r.heap_limit);
        assert_eq!(r.input_capacity(131_072), 8192);
    }
}
