use crate::linmem::{
    canary_value, memcpy_checked, memcpy_unchecked, mini_printf, parse_format, AllocatorState, GuestMemory,
    HardeningConfig, MemError, PRINTF_STRING_MAX,
};

use super::layout::REGIONS;

/// Host-side half of the guest runtime: the unsafe libc every guest
/// imports. The simulator calls these directly; the WebAssembly backend
/// exposes them as imports of module `lab`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Libc {
    pub alloc: AllocatorState,
    pub hardening: HardeningConfig,
    /// Bytes emitted by `printf` since the host last drained them.
    pub output: Vec<u8>,
}

impl Libc {
    pub fn new(hardening: HardeningConfig) -> Self {
        Self {
            alloc: AllocatorState::new(&REGIONS, hardening),
            hardening,
            output: Vec::new(),
        }
    }

    /// `memcpy` from guest `src` to guest `dst` that ignores `cap`.
    pub fn memcpy_unchecked(&mut self, mem: &mut [u8], dst: u32, src: u32, len: u32, cap: u32) -> Result<u32, MemError> {
        let data = mem.read(src, len)?.to_vec();
        memcpy_unchecked(mem, dst, &data, cap)
    }

    /// `memcpy` clipped to `cap` bytes.
    pub fn memcpy_checked(&mut self, mem: &mut [u8], dst: u32, src: u32, len: u32, cap: u32) -> Result<u32, MemError> {
        let data = mem.read(src, len)?.to_vec();
        memcpy_checked(mem, dst, &data, cap).map(|c| c.written)
    }

    /// The copy a guest gets for "copy into a fixed buffer": unchecked
    /// unless the build enables checked copies.
    pub fn memcpy_buffer(&mut self, mem: &mut [u8], dst: u32, src: u32, len: u32, cap: u32) -> Result<u32, MemError> {
        if self.hardening.checked_copy {
            self.memcpy_checked(mem, dst, src, len, cap)
        } else {
            self.memcpy_unchecked(mem, dst, src, len, cap)
        }
    }

    pub fn malloc(&mut self, mem: &mut [u8], n: u32) -> Result<u32, MemError> {
        self.alloc.malloc(mem, n)
    }

    pub fn free(&mut self, mem: &mut [u8], addr: u32) -> Result<(), MemError> {
        self.alloc.free(mem, addr)
    }

    pub fn fill(&mut self, mem: &mut [u8], addr: u32, len: u32, byte: u8) -> Result<(), MemError> {
        GuestMemory::fill(mem, addr, len, byte)
    }

    /// `printf(fmt, a0, a1)`; returns the number of bytes emitted.
    pub fn printf(&mut self, mem: &mut [u8], fmt_addr: u32, args: &[u32]) -> Result<u32, MemError> {
        let fmt = mem.read_cstring_bytes(fmt_addr, PRINTF_STRING_MAX + 1)?.to_vec();
        if fmt.len() as u32 > PRINTF_STRING_MAX {
            return Err(MemError::NoNul {
                addr: fmt_addr,
                max: PRINTF_STRING_MAX,
            });
        }
        let prog = parse_format(&fmt)?;
        let out = mini_printf(mem, &prog, args)?;
        self.output.extend_from_slice(&out);
        Ok(out.len() as u32)
    }

    /// Writes the guard for the frame at `base` to `addr` if canaries are on.
    pub fn canary_place(&mut self, mem: &mut [u8], base: u32, addr: u32) -> Result<(), MemError> {
        if self.hardening.canaries {
            mem.write_u32(addr, canary_value(base))?;
        }
        Ok(())
    }

    /// Traps with `ECANARY` if the guard at `addr` changed.
    pub fn canary_check(&mut self, mem: &mut [u8], base: u32, addr: u32) -> Result<(), MemError> {
        if self.hardening.canaries && mem.read_u32(addr)? != canary_value(base) {
            return Err(MemError::CanaryClobbered { frame_base: base });
        }
        Ok(())
    }

    /// Writes 16 lowercase hex digits and a NUL at `dst`, advancing the
    /// xorshift32 state stored at `state_addr`.
    pub fn nonce_fill(&mut self, mem: &mut [u8], dst: u32, state_addr: u32) -> Result<(), MemError> {
        let mut state = mem.read_u32(state_addr)?;
        let mut text = String::with_capacity(17);
        for _ in 0..2 {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            text.push_str(&format!("{state:08x}"));
        }
        text.push('\0');
        mem.write(dst, text.as_bytes())?;
        mem.write_u32(state_addr, state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmem::LinearMemory;

    fn mem() -> LinearMemory {
        LinearMemory::default()
    }

    #[test]
    fn buffer_copy_follows_hardening() {
        let mut m = mem();
        m.write(0x3000, &[7; 40]).unwrap();
        let mut libc = Libc::new(HardeningConfig::none());
        assert_eq!(libc.memcpy_buffer(m.bytes_mut(), 0x4000, 0x3000, 40, 32).unwrap(), 40);
        let mut libc = Libc::new(HardeningConfig { checked_copy: true, ..Default::default() });
        assert_eq!(libc.memcpy_buffer(m.bytes_mut(), 0x5000, 0x3000, 40, 32).unwrap(), 32);
        assert_eq!(m.read(0x5020, 8).unwrap(), &[0; 8]);
    }

    #[test]
    fn printf_collects_output() {
        let mut m = mem();
        m.write(0x3000, b"v=%d;\0").unwrap();
        let mut libc = Libc::new(HardeningConfig::none());
        assert_eq!(libc.printf(m.bytes_mut(), 0x3000, &[42, 0]).unwrap(), 5);
        assert_eq!(libc.output, b"v=42;");
    }

    #[test]
    fn canaries_only_when_enabled() {
        let mut m = mem();
        let mut off = Libc::new(HardeningConfig::none());
        off.canary_place(m.bytes_mut(), 0x7000, 0x7020).unwrap();
        assert_eq!(m.read_u32(0x7020).unwrap(), 0);
        let mut on = Libc::new(HardeningConfig { canaries: true, ..Default::default() });
        on.canary_place(m.bytes_mut(), 0x7000, 0x7020).unwrap();
        on.canary_check(m.bytes_mut(), 0x7000, 0x7020).unwrap();
        m.write(0x7020, b"A").unwrap();
        assert_eq!(
            on.canary_check(m.bytes_mut(), 0x7000, 0x7020),
            Err(MemError::CanaryClobbered { frame_base: 0x7000 })
        );
    }

    #[test]
    fn nonces_are_hex_and_advance() {
        let mut m = mem();
        m.write_u32(0x1008, 0x2545_F491).unwrap();
        let mut libc = Libc::new(HardeningConfig::none());
        libc.nonce_fill(m.bytes_mut(), 0x1200, 0x1008).unwrap();
        let a = m.read_cstring(0x1200, 17).unwrap();
        libc.nonce_fill(m.bytes_mut(), 0x1200, 0x1008).unwrap();
        let b = m.read_cstring(0x1200, 17).unwrap();
        assert_eq!(a.len(), 16);
        assert!(a.bytes().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        assert_ne!(a, b);
    }
}
