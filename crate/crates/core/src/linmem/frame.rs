use super::{GuestMemory, MemError, RegionMap};

/// A local variable as declared in source order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalDecl {
    pub name: &'static str,
    pub len: u32,
    /// Receives attacker-controlled bytes; a canary goes right above it.
    pub attacker_writable: bool,
}

impl LocalDecl {
    pub const fn buffer(name: &'static str, len: u32) -> Self {
        Self {
            name,
            len,
            attacker_writable: true,
        }
    }

    pub const fn value(name: &'static str, len: u32) -> Self {
        Self {
            name,
            len,
            attacker_writable: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Local {
    pub name: String,
    pub offset: u32,
    pub len: u32,
}

/// Placement of locals inside one block of memory. Locals are laid out in
/// declaration order at ascending addresses, so anything declared after a
/// buffer is reachable by overflowing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackFrame {
    pub base: u32,
    pub locals: Vec<Local>,
    pub canary_offset: Option<u32>,
}

const CANARY_LEN: u32 = 4;
const CANARY_SEED: u32 = 0x5EC0_0D1E;

/// Guard value for a frame. Deterministic so that snapshots are stable.
pub fn canary_value(frame_base: u32) -> u32 {
    CANARY_SEED ^ frame_base.rotate_left(13)
}

impl StackFrame {
    /// Lays out `decls` upward from `base`. With `canaries`, a 4-byte guard
    /// is inserted after the first attacker-writable local that has a local
    /// above it.
    pub fn layout_at(base: u32, decls: &[LocalDecl], canaries: bool) -> Self {
        let mut offset = 0;
        let mut canary_offset = None;
        let mut locals = Vec::with_capacity(decls.len());
        for (i, d) in decls.iter().enumerate() {
            locals.push(Local {
                name: d.name.to_string(),
                offset,
                len: d.len,
            });
            offset += d.len;
            if canaries && canary_offset.is_none() && d.attacker_writable && i + 1 < decls.len() {
                canary_offset = Some(offset);
                offset += CANARY_LEN;
            }
        }
        Self {
            base,
            locals,
            canary_offset,
        }
    }

    /// Pushes a frame below `top` on the downward-growing stack.
    pub fn push(regions: &RegionMap, top: u32, decls: &[LocalDecl], canaries: bool) -> Result<Self, MemError> {
        let probe = Self::layout_at(0, decls, canaries);
        let size = probe.size();
        match top.checked_sub(size) {
            Some(base) if base >= regions.stack_limit => Ok(Self::layout_at(base, decls, canaries)),
            _ => Err(MemError::OutOfBounds {
                addr: top.saturating_sub(size),
                len: size as u64,
                size: regions.stack_limit,
            }),
        }
    }

    pub fn size(&self) -> u32 {
        let locals_end = self.locals.iter().map(|l| l.offset + l.len).max().unwrap_or(0);
        let canary_end = self.canary_offset.map_or(0, |c| c + CANARY_LEN);
        locals_end.max(canary_end)
    }

    pub fn local(&self, name: &str) -> Option<&Local> {
        self.locals.iter().find(|l| l.name == name)
    }

    pub fn addr_of(&self, name: &str) -> Option<u32> {
        self.local(name).map(|l| self.base + l.offset)
    }

    pub fn canary_addr(&self) -> Option<u32> {
        self.canary_offset.map(|c| self.base + c)
    }
}

/// Writes the guard word. Returns the value written, or `None` when the
/// frame has no canary slot.
pub fn place_canary<M: GuestMemory + ?Sized>(mem: &mut M, frame: &StackFrame) -> Result<Option<u32>, MemError> {
    let Some(addr) = frame.canary_addr() else {
        return Ok(None);
    };
    let value = canary_value(frame.base);
    mem.write_u32(addr, value)?;
    Ok(Some(value))
}

/// True iff the guard word is intact (or the frame has none).
pub fn check_canary<M: GuestMemory + ?Sized>(mem: &M, frame: &StackFrame) -> Result<bool, MemError> {
    match frame.canary_addr() {
        None => Ok(true),
        Some(addr) => Ok(mem.read_u32(addr)? == canary_value(frame.base)),
    }
}
