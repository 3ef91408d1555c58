use super::{GuestMemory, MemError};

/// Scan limit for `%s` arguments.
pub const PRINTF_STRING_MAX: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecKind {
    /// `%d`: signed decimal.
    Decimal,
    /// `%x`: lowercase hex.
    Hex,
    /// `%s`: NUL-terminated string at the argument address.
    Str,
    /// `%c`: low byte of the argument.
    Char,
    /// `%n`: store the number of bytes emitted so far at the argument address.
    Count,
}

impl SpecKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            b'd' => SpecKind::Decimal,
            b'x' => SpecKind::Hex,
            b's' => SpecKind::Str,
            b'c' => SpecKind::Char,
            b'n' => SpecKind::Count,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatItem {
    Literal(Vec<u8>),
    Spec { kind: SpecKind, arg_index: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FormatProgram {
    pub items: Vec<FormatItem>,
}

impl FormatProgram {
    pub fn spec_count(&self) -> usize {
        self.items.iter().filter(|i| matches!(i, FormatItem::Spec { .. })).count()
    }
}

/// Parses a printf format. `%%` is a literal percent sign; a lone trailing
/// `%` or an unknown conversion is `EBADFMT`.
pub fn parse_format(fmt: impl AsRef<[u8]>) -> Result<FormatProgram, MemError> {
    let fmt = fmt.as_ref();
    let mut items = Vec::new();
    let mut literal = Vec::new();
    let mut next_arg = 0;
    let mut i = 0;
    while i < fmt.len() {
        let b = fmt[i];
        if b != b'%' {
            literal.push(b);
            i += 1;
            continue;
        }
        let Some(&conv) = fmt.get(i + 1) else {
            return Err(MemError::BadFormat { offset: i, spec: None });
        };
        if conv == b'%' {
            literal.push(b'%');
        } else {
            let kind = SpecKind::from_byte(conv).ok_or(MemError::BadFormat {
                offset: i,
                spec: Some(conv as char),
            })?;
            if !literal.is_empty() {
                items.push(FormatItem::Literal(std::mem::take(&mut literal)));
            }
            items.push(FormatItem::Spec {
                kind,
                arg_index: next_arg,
            });
            next_arg += 1;
        }
        i += 2;
    }
    if !literal.is_empty() {
        items.push(FormatItem::Literal(literal));
    }
    Ok(FormatProgram { items })
}

/// Runs a parsed format against guest memory. Returns the emitted bytes,
/// which the host can observe.
///
/// `%n` stores the running byte count as a full 32-bit little-endian word,
/// so it also clobbers the three bytes after its target.
pub fn mini_printf<M: GuestMemory + ?Sized>(
    mem: &mut M,
    prog: &FormatProgram,
    varargs: &[u32],
) -> Result<Vec<u8>, MemError> {
    let mut out = Vec::new();
    for item in &prog.items {
        let (kind, index) = match item {
            FormatItem::Literal(bytes) => {
                out.extend_from_slice(bytes);
                continue;
            }
            FormatItem::Spec { kind, arg_index } => (*kind, *arg_index),
        };
        let arg = *varargs
            .get(index as usize)
            .ok_or(MemError::ArgsExhausted { index })?;
        match kind {
            SpecKind::Decimal => out.extend_from_slice((arg as i32).to_string().as_bytes()),
            SpecKind::Hex => out.extend_from_slice(format!("{arg:x}").as_bytes()),
            SpecKind::Char => out.push(arg as u8),
            SpecKind::Str => {
                let s = mem.read_cstring_bytes(arg, PRINTF_STRING_MAX)?.to_vec();
                out.extend_from_slice(&s);
            }
            SpecKind::Count => mem.write_u32(arg, out.len() as u32)?,
        }
    }
    Ok(out)
}
