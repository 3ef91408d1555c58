//! Shared workloads for the criterion benches.

use wasmlab_core::exploits::{probe_pattern, PatternStyle, CALIBRATION_SUBJECT_LEN};
use wasmlab_core::linmem::{parse_format, FormatProgram, GuestMemory, LinearMemory};
use wasmlab_core::regexlite::{parse_regex, RegexAst};

/// Victim-style search subject: the secret followed by filler.
pub fn subject(secret: &str) -> String {
    let mut s = secret.to_string();
    while s.len() < CALIBRATION_SUBJECT_LEN {
        s.push('x');
    }
    s
}

/// A probe for `prefix` as the attacker plants it.
pub fn probe(prefix: &str) -> RegexAst {
    parse_regex(&probe_pattern(prefix, PatternStyle::Plain)).expect("probe pattern parses")
}

/// Memory with a string at 0x3000 and a format mixing every conversion.
pub fn printf_workload() -> (LinearMemory, FormatProgram, Vec<u32>) {
    let mut mem = LinearMemory::default();
    mem.write(0x3000, b"guest-string\0").expect("in bounds");
    let prog = parse_format(b"id=%d hex=%x name=%s c=%c pct=%% n=%n").expect("valid format");
    (mem, prog, vec![(-42i32) as u32, 0xbeef, 0x3000, u32::from(b'Z'), 0x4000])
}
