//! Fixed guest addresses shared by the simulator, guest modules and the
//! exploit drivers. Payloads are position-constant by construction.

use crate::linmem::RegionMap;

pub const REGIONS: RegionMap = RegionMap::DEFAULT;

/// Heap object owned by the scenario (query, nonce or pattern).
pub const OBJ_PTR: u32 = 0x1000;
/// Static-nonce "already generated" flag.
pub const NONCE_FLAG: u32 = 0x1004;
/// xorshift32 state.
pub const PRNG_STATE: u32 = 0x1008;
pub const VARIANT_SLOT: u32 = 0x100C;
pub const FRAME_BASE_SLOT: u32 = 0x1010;
/// Most recent user-supplied heap buffer.
pub const USER_PTR: u32 = 0x1014;

pub const PRNG_SEED: u32 = 0x2545_F491;

/// Static query template (format-string target).
pub const SQLI_TEMPLATE_ADDR: u32 = 0x1040;
pub const SQLI_TEMPLATE_CAP: u32 = 64;
pub const SQLI_DEFAULT_TEMPLATE: &str = "SELECT name, role FROM users WHERE id = ?";
pub const SQLI_TOKEN_LEN: u32 = 32;
pub const SQLI_QUERY_LEN: u32 = 64;

pub const SSTI_STATIC_NONCE: u32 = 0x1200;
pub const SSTI_NAME_LEN: u32 = 32;
pub const SSTI_NONCE_LEN: u32 = 17;
pub const SSTI_NONCE_HEX: u32 = 16;

pub const XSLEAK_SECRETS: u32 = 0x1100;
pub const XSLEAK_SLOT_LEN: u32 = 32;
pub const XSLEAK_SLOTS: u32 = 4;
pub const XSLEAK_ATTACKER_SLOT: u32 = 3;
/// Start of the pattern buffer; with canaries a guard word sits here and
/// the buffer moves up by four bytes.
pub const XSLEAK_PATTERN: u32 = 0x1180;
pub const XSLEAK_PATTERN_LEN: u32 = 64;
pub const XSLEAK_DEFAULT_PATTERN_ADDR: u32 = 0x1400;
pub const XSLEAK_DEFAULT_PATTERN: &str = "trust";

/// Host staging window for request bytes.
pub const INPUT_BASE: u32 = REGIONS.input_base;

pub fn xsleak_slot_addr(slot: u32) -> u32 {
    XSLEAK_SECRETS + slot * XSLEAK_SLOT_LEN
}

pub fn xsleak_pattern_addr(canaries: bool) -> u32 {
    XSLEAK_PATTERN + if canaries { 4 } else { 0 }
}
