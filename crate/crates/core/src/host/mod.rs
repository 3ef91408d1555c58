//! Execution backends. The simulator runs reference guests directly on
//! [`LinearMemory`]; the WebAssembly backend runs guest modules in `wasmi`
//! with the same libc imports. Both sit behind [`Backend`].

pub mod layout;
mod libc;
mod script;
mod sim;
#[cfg(feature = "wasm")]
mod wasm;

pub use libc::Libc;
pub use script::{
    check_golden, decode_hex, diff_backends, diff_outcomes, parse_script, run_script, DiffReport, Script, ScriptRun, ScriptStep, StepOutcome,
    BLESS_ENV,
};
pub use sim::{data_segments, export_table, SimBackend};
#[cfg(feature = "wasm")]
pub use wasm::{WasmBackend, GUEST_DIR_ENV, IMPORT_MODULE};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linmem::{AllocatorState, GuestMemory, HardeningConfig, LinearMemory, MemError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Sqli,
    Ssti,
    Xsleak,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Sqli, Scenario::Ssti, Scenario::Xsleak];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Sqli => "sqli",
            Scenario::Ssti => "ssti",
            Scenario::Xsleak => "xsleak",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = HostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HostError::UnknownScenario(s.to_string()))
    }
}

/// Memory-corruption vector; the guest build variant is selected by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vector {
    /// Stack buffer overflow.
    Bof,
    /// Uncontrolled format string.
    Ufs,
    /// Use-after-free.
    Uaf,
    /// Integer narrowing.
    Iof,
}

impl Vector {
    pub const ALL: [Vector; 4] = [Vector::Bof, Vector::Ufs, Vector::Uaf, Vector::Iof];

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Vector::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Vector::Bof => "bof",
            Vector::Ufs => "ufs",
            Vector::Uaf => "uaf",
            Vector::Iof => "iof",
        }
    }
}

impl fmt::Display for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Vector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Vector::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown vector `{s}` (expected bof, ufs, uaf or iof)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Sim,
    Wasm,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Sim => "sim",
            BackendKind::Wasm => "wasm",
        })
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sim" => Ok(BackendKind::Sim),
            "wasm" => Ok(BackendKind::Wasm),
            _ => Err(format!("unknown backend `{s}` (expected sim or wasm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("ENOEXPORT: guest has no export `{0}`")]
    NoExport(String),
    #[error("EARITY: `{name}` takes {expected} arguments, got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("ETRAP: {0}")]
    Trap(#[from] MemError),
    #[error("ETRAP: unreachable: {0}")]
    Unreachable(String),
    #[error("EINSTANTIATE: {0}")]
    Instantiate(String),
    #[error("ESCENARIO: unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("ESCRIPT line {line}: {message}")]
    Script { line: usize, message: String },
}

impl HostError {
    pub fn code(&self) -> &'static str {
        match self {
            HostError::NoExport(_) => "ENOEXPORT",
            HostError::Arity { .. } => "EARITY",
            HostError::Trap(_) | HostError::Unreachable(_) => "ETRAP",
            HostError::Instantiate(_) => "EINSTANTIATE",
            HostError::UnknownScenario(_) => "ESCENARIO",
            HostError::Script { .. } => "ESCRIPT",
        }
    }

    /// The memory-fault code for traps raised by the libc (`ECANARY`,
    /// `EOOB`, ...), otherwise [`HostError::code`].
    pub fn fault_code(&self) -> &'static str {
        self.mem_fault().map_or(self.code(), MemError::code)
    }

    /// The memory fault behind a trap, if any.
    pub fn mem_fault(&self) -> Option<&MemError> {
        match self {
            HostError::Trap(e) => Some(e),
            _ => None,
        }
    }
}

/// Common surface of the simulator and WebAssembly backends.
///
/// A call that traps leaves memory and allocator state exactly as they were
/// before the call.
pub trait Backend: Send {
    fn kind(&self) -> BackendKind;
    fn scenario(&self) -> Scenario;
    fn hardening(&self) -> HardeningConfig;
    fn exports(&self) -> Vec<String>;
    fn call_export(&mut self, name: &str, args: &[u32]) -> Result<u32, HostError>;
    fn memory(&self) -> &[u8];
    fn write_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), MemError>;
    fn snapshot(&self) -> Snapshot;
    /// Drains guest `printf` output.
    fn take_output(&mut self) -> Vec<u8>;

    fn read_memory(&self, addr: u32, len: u32) -> Result<Vec<u8>, MemError> {
        self.memory().read(addr, len).map(<[u8]>::to_vec)
    }
}

/// Memory image plus heap metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub memory: LinearMemory,
    pub allocator: AllocatorState,
}

impl Snapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.memory.dump_with_trailer(&self.allocator.encode())
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, MemError> {
        let (memory, trailer) = LinearMemory::parse_dump(raw)?;
        Ok(Self {
            memory,
            allocator: AllocatorState::decode(trailer)?,
        })
    }

    pub fn diff(&self, other: &Snapshot) -> Vec<DiffRange> {
        memory_diff(self.memory.bytes(), other.memory.bytes())
    }
}

/// A maximal run of differing bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffRange {
    pub addr: u32,
    pub len: u32,
}

impl DiffRange {
    pub fn end(&self) -> u32 {
        self.addr + self.len
    }
}

/// Differing byte runs between two images; a length mismatch counts as a
/// difference over the tail.
pub fn memory_diff(a: &[u8], b: &[u8]) -> Vec<DiffRange> {
    let mut out: Vec<DiffRange> = Vec::new();
    let n = a.len().max(b.len());
    for i in 0..n {
        if a.get(i) != b.get(i) {
            match out.last_mut() {
                Some(r) if r.end() as usize == i => r.len += 1,
                _ => out.push(DiffRange { addr: i as u32, len: 1 }),
            }
        }
    }
    out
}

/// Creates a fresh backend with the scenario's data segments in place.
/// The build variant is chosen afterwards by calling `init(vector)`.
pub fn instantiate(kind: BackendKind, scenario: Scenario, hardening: HardeningConfig) -> Result<Box<dyn Backend>, HostError> {
    match kind {
        BackendKind::Sim => Ok(Box::new(SimBackend::new(scenario, hardening))),
        #[cfg(feature = "wasm")]
        BackendKind::Wasm => Ok(Box::new(WasmBackend::from_guest_dir(scenario, hardening)?)),
        #[cfg(not(feature = "wasm"))]
        BackendKind::Wasm => Err(HostError::Instantiate("built without the `wasm` feature".into())),
    }
}

/// Like [`instantiate`] but parses the scenario name.
pub fn instantiate_named(kind: BackendKind, scenario: &str, hardening: HardeningConfig) -> Result<Box<dyn Backend>, HostError> {
    instantiate(kind, scenario.parse()?, hardening)
}

#[cfg(test)]
mod tests {
    use super::layout::*;
    use super::*;

    fn sim(s: Scenario, v: Vector, h: HardeningConfig) -> Box<dyn Backend> {
        let mut b = instantiate(BackendKind::Sim, s, h).unwrap();
        b.call_export("init", &[v.code()]).unwrap();
        b
    }

    #[test]
    fn names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        for v in Vector::ALL {
            assert_eq!(Vector::from_code(v.code()), Some(v));
            assert_eq!(v.name().parse::<Vector>().unwrap(), v);
        }
        assert_eq!(instantiate_named(BackendKind::Sim, "nope", HardeningConfig::none()).err().unwrap().code(), "ESCENARIO");
    }

    #[test]
    fn instantiation_is_deterministic() {
        for s in Scenario::ALL {
            let a = instantiate(BackendKind::Sim, s, HardeningConfig::none()).unwrap().snapshot();
            let b = instantiate(BackendKind::Sim, s, HardeningConfig::none()).unwrap().snapshot();
            assert_eq!(a, b);
            assert_eq!(Snapshot::from_bytes(&a.to_bytes()).unwrap(), a);
        }
    }

    #[test]
    fn query_addresses_per_variant() {
        let mut b = sim(Scenario::Sqli, Vector::Ufs, HardeningConfig::none());
        assert_eq!(b.call_export("sqli_get_query_addr", &[]).unwrap(), SQLI_TEMPLATE_ADDR);
        let mut b = sim(Scenario::Sqli, Vector::Bof, HardeningConfig::none());
        let q = b.call_export("sqli_get_query_addr", &[]).unwrap();
        assert_eq!(q, REGIONS.stack_top - SQLI_QUERY_LEN);
        assert_eq!(b.memory().read_cstring(q, 64).unwrap(), SQLI_DEFAULT_TEMPLATE);
    }

    #[test]
    fn missing_export_and_arity() {
        let mut b = sim(Scenario::Sqli, Vector::Bof, HardeningConfig::none());
        assert_eq!(b.call_export("nope", &[]).unwrap_err().code(), "ENOEXPORT");
        assert_eq!(b.call_export("sqli_set_token", &[1]).unwrap_err().code(), "EARITY");
        assert_eq!(b.call_export("xsleak_free_pattern", &[]).unwrap_err().code(), "ENOEXPORT");
    }

    #[test]
    fn trap_at_memory_end_rolls_back() {
        let mut b = sim(Scenario::Sqli, Vector::Uaf, HardeningConfig::none());
        let before = b.snapshot();
        let size = b.memory().len() as u32;
        let err = b.call_export("sqli_set_token", &[size - 4, 16]).unwrap_err();
        assert_eq!(err.code(), "ETRAP");
        assert!(matches!(err.mem_fault(), Some(MemError::OutOfBounds { .. })));
        assert_eq!(b.snapshot(), before);
    }

    #[test]
    fn overflow_reaches_the_query_local() {
        let mut b = sim(Scenario::Sqli, Vector::Bof, HardeningConfig::none());
        let payload = [&[b'A'; 32][..], b"SELECT 1\0"].concat();
        b.write_memory(INPUT_BASE, &payload).unwrap();
        b.call_export("sqli_set_token", &[INPUT_BASE, payload.len() as u32]).unwrap();
        let q = b.call_export("sqli_get_query_addr", &[]).unwrap();
        assert_eq!(b.memory().read_cstring(q, 64).unwrap(), "SELECT 1");
    }

    #[test]
    fn canary_trap_leaves_query_unchanged() {
        let h = HardeningConfig { canaries: true, ..Default::default() };
        let mut b = sim(Scenario::Sqli, Vector::Bof, h);
        let before = b.snapshot();
        let payload = [&[b'A'; 32][..], b"SELECT 1\0"].concat();
        b.write_memory(INPUT_BASE, &payload).unwrap();
        let staged = b.snapshot();
        let err = b.call_export("sqli_set_token", &[INPUT_BASE, payload.len() as u32]).unwrap_err();
        assert_eq!(err.mem_fault().map(MemError::code), Some("ECANARY"));
        assert_eq!(b.snapshot(), staged);
        let q = b.call_export("sqli_get_query_addr", &[]).unwrap();
        assert_eq!(b.memory().read_cstring(q, 64).unwrap(), SQLI_DEFAULT_TEMPLATE);
        assert!(before.diff(&staged).iter().all(|r| r.addr >= INPUT_BASE));
    }

    #[test]
    fn freed_nonce_chunk_is_reused_by_the_name() {
        let mut b = sim(Scenario::Ssti, Vector::Uaf, HardeningConfig::none());
        let nonce = b.call_export("ssti_make_nonce", &[]).unwrap();
        b.call_export("ssti_free_nonce", &[]).unwrap();
        b.write_memory(INPUT_BASE, b"#{7*7}").unwrap();
        let name = b.call_export("ssti_set_name", &[INPUT_BASE, 6]).unwrap();
        assert_eq!(name, nonce);
        assert_eq!(b.call_export("ssti_get_nonce_addr", &[]).unwrap(), nonce);
        assert_eq!(b.memory().read_cstring(nonce, 32).unwrap(), "#{7*7}");
    }

    #[test]
    fn static_nonce_persists() {
        let mut b = sim(Scenario::Ssti, Vector::Ufs, HardeningConfig::none());
        let a = b.call_export("ssti_make_nonce", &[]).unwrap();
        let first = b.memory().read_cstring(a, 17).unwrap();
        b.call_export("ssti_make_nonce", &[]).unwrap();
        assert_eq!(b.memory().read_cstring(a, 17).unwrap(), first);
        assert_eq!(a, SSTI_STATIC_NONCE);
    }

    #[test]
    fn secret_overflow_reaches_pattern() {
        let mut b = sim(Scenario::Xsleak, Vector::Bof, HardeningConfig::none());
        let payload = [&[b'X'; 32][..], b"^a(.+){21}\0"].concat();
        b.write_memory(INPUT_BASE, &payload).unwrap();
        b.call_export("xsleak_store_secret", &[3, INPUT_BASE, payload.len() as u32]).unwrap();
        let p = b.call_export("xsleak_get_pattern_addr", &[]).unwrap();
        assert_eq!(p, XSLEAK_PATTERN);
        assert_eq!(b.memory().read_cstring(p, 64).unwrap(), "^a(.+){21}");
        assert_eq!(b.call_export("xsleak_store_secret", &[4, INPUT_BASE, 1]).unwrap_err().code(), "ETRAP");
    }

    #[test]
    fn unsupported_variants_trap() {
        let mut b = instantiate(BackendKind::Sim, Scenario::Xsleak, HardeningConfig::none()).unwrap();
        assert_eq!(b.call_export("init", &[Vector::Ufs.code()]).unwrap_err().code(), "ETRAP");
        let mut b = instantiate(BackendKind::Sim, Scenario::Ssti, HardeningConfig::none()).unwrap();
        assert_eq!(b.call_export("init", &[Vector::Iof.code()]).unwrap_err().code(), "ETRAP");
    }

    #[test]
    fn diff_ranges_merge_runs() {
        let a = [0u8, 1, 2, 3, 4, 5];
        let b = [0u8, 9, 9, 3, 9, 5, 7];
        assert_eq!(
            memory_diff(&a, &b),
            vec![DiffRange { addr: 1, len: 2 }, DiffRange { addr: 4, len: 1 }, DiffRange { addr: 6, len: 1 }]
        );
    }
}
