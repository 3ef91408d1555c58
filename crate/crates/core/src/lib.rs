//! A desk-scale lab for memory corruption inside WebAssembly linear memory
//! and the web-level attacks it enables: query-template injection, nonce
//! template injection and a regex-timing cross-site leak.
//!
//! Layers, bottom up: [`linmem`] (memory, allocator, frames, `printf`),
//! the three mini engines ([`regexlite`], [`miniquery`], [`minitemplate`]),
//! [`host`] (guest backends), [`scenarios`] (the vulnerable web app and its
//! HTTP service) and [`exploits`] (the attack drivers).

pub mod exploits;
pub mod host;
pub mod linmem;
pub mod miniquery;
pub mod minitemplate;
pub mod regexlite;
pub mod scenarios;

pub use exploits::{run_exploit, ExploitError, ExploitOptions, OracleMode, OracleOptions, PatternStyle};
pub use host::{instantiate, Backend, BackendKind, HostError, Scenario, Snapshot, Vector};
pub use linmem::{HardeningConfig, MemError};
pub use scenarios::{Evidence, ExploitReport, ScenarioConfig, ScenarioError, ScenarioState, ServeConfig};
