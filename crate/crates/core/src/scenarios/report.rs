use serde::{Deserialize, Serialize};

use crate::host::layout::INPUT_BASE;
use crate::host::{BackendKind, DiffRange, Scenario, Snapshot, Vector};
use crate::linmem::HardeningConfig;
use crate::miniquery::Value;

/// Outcome of one automated exploit run, serialized as the lab's JSON
/// report: `{scenario, vector, hardened, success, evidence: {...},
/// requests, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploitReport {
    pub scenario: Scenario,
    pub vector: Vector,
    pub hardened: bool,
    pub hardening: HardeningConfig,
    pub backend: BackendKind,
    pub success: bool,
    /// Requests the attacker sent or forced the victim to send.
    pub requests: u64,
    /// Error code that stopped the chain, if any.
    pub error: Option<String>,
    pub error_detail: Option<String>,
    pub evidence: Evidence,
    pub memory_diff: MemoryDiffSummary,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// The template the guest held when the lookup ran, and its result.
    Template {
        template: String,
        columns: Vec<String>,
        rows: Vec<Vec<Value>>,
    },
    /// The rendered page around the nonce.
    Page {
        nonce: String,
        excerpt: String,
        ace_triggered: bool,
    },
    Secret {
        recovered: String,
        planted: String,
        searches: u64,
        oracle: String,
        threshold: f64,
        /// Smallest observable among hits and largest among misses.
        min_hit: Option<f64>,
        max_miss: Option<f64>,
    },
    None,
}

/// Guest bytes changed by the exploit, ignoring the host staging window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MemoryDiffSummary {
    pub ranges: usize,
    pub bytes: u64,
    /// At most the first 16 ranges.
    pub regions: Vec<DiffRange>,
}

const MAX_LISTED: usize = 16;

impl MemoryDiffSummary {
    pub fn all_ranges(before: &Snapshot, after: &Snapshot) -> Vec<DiffRange> {
        before.diff(after).into_iter().filter(|r| r.addr < INPUT_BASE).collect()
    }

    pub fn between(before: &Snapshot, after: &Snapshot) -> Self {
        let ranges = Self::all_ranges(before, after);
        Self {
            ranges: ranges.len(),
            bytes: ranges.iter().map(|r| r.len as u64).sum(),
            regions: ranges.into_iter().take(MAX_LISTED).collect(),
        }
    }
}
