//! Attack drivers: payload builders, the `%n` write planner, heap grooming,
//! the blind step/timing oracle and the end-to-end chains.

mod groom;
mod oracle;
mod payload;
mod reconstruct;
mod run;

pub use groom::{groom_uaf, Groomed};
pub use oracle::{
    calibrate, decide, escape_literal, probe_pattern, terminator_pattern, Calibration, OracleDecision, OracleMode,
    OracleOptions, PatternStyle, TimingSample, CALIBRATION_SUBJECT_LEN, REPEAT,
};
pub use payload::{build_bof_payload, execute_plan, plan_format_write, FormatRequest, FormatWritePlan, SCRATCH_BYTES};
pub use reconstruct::{reconstruct_secret, Reconstruction, DEFAULT_ALPHABET};
pub use run::{run_exploit, run_honest, ExploitOptions, HonestRun, HonestStep};

use thiserror::Error;

use crate::scenarios::ScenarioError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExploitError {
    #[error("ESIZE: {0}")]
    Size(String),
    #[error("EGROOM: freed chunk {freed:#x}, allocation landed at {landed:#x}")]
    Groom { freed: u32, landed: u32 },
    #[error("EAMBIGUOUS: {hits:?} all hit at position {position}")]
    Ambiguous { position: usize, hits: Vec<char> },
    #[error("EEXHAUSTED: no candidate hit at position {position} (recovered {recovered:?})")]
    Exhausted { position: usize, recovered: String },
    #[error("EUNSUPPORTED: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

impl ExploitError {
    pub fn code(&self) -> &'static str {
        match self {
            ExploitError::Size(_) => "ESIZE",
            ExploitError::Groom { .. } => "EGROOM",
            ExploitError::Ambiguous { .. } => "EAMBIGUOUS",
            ExploitError::Exhausted { .. } => "EEXHAUSTED",
            ExploitError::Unsupported(_) => "EUNSUPPORTED",
            ExploitError::Scenario(e) => e.code(),
        }
    }
}
