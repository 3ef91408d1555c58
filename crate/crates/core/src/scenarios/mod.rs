//! The web-application layer around the guests: frontend policy, the chained
//! data flows of each scenario, the blind search contract and the HTTP
//! service.

mod config;
mod http;
mod report;
mod state;

pub use config::{parse_config, ScenarioConfig, ServeConfig, DEFAULT_PORT, PORT_ENV};
pub use http::{router, serve, AppState, STEPS_HEADER, AUTH_HEADER};
pub use report::{Evidence, ExploitReport, MemoryDiffSummary};
pub use state::{
    is_supported, narrow_i32, sanitize_pattern, sqli_success, ssti_success, PageReport, Requester, ScenarioState,
    SearchResponse, BLIND_BODY, DEFAULT_SECRETS, REQUEST_CAP, SAFE_INTEGER_MAX,
};

use thiserror::Error;

use crate::host::HostError;
use crate::linmem::MemError;
use crate::miniquery::QueryError;
use crate::minitemplate::TemplateError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("EFORBIDDEN: {0}")]
    Forbidden(String),
    #[error("EBOUNDARY: {0}")]
    Boundary(String),
    #[error("ESIZE: request of {len} bytes exceeds the {cap}-byte cap")]
    Size { len: usize, cap: usize },
    #[error("EUNSUPPORTED: {0}")]
    Unsupported(String),
    #[error("EBADREQ: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl From<MemError> for ScenarioError {
    fn from(e: MemError) -> Self {
        ScenarioError::Host(HostError::Trap(e))
    }
}

impl ScenarioError {
    /// Short error code. Guest traps report the underlying fault
    /// (`ECANARY`, `EOOB`, ...).
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Forbidden(_) => "EFORBIDDEN",
            ScenarioError::Boundary(_) => "EBOUNDARY",
            ScenarioError::Size { .. } => "ESIZE",
            ScenarioError::Unsupported(_) => "EUNSUPPORTED",
            ScenarioError::BadRequest(_) => "EBADREQ",
            ScenarioError::Host(e) => e.fault_code(),
            ScenarioError::Query(e) => e.code(),
            ScenarioError::Template(e) => e.code(),
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            ScenarioError::Forbidden(_) => 403,
            ScenarioError::Boundary(_) | ScenarioError::Size { .. } | ScenarioError::BadRequest(_) => 400,
            ScenarioError::Unsupported(_) => 404,
            ScenarioError::Host(_) => 500,
            ScenarioError::Query(_) | ScenarioError::Template(_) => 422,
        }
    }
}

/// Client-side checks the frontend performs before anything reaches the
/// guest.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrontendPolicy {
    /// Rejects a lookup of id 0, comparing the value as received.
    pub id_nonzero_check: bool,
    /// Strips regex metacharacters from user search text.
    pub pattern_sanitizer: bool,
    /// Static credential that marks a request as the victim's.
    pub auth_token: String,
}

impl Default for FrontendPolicy {
    fn default() -> Self {
        Self {
            id_nonzero_check: true,
            pattern_sanitizer: true,
            auth_token: "victim-session".to_string(),
        }
    }
}
