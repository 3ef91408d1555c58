use std::time::Instant;

use serde::Serialize;

use super::oracle::{calibrate, OracleOptions};
use super::payload::{build_bof_payload, execute_plan, plan_format_write};
use super::reconstruct::{reconstruct_secret, DEFAULT_ALPHABET};
use super::{groom_uaf, ExploitError};
use crate::host::layout::{SQLI_TEMPLATE_ADDR, SQLI_TOKEN_LEN, SSTI_NAME_LEN, SSTI_STATIC_NONCE};
use crate::host::{Scenario, Vector};
use crate::linmem::HardeningConfig;
use crate::miniquery::QueryResult;
use crate::scenarios::{
    sqli_success, ssti_success, Evidence, ExploitReport, MemoryDiffSummary, PageReport, Requester, ScenarioConfig,
    ScenarioError, ScenarioState,
};

const SQLI_INJECT: &str = "SELECT 1";
/// Replacement template for the reused query chunk: 53 bytes plus NUL.
const SQLI_UAF_TEMPLATE: &str = "SELECT id, name, secret, role FROM users WHERE id = 0";
const HONEST_NAME: &str = "guest";
const EXCERPT_RADIUS: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExploitOptions {
    pub oracle: OracleOptions,
    pub alphabet: String,
    pub max_len: u32,
    pub calibration_seed: u64,
    /// Expression planted in the nonce.
    pub ssti_payload: String,
}

impl Default for ExploitOptions {
    fn default() -> Self {
        Self {
            oracle: OracleOptions::default(),
            alphabet: DEFAULT_ALPHABET.to_string(),
            max_len: 32,
            calibration_seed: 0x5EED,
            ssti_payload: "#{7*7}".to_string(),
        }
    }
}

struct Chain {
    success: bool,
    evidence: Evidence,
    error: Option<ExploitError>,
}

/// Runs the scripted chain for `config`'s scenario and vector against a
/// fresh instance. Chain failures are reported, not returned; only an
/// instance that cannot be built (e.g. `EUNSUPPORTED`) is an error.
pub fn run_exploit(config: &ScenarioConfig, opts: &ExploitOptions) -> Result<ExploitReport, ExploitError> {
    let start = Instant::now();
    let mut state = ScenarioState::new(config.clone()).map_err(|e| match e {
        ScenarioError::Unsupported(m) => ExploitError::Unsupported(m),
        other => other.into(),
    })?;
    let before = state.snapshot();
    let chain = match config.scenario {
        Scenario::Sqli => sqli_chain(&mut state),
        Scenario::Ssti => ssti_chain(&mut state, opts),
        Scenario::Xsleak => xsleak_chain(&mut state, opts),
    };
    let memory_diff = MemoryDiffSummary::between(&before, &state.snapshot());
    Ok(ExploitReport {
        scenario: config.scenario,
        vector: config.vector,
        hardened: config.hardening.any(),
        hardening: config.hardening,
        backend: config.backend,
        success: chain.success,
        requests: state.requests_served(),
        error: chain.error.as_ref().map(|e| e.code().to_string()),
        error_detail: chain.error.as_ref().map(ToString::to_string),
        evidence: chain.evidence,
        memory_diff,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn sqli_chain(state: &mut ScenarioState) -> Chain {
    let result: Result<QueryResult, ExploitError> = (|| match state.vector() {
        Vector::Bof => {
            state.sqli_set_token(&build_bof_payload(SQLI_TOKEN_LEN, SQLI_INJECT.as_bytes())?)?;
            Ok(state.sqli_lookup(None)?)
        }
        Vector::Ufs => {
            let mut payload = SQLI_INJECT.as_bytes().to_vec();
            payload.push(0);
            execute_plan(state, &plan_format_write(SQLI_TEMPLATE_ADDR, &payload)?)?;
            Ok(state.sqli_lookup(None)?)
        }
        Vector::Uaf => {
            groom_uaf(state, SQLI_UAF_TEMPLATE.as_bytes())?;
            Ok(state.sqli_lookup(None)?)
        }
        // Passes the nonzero check, narrows to 0 in the guest.
        Vector::Iof => Ok(state.sqli_lookup(Some(1 << 32))?),
    })();
    let template = state.sqli_template_now().unwrap_or_default();
    match result {
        Ok(r) => Chain {
            success: sqli_success(&template, &r),
            evidence: Evidence::Template {
                template,
                columns: r.columns,
                rows: r.rows,
            },
            error: None,
        },
        Err(e) => Chain {
            success: false,
            evidence: Evidence::Template {
                template,
                columns: Vec::new(),
                rows: Vec::new(),
            },
            error: Some(e),
        },
    }
}

fn excerpt(html: &str) -> String {
    let chars: Vec<char> = html.chars().collect();
    let at = html.find("nonce=").map_or(0, |b| html[..b].chars().count());
    let lo = at.saturating_sub(EXCERPT_RADIUS);
    let hi = (at + EXCERPT_RADIUS).min(chars.len());
    chars[lo..hi].iter().collect()
}

fn ssti_chain(state: &mut ScenarioState, opts: &ExploitOptions) -> Chain {
    let expr = opts.ssti_payload.as_bytes();
    let mut with_nul = expr.to_vec();
    with_nul.push(0);
    let page: Result<PageReport, ExploitError> = (|| match state.vector() {
        Vector::Bof => Ok(state.ssti_page(&build_bof_payload(SSTI_NAME_LEN, expr)?, [0, 0])?),
        Vector::Ufs => {
            execute_plan(state, &plan_format_write(SSTI_STATIC_NONCE, &with_nul)?)?;
            Ok(state.ssti_page(HONEST_NAME.as_bytes(), [0, 0])?)
        }
        Vector::Uaf => {
            state.ssti_page(HONEST_NAME.as_bytes(), [0, 0])?;
            let groomed = groom_uaf(state, expr)?;
            Ok(groomed.page.expect("the template scenario renders while grooming"))
        }
        Vector::Iof => Err(ExploitError::Unsupported("no narrowing build of the template scenario".into())),
    })();
    match page {
        Ok(p) => Chain {
            success: ssti_success(&p),
            evidence: Evidence::Page {
                nonce: p.nonce.clone(),
                excerpt: excerpt(&p.html),
                ace_triggered: p.ace_triggered,
            },
            error: None,
        },
        Err(e) => Chain {
            success: false,
            evidence: Evidence::None,
            error: Some(e),
        },
    }
}

fn xsleak_chain(state: &mut ScenarioState, opts: &ExploitOptions) -> Chain {
    let cal = calibrate(
        opts.oracle.mode,
        opts.oracle.style,
        opts.oracle.samples,
        state.budget(),
        opts.calibration_seed,
    );
    let rec = reconstruct_secret(state, &opts.alphabet, opts.max_len, &opts.oracle, cal.threshold);
    let planted = state.config().secrets[0].clone();
    Chain {
        success: rec.error.is_none() && rec.recovered == planted,
        error: rec.error.clone(),
        evidence: Evidence::Secret {
            recovered: rec.recovered,
            planted,
            searches: rec.searches,
            oracle: format!("{} ({})", opts.oracle.mode, opts.oracle.style),
            threshold: rec.threshold,
            min_hit: rec.min_hit,
            max_miss: rec.max_miss,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HonestStep {
    pub action: String,
    pub ok: bool,
    pub detail: String,
}

/// A benign session against one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HonestRun {
    pub scenario: Scenario,
    pub vector: Vector,
    pub hardening: HardeningConfig,
    pub steps: Vec<HonestStep>,
}

impl HonestRun {
    /// Every step behaved as the frontend intends.
    pub fn all_ok(&self) -> bool {
        self.steps.iter().all(|s| s.ok)
    }
}

fn step<T>(action: &str, r: Result<T, ScenarioError>, show: impl FnOnce(T) -> String) -> HonestStep {
    let (ok, detail) = match r {
        Ok(v) => (true, show(v)),
        Err(e) => (false, e.to_string()),
    };
    HonestStep {
        action: action.to_string(),
        ok,
        detail,
    }
}

fn rows(r: QueryResult) -> String {
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|row| row.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

/// Exercises the routes the way a legitimate user would. A refused id 0
/// lookup counts as correct behaviour.
pub fn run_honest(config: &ScenarioConfig) -> Result<HonestRun, ScenarioError> {
    let mut st = ScenarioState::new(config.clone())?;
    let mut steps = Vec::new();
    match config.scenario {
        Scenario::Sqli => {
            steps.push(step("set token", st.sqli_set_token(b"alice-session"), |a| format!("stored at {a:#x}")));
            steps.push(step("lookup id=1", st.sqli_lookup(Some(1)), rows));
            let refused = st.sqli_lookup(Some(0));
            steps.push(HonestStep {
                action: "lookup id=0".into(),
                ok: matches!(refused, Err(ScenarioError::Forbidden(_))),
                detail: match refused {
                    Ok(r) => rows(r),
                    Err(e) => e.to_string(),
                },
            });
        }
        Scenario::Ssti => {
            for _ in 0..2 {
                steps.push(step("page name=alice", st.ssti_page(b"alice", [0, 0]), |p| {
                    format!("nonce {}, evaluated {}", p.nonce, p.evaluated_count)
                }));
            }
        }
        Scenario::Xsleak => {
            let token_search = st.xsleak_search(Requester::Victim, Some("trust"));
            steps.push(HonestStep {
                action: "victim search trust".into(),
                ok: token_search.status == 200,
                detail: format!("{} steps", token_search.steps),
            });
            steps.push(step(
                "attacker store slot 3",
                st.xsleak_store_secret(Requester::Attacker, 3, b"notes"),
                |a| format!("stored at {a:#x}"),
            ));
            let own = st.xsleak_search(Requester::Attacker, Some("notes"));
            steps.push(HonestStep {
                action: "attacker search notes".into(),
                ok: own.status == 200,
                detail: format!("{} steps", own.steps),
            });
        }
    }
    Ok(HonestRun {
        scenario: config.scenario,
        vector: config.vector,
        hardening: config.hardening,
        steps,
    })
}
