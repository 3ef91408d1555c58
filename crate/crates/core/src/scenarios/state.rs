use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ScenarioConfig, ScenarioError};
use crate::host::layout::*;
use crate::host::{instantiate, Backend, Scenario, Snapshot, Vector};
use crate::linmem::{latin1, latin1_bytes, GuestMemory, HardeningConfig};
use crate::miniquery::{self, parse_query, PreparedStatement, QueryResult, TableStore, Value};
use crate::minitemplate::{build_page, compile_and_render, escape_html, Context};
use crate::regexlite::{match_steps, parse_regex, StepBudget};

/// Largest request body accepted by any route.
pub const REQUEST_CAP: usize = 4096;
/// Largest integer a JavaScript number holds exactly.
pub const SAFE_INTEGER_MAX: i64 = (1 << 53) - 1;
/// Body of every search response.
pub const BLIND_BODY: &str = "ok";
/// Victim secrets planted in slots 0..3 of the search guest.
pub const DEFAULT_SECRETS: [&str; 3] = ["trustno1trustno1trustno1", "pin:4417-2290-1183", "backup:ocean-lantern-42"];

const TEMPLATE_READ_MAX: u32 = 256;
const NONCE_READ_MAX: u32 = 256;
const VICTIM_SLOTS: u32 = 3;
const MIN_PLANTED_LEN: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Requester {
    Attacker,
    Victim,
}

/// Combinations with a guest build. The format-string search variant is
/// deliberately absent.
pub fn is_supported(scenario: Scenario, vector: Vector) -> bool {
    !matches!(
        (scenario, vector),
        (Scenario::Xsleak, Vector::Ufs) | (Scenario::Xsleak, Vector::Iof) | (Scenario::Ssti, Vector::Iof)
    )
}

/// The id as the 32-bit guest sees it: low 32 bits, two's complement.
pub fn narrow_i32(id: i64) -> i32 {
    id as i32
}

/// Removes every regex metacharacter.
pub fn sanitize_pattern(text: &str) -> String {
    text.chars().filter(|c| !"^$.()+*?{}[]|\\".contains(*c)).collect()
}

/// A restricted row leaked, or the template was replaced by a constant
/// projection that returned a row.
pub fn sqli_success(template_now: &str, result: &QueryResult) -> bool {
    let restricted = result.rows.iter().flatten().any(|v| match v {
        Value::Text(t) => t == "restricted" || t.starts_with("FLAG{"),
        Value::Int(_) => false,
    });
    let constant = parse_query(template_now).is_ok_and(|q| q.from.is_none()) && !result.rows.is_empty();
    restricted || constant
}

/// The interpolation in the nonce was evaluated, or the exec sentinel fired.
pub fn ssti_success(page: &PageReport) -> bool {
    page.ace_triggered || page.html.contains("nonce=\"49\"")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PageReport {
    pub html: String,
    pub nonce: String,
    pub ace_triggered: bool,
    pub evaluated_count: u32,
    pub name_addr: u32,
    pub nonce_addr: u32,
    /// `printf` output of the format-string build.
    pub echo: Option<String>,
}

/// What the search route returns. Only `status` and `body` are visible to
/// a cross-origin requester; the rest is the side channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchResponse {
    pub status: u16,
    pub body: &'static str,
    pub steps: u64,
    pub budget_exceeded: bool,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// One running instance of a scenario: guest, fixtures and frontend.
pub struct ScenarioState {
    config: ScenarioConfig,
    backend: Box<dyn Backend>,
    store: TableStore,
    stmt: Option<PreparedStatement>,
    budget: StepBudget,
    requests: u64,
}

impl std::fmt::Debug for ScenarioState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioState")
            .field("config", &self.config)
            .field("requests", &self.requests)
            .finish_non_exhaustive()
    }
}

fn need(actual: Scenario, wanted: Scenario) -> Result<(), ScenarioError> {
    if actual == wanted {
        Ok(())
    } else {
        Err(ScenarioError::Unsupported(format!("route belongs to {wanted}, instance runs {actual}")))
    }
}

impl ScenarioState {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        let (scenario, vector) = (config.scenario, config.vector);
        if !is_supported(scenario, vector) {
            return Err(ScenarioError::Unsupported(format!("{scenario} has no {vector} build")));
        }
        let budget = StepBudget::new(config.max_steps)
            .ok_or_else(|| ScenarioError::BadRequest("max_steps must be positive".into()))?;
        let mut backend = instantiate(config.backend, scenario, config.hardening)?;
        backend.call_export("init", &[vector.code()])?;
        let mut state = Self {
            config,
            backend,
            store: miniquery::default_fixture(),
            stmt: None,
            budget,
            requests: 0,
        };
        match scenario {
            Scenario::Sqli => {
                let template = state.sqli_template_now()?;
                state.stmt = Some(miniquery::prepare(&template, state.config.hardening.template_integrity)?);
            }
            Scenario::Xsleak => state.plant_secrets()?,
            Scenario::Ssti => {}
        }
        Ok(state)
    }

    fn plant_secrets(&mut self) -> Result<(), ScenarioError> {
        let secrets = self.config.secrets.clone();
        if secrets.len() > VICTIM_SLOTS as usize {
            return Err(ScenarioError::BadRequest(format!("at most {VICTIM_SLOTS} victim secrets")));
        }
        if secrets.first().map_or(0, String::len) < MIN_PLANTED_LEN {
            return Err(ScenarioError::BadRequest(format!(
                "the planted secret needs at least {MIN_PLANTED_LEN} characters"
            )));
        }
        for (slot, secret) in secrets.iter().enumerate() {
            let bytes = latin1_bytes(secret);
            if bytes.len() > XSLEAK_SLOT_LEN as usize || bytes.contains(&0) {
                return Err(ScenarioError::BadRequest(format!("secret {slot} does not fit a slot")));
            }
            let (src, len) = self.stage(&bytes)?;
            self.backend.call_export("xsleak_store_secret", &[slot as u32, src, len])?;
        }
        Ok(())
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn scenario(&self) -> Scenario {
        self.config.scenario
    }

    pub fn vector(&self) -> Vector {
        self.config.vector
    }

    pub fn hardening(&self) -> HardeningConfig {
        self.config.hardening
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn backend_mut(&mut self) -> &mut dyn Backend {
        self.backend.as_mut()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.backend.snapshot()
    }

    pub fn budget(&self) -> StepBudget {
        self.budget
    }

    /// Requests handled so far.
    pub fn requests_served(&self) -> u64 {
        self.requests
    }

    /// Address of the scenario's heap object (query, nonce or pattern).
    pub fn object_addr(&self) -> Result<u32, ScenarioError> {
        Ok(self.backend.memory().read_u32(OBJ_PTR)?)
    }

    /// Address of the most recent heap copy of request bytes.
    pub fn last_user_alloc(&self) -> Result<u32, ScenarioError> {
        Ok(self.backend.memory().read_u32(USER_PTR)?)
    }

    /// Copies request bytes into the staging window. A single trailing NUL
    /// does not count against the cap.
    fn stage(&mut self, data: &[u8]) -> Result<(u32, u32), ScenarioError> {
        let content = data.strip_suffix(&[0]).unwrap_or(data).len();
        if content > REQUEST_CAP {
            return Err(ScenarioError::Size {
                len: content,
                cap: REQUEST_CAP,
            });
        }
        self.backend.write_memory(INPUT_BASE, data)?;
        Ok((INPUT_BASE, data.len() as u32))
    }

    fn check_length(&self, data: &[u8], cap: u32, what: &str) -> Result<(), ScenarioError> {
        let content = data.strip_suffix(&[0]).unwrap_or(data).len();
        if self.config.hardening.boundary_validation && content > cap as usize {
            return Err(ScenarioError::Boundary(format!("{what} longer than {cap} bytes")));
        }
        Ok(())
    }

    /// Frees the scenario's heap object (logout, nonce rotation, search
    /// reset). Only the use-after-free build keeps it on the heap.
    pub fn release(&mut self) -> Result<(), ScenarioError> {
        self.requests += 1;
        let export = match self.scenario() {
            Scenario::Sqli => "sqli_free_query",
            Scenario::Ssti => "ssti_free_nonce",
            Scenario::Xsleak => "xsleak_free_pattern",
        };
        self.backend.call_export(export, &[])?;
        Ok(())
    }

    /// `printf(request)` with caller-chosen varargs, present only in the
    /// format-string build.
    pub fn fmt_echo(&mut self, fmt: &[u8], args: [u32; 2]) -> Result<Vec<u8>, ScenarioError> {
        self.requests += 1;
        self.echo(fmt, args)
    }

    fn echo(&mut self, fmt: &[u8], args: [u32; 2]) -> Result<Vec<u8>, ScenarioError> {
        if self.vector() != Vector::Ufs || self.scenario() == Scenario::Xsleak {
            return Err(ScenarioError::Unsupported("echo exists only in the format-string build".into()));
        }
        let mut data = fmt.to_vec();
        if data.last() != Some(&0) {
            data.push(0);
        }
        let (src, _) = self.stage(&data)?;
        self.backend.take_output();
        self.backend.call_export("fmt_echo", &[src, args[0], args[1]])?;
        Ok(self.backend.take_output())
    }

    pub fn sqli_query_addr(&mut self) -> Result<u32, ScenarioError> {
        need(self.scenario(), Scenario::Sqli)?;
        Ok(self.backend.call_export("sqli_get_query_addr", &[])?)
    }

    /// The query template as guest memory holds it right now.
    pub fn sqli_template_now(&mut self) -> Result<String, ScenarioError> {
        let addr = self.sqli_query_addr()?;
        Ok(self.backend.memory().read_cstring(addr, TEMPLATE_READ_MAX)?)
    }

    pub fn sqli_set_token(&mut self, token: &[u8]) -> Result<u32, ScenarioError> {
        self.requests += 1;
        need(self.scenario(), Scenario::Sqli)?;
        self.check_length(token, SQLI_TOKEN_LEN, "token")?;
        let (src, len) = self.stage(token)?;
        Ok(self.backend.call_export("sqli_set_token", &[src, len])?)
    }

    /// Looks up a user. `id` is the value as the frontend received it.
    pub fn sqli_lookup(&mut self, id: Option<i64>) -> Result<QueryResult, ScenarioError> {
        self.requests += 1;
        need(self.scenario(), Scenario::Sqli)?;
        let bindings = match id {
            None => Vec::new(),
            Some(id) => {
                if !(-SAFE_INTEGER_MAX..=SAFE_INTEGER_MAX).contains(&id) {
                    return Err(ScenarioError::BadRequest(format!("{id} is not a safe integer")));
                }
                if self.config.policy.id_nonzero_check && id == 0 {
                    return Err(ScenarioError::Forbidden("id 0 is restricted".into()));
                }
                if self.config.hardening.boundary_validation && !(1..(1i64 << 31)).contains(&id) {
                    return Err(ScenarioError::Boundary(format!("id {id} outside 1..2^31")));
                }
                vec![Value::Int(narrow_i32(id) as i64)]
            }
        };
        let template = self.sqli_template_now()?;
        let stmt = self.stmt.as_ref().expect("prepared at setup");
        Ok(miniquery::execute(stmt, &template, &bindings, &self.store)?)
    }

    /// Renders the greeting page for `name`. The format-string build also
    /// echoes the name through `printf` with `fmt_args`.
    pub fn ssti_page(&mut self, name: &[u8], fmt_args: [u32; 2]) -> Result<PageReport, ScenarioError> {
        self.requests += 1;
        need(self.scenario(), Scenario::Ssti)?;
        self.check_length(name, SSTI_NAME_LEN, "name")?;
        self.backend.call_export("ssti_make_nonce", &[])?;
        let (src, len) = self.stage(name)?;
        let name_addr = self.backend.call_export("ssti_set_name", &[src, len])?;
        let echo = if self.vector() == Vector::Ufs {
            Some(latin1(&self.echo(name, fmt_args)?))
        } else {
            None
        };
        let nonce_addr = self.backend.call_export("ssti_get_nonce_addr", &[])?;
        let nonce = self.backend.memory().read_cstring(nonce_addr, NONCE_READ_MAX)?;
        if self.config.hardening.boundary_validation
            && !(nonce.len() == SSTI_NONCE_HEX as usize && nonce.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
        {
            return Err(ScenarioError::Boundary("nonce is not 16 hex digits".into()));
        }
        let shown = latin1(name.split(|&b| b == 0).next().unwrap_or_default());
        let page = build_page(&nonce, &format!("<p>Hello, {}</p>", escape_html(&shown)));
        let report = compile_and_render(&page, &Context::new())?;
        Ok(PageReport {
            html: report.output,
            nonce,
            ace_triggered: report.ace_triggered,
            evaluated_count: report.evaluated_count,
            name_addr,
            nonce_addr,
            echo,
        })
    }

    pub fn xsleak_store_secret(&mut self, who: Requester, slot: u32, secret: &[u8]) -> Result<u32, ScenarioError> {
        self.requests += 1;
        need(self.scenario(), Scenario::Xsleak)?;
        let allowed = match who {
            Requester::Attacker => slot == XSLEAK_ATTACKER_SLOT,
            Requester::Victim => slot < VICTIM_SLOTS,
        };
        if !allowed {
            return Err(ScenarioError::Forbidden(format!("slot {slot} belongs to another user")));
        }
        self.check_length(secret, XSLEAK_SLOT_LEN, "secret")?;
        let (src, len) = self.stage(secret)?;
        Ok(self.backend.call_export("xsleak_store_secret", &[slot, src, len])?)
    }

    /// The search pattern as guest memory holds it right now.
    pub fn xsleak_pattern(&mut self) -> Result<String, ScenarioError> {
        need(self.scenario(), Scenario::Xsleak)?;
        let addr = self.backend.call_export("xsleak_get_pattern_addr", &[])?;
        Ok(self.backend.memory().read_cstring(addr, XSLEAK_PATTERN_LEN)?)
    }

    fn search_subject(&self, who: Requester) -> String {
        let slots = match who {
            Requester::Victim => 0..VICTIM_SLOTS,
            Requester::Attacker => XSLEAK_ATTACKER_SLOT..XSLEAK_SLOTS,
        };
        let mem = self.backend.memory();
        slots
            .map(|s| mem.read_field(xsleak_slot_addr(s), XSLEAK_SLOT_LEN).unwrap_or_default())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Searches the requester's secrets. `query` replaces the saved
    /// pattern; without it the saved pattern is used. The response never
    /// depends on the outcome.
    pub fn xsleak_search(&mut self, who: Requester, query: Option<&str>) -> SearchResponse {
        self.requests += 1;
        let blind = |steps, budget_exceeded, elapsed| SearchResponse {
            status: 200,
            body: BLIND_BODY,
            steps,
            budget_exceeded,
            elapsed,
        };
        if self.scenario() != Scenario::Xsleak {
            return blind(0, false, Duration::ZERO);
        }
        if let Some(q) = query {
            let text = if self.config.policy.pattern_sanitizer {
                sanitize_pattern(q)
            } else {
                q.to_string()
            };
            let bytes = latin1_bytes(&text);
            if let Ok((src, len)) = self.stage(&bytes) {
                let _ = self.backend.call_export("xsleak_set_pattern", &[src, len]);
            }
        }
        let subject = self.search_subject(who);
        let start = Instant::now();
        let outcome = self
            .xsleak_pattern()
            .ok()
            .and_then(|p| parse_regex(&p).ok())
            .map(|ast| match_steps(&ast, &subject, self.budget));
        let elapsed = start.elapsed();
        match outcome {
            Some(o) => blind(o.steps, o.budget_exceeded, elapsed),
            None => blind(0, false, elapsed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::BackendKind;

    fn state(s: Scenario, v: Vector, h: HardeningConfig) -> ScenarioState {
        ScenarioState::new(ScenarioConfig::new(s, v).with_hardening(h)).unwrap()
    }

    fn rows(r: &QueryResult) -> Vec<Vec<String>> {
        r.rows.iter().map(|row| row.iter().map(|v| v.to_string()).collect()).collect()
    }

    #[test]
    fn unsupported_pairs() {
        for (s, v) in [(Scenario::Xsleak, Vector::Ufs), (Scenario::Xsleak, Vector::Iof), (Scenario::Ssti, Vector::Iof)] {
            let err = ScenarioState::new(ScenarioConfig::new(s, v)).unwrap_err();
            assert_eq!(err.code(), "EUNSUPPORTED");
        }
    }

    #[test]
    fn narrowing_is_twos_complement() {
        assert_eq!(narrow_i32(1 << 32), 0);
        assert_eq!(narrow_i32((1 << 32) - 1), -1);
        assert_eq!(narrow_i32((1 << 31) + 5), i32::MIN + 5);
        assert_eq!(narrow_i32(-1), -1);
    }

    #[test]
    fn honest_lookup_and_frontend_check() {
        let mut st = state(Scenario::Sqli, Vector::Iof, HardeningConfig::none());
        assert_eq!(rows(&st.sqli_lookup(Some(1)).unwrap()), [["'alice'", "'user'"]]);
        assert_eq!(st.sqli_lookup(Some(0)).unwrap_err().code(), "EFORBIDDEN");
        assert_eq!(st.sqli_lookup(Some(1 << 53)).unwrap_err().code(), "EBADREQ");
        let r = st.sqli_lookup(Some(1 << 32)).unwrap();
        assert!(sqli_success(&st.sqli_template_now().unwrap(), &r));
        assert!(st.sqli_lookup(Some((1 << 32) - 1)).unwrap().rows.is_empty());
        assert_eq!(st.sqli_lookup(None).unwrap_err().code(), "EBINDMISMATCH");
    }

    #[test]
    fn boundary_validation_rejects_wide_ids() {
        let mut st = state(Scenario::Sqli, Vector::Iof, HardeningConfig { boundary_validation: true, ..Default::default() });
        for id in [1i64 << 32, (1 << 32) - 1, 1 << 31, -4] {
            assert_eq!(st.sqli_lookup(Some(id)).unwrap_err().code(), "EBOUNDARY", "{id}");
        }
        assert_eq!(st.sqli_lookup(Some(3)).unwrap().rows.len(), 1);
    }

    #[test]
    fn token_overflow_changes_the_executed_template() {
        let mut st = state(Scenario::Sqli, Vector::Bof, HardeningConfig::none());
        st.sqli_set_token(b"short").unwrap();
        assert_eq!(st.sqli_template_now().unwrap(), SQLI_DEFAULT_TEMPLATE);
        let payload = [&[b'A'; 32][..], b"SELECT 1\0"].concat();
        st.sqli_set_token(&payload).unwrap();
        let r = st.sqli_lookup(None).unwrap();
        assert_eq!(rows(&r), [["1"]]);
        assert!(sqli_success("SELECT 1", &r));
    }

    #[test]
    fn oversize_requests() {
        let mut st = state(Scenario::Sqli, Vector::Bof, HardeningConfig::none());
        assert_eq!(st.sqli_set_token(&vec![b'A'; REQUEST_CAP + 1]).unwrap_err().code(), "ESIZE");
        let mut cap = vec![b'A'; REQUEST_CAP];
        cap.push(0);
        assert!(st.stage(&cap).is_ok());
    }

    #[test]
    fn echo_only_in_format_build() {
        let mut st = state(Scenario::Sqli, Vector::Bof, HardeningConfig::none());
        assert_eq!(st.fmt_echo(b"hi", [0, 0]).unwrap_err().code(), "EUNSUPPORTED");
        let mut st = state(Scenario::Sqli, Vector::Ufs, HardeningConfig::none());
        assert_eq!(st.fmt_echo(b"v=%d", [7, 0]).unwrap(), b"v=7");
    }

    #[test]
    fn honest_page() {
        for v in [Vector::Bof, Vector::Ufs, Vector::Uaf] {
            let mut st = state(Scenario::Ssti, v, HardeningConfig::all());
            let page = st.ssti_page(b"alice", [0, 0]).unwrap();
            assert_eq!(page.nonce.len(), 16, "{v}");
            assert!(!page.ace_triggered);
            assert!(page.html.contains("Hello, alice"));
            assert!(!ssti_success(&page));
        }
    }

    #[test]
    fn escaped_name_is_not_evaluated() {
        let mut st = state(Scenario::Ssti, Vector::Uaf, HardeningConfig::none());
        let page = st.ssti_page(b"#{7*7}", [0, 0]).unwrap();
        assert!(page.html.contains("&#35;{7*7}"));
        assert_eq!(page.evaluated_count, 0);
    }

    #[test]
    fn search_is_blind() {
        let mut st = state(Scenario::Xsleak, Vector::Bof, HardeningConfig::none());
        assert_eq!(st.xsleak_pattern().unwrap(), XSLEAK_DEFAULT_PATTERN);
        let honest = st.xsleak_search(Requester::Victim, None);
        assert!(honest.steps < 1000);
        let sanitized = st.xsleak_search(Requester::Victim, Some("^t(.+){21}"));
        assert_eq!(st.xsleak_pattern().unwrap(), "t21");
        for r in [&honest, &sanitized] {
            assert_eq!((r.status, r.body), (200, BLIND_BODY));
        }
        assert_eq!(st.xsleak_store_secret(Requester::Attacker, 0, b"x").unwrap_err().code(), "EFORBIDDEN");
        assert_eq!(st.xsleak_store_secret(Requester::Victim, 3, b"x").unwrap_err().code(), "EFORBIDDEN");
    }

    #[test]
    fn planted_secret_length_is_checked() {
        let cfg = ScenarioConfig::new(Scenario::Xsleak, Vector::Bof).with_secrets(vec!["short".into()]);
        assert_eq!(ScenarioState::new(cfg).unwrap_err().code(), "EBADREQ");
    }

    #[test]
    fn wasm_backend_serves_the_same_flows() {
        let cfg = ScenarioConfig::new(Scenario::Sqli, Vector::Bof).with_backend(BackendKind::Wasm);
        let mut st = ScenarioState::new(cfg).unwrap();
        let payload = [&[b'A'; 32][..], b"SELECT 1\0"].concat();
        st.sqli_set_token(&payload).unwrap();
        assert_eq!(rows(&st.sqli_lookup(None).unwrap()), [["1"]]);
    }
}
