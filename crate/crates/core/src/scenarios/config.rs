use serde::Serialize;

use super::state::DEFAULT_SECRETS;
use super::FrontendPolicy;
use crate::host::{BackendKind, Scenario, Vector};
use crate::linmem::HardeningConfig;
use crate::regexlite::StepBudget;

pub const PORT_ENV: &str = "LAB_PORT";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub vector: Vector,
    pub hardening: HardeningConfig,
    pub backend: BackendKind,
    pub policy: FrontendPolicy,
    /// Victim secrets for slots 0..3 of the search guest.
    pub secrets: Vec<String>,
    pub max_steps: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, vector: Vector) -> Self {
        Self {
            scenario,
            vector,
            hardening: HardeningConfig::none(),
            backend: BackendKind::Sim,
            policy: FrontendPolicy::default(),
            secrets: DEFAULT_SECRETS.iter().map(|s| s.to_string()).collect(),
            max_steps: StepBudget::DEFAULT_MAX_STEPS,
        }
    }

    pub fn with_hardening(mut self, hardening: HardeningConfig) -> Self {
        self.hardening = hardening;
        self
    }

    pub fn with_backend(mut self, backend: BackendKind) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_policy(mut self, policy: FrontendPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Replaces the planted secret (slot 0) and keeps the others.
    pub fn with_planted(mut self, secret: impl Into<String>) -> Self {
        self.secrets[0] = secret.into();
        self
    }

    pub fn with_secrets(mut self, secrets: Vec<String>) -> Self {
        self.secrets = secrets;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServeConfig {
    pub scenario: ScenarioConfig,
    pub bind: String,
    /// Port from the config file, if any.
    pub port: Option<u16>,
    /// Exposes the step counter on search responses.
    pub test_mode: bool,
}

impl ServeConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            scenario,
            bind: "127.0.0.1".to_string(),
            port: None,
            test_mode: false,
        }
    }

    /// Command-line flag, then `LAB_PORT`, then the config file, then 8080.
    pub fn resolve_port(&self, flag: Option<u16>) -> Result<u16, String> {
        if let Some(p) = flag {
            return Ok(p);
        }
        if let Ok(raw) = std::env::var(PORT_ENV) {
            return raw.trim().parse().map_err(|_| format!("{PORT_ENV}={raw:?} is not a port number"));
        }
        Ok(self.port.unwrap_or(DEFAULT_PORT))
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// Parses a `key = value` config file. Blank lines and `#` comments are
/// ignored; `scenario` is required.
pub fn parse_config(text: &str) -> Result<ServeConfig, String> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        pairs.push((i + 1, k.trim().to_ascii_lowercase(), v.trim().to_string()));
    }
    let scenario = pairs
        .iter()
        .find(|(_, k, _)| k == "scenario")
        .ok_or("missing `scenario`")?
        .2
        .parse::<Scenario>()
        .map_err(|e| e.to_string())?;
    let mut cfg = ServeConfig::new(ScenarioConfig::new(scenario, Vector::Bof));
    let sc = &mut cfg.scenario;
    for (line, key, value) in pairs {
        let bad = |what: &str| format!("line {line}: {what}");
        match key.as_str() {
            "scenario" => {}
            "vector" => sc.vector = value.parse().map_err(|e: String| bad(&e))?,
            "hardening" => sc.hardening = HardeningConfig::parse_list(&value).map_err(|e| bad(&e))?,
            "backend" => sc.backend = value.parse().map_err(|e: String| bad(&e))?,
            "id_nonzero_check" => sc.policy.id_nonzero_check = parse_bool(&value).ok_or_else(|| bad("expected a boolean"))?,
            "pattern_sanitizer" => sc.policy.pattern_sanitizer = parse_bool(&value).ok_or_else(|| bad("expected a boolean"))?,
            "auth_token" => sc.policy.auth_token = value,
            "secret0" | "secret1" | "secret2" => {
                let slot = key.as_bytes()[6] - b'0';
                sc.secrets[slot as usize] = value;
            }
            "max_steps" => sc.max_steps = value.parse().map_err(|_| bad("expected an integer"))?,
            "port" => cfg.port = Some(value.parse().map_err(|_| bad("expected a port number"))?),
            "bind" => cfg.bind = value,
            "test_mode" => cfg.test_mode = parse_bool(&value).ok_or_else(|| bad("expected a boolean"))?,
            other => return Err(bad(&format!("unknown key `{other}`"))),
        }
    }
    Ok(cfg)
}
