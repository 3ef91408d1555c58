//! Line-oriented call scripts and the differential runner.
//!
//! ```text
//! # comment
//! HARDEN canaries,checked_copy     (before SCENARIO)
//! SCENARIO sqli bof                (instantiates and calls init)
//! WRITE 0x1e000 41414141
//! CALL sqli_set_token 0x1e000 4
//! EXPECT_SNAPSHOT sqli_bof.snap
//! ```

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::linmem::HardeningConfig;

use super::{instantiate, Backend, BackendKind, DiffRange, HostError, Scenario, Snapshot, Vector};

/// Environment variable that forces golden snapshots to be rewritten.
pub const BLESS_ENV: &str = "LAB_BLESS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptStep {
    Call { name: String, args: Vec<u32> },
    Write { addr: u32, data: Vec<u8> },
    ExpectSnapshot(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub scenario: Scenario,
    pub vector: Option<Vector>,
    pub hardening: HardeningConfig,
    /// Steps with their 1-based source line.
    pub steps: Vec<(usize, ScriptStep)>,
}

impl Script {
    /// A script that only instantiates.
    pub fn empty(scenario: Scenario) -> Self {
        Self {
            scenario,
            vector: None,
            hardening: HardeningConfig::none(),
            steps: Vec::new(),
        }
    }
}

fn script_err(line: usize, message: impl Into<String>) -> HostError {
    HostError::Script {
        line,
        message: message.into(),
    }
}

fn parse_u32(tok: &str) -> Option<u32> {
    match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16).ok(),
        None => tok.parse().ok(),
    }
}

/// Decodes an even-length hex string.
pub fn decode_hex(tok: &str) -> Option<Vec<u8>> {
    if tok.len() % 2 != 0 {
        return None;
    }
    (0..tok.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(tok.get(i..i + 2)?, 16).ok())
        .collect()
}

pub fn parse_script(text: &str) -> Result<Script, HostError> {
    let mut header: Option<(Scenario, Option<Vector>)> = None;
    let mut hardening = HardeningConfig::none();
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        let Some(op) = toks.next() else { continue };
        let rest: Vec<&str> = toks.collect();
        match op.to_ascii_uppercase().as_str() {
            "SCENARIO" => {
                if header.is_some() {
                    return Err(script_err(line, "SCENARIO given twice"));
                }
                let (name, vector) = match rest.as_slice() {
                    [s] => (*s, None),
                    [s, v] => (*s, Some(v.parse::<Vector>().map_err(|e| script_err(line, e))?)),
                    _ => return Err(script_err(line, "usage: SCENARIO name [vector]")),
                };
                let scenario = name.parse::<Scenario>().map_err(|e| script_err(line, e.to_string()))?;
                header = Some((scenario, vector));
            }
            "HARDEN" => {
                if header.is_some() {
                    return Err(script_err(line, "HARDEN must precede SCENARIO"));
                }
                hardening = HardeningConfig::parse_list(&rest.join(",")).map_err(|e| script_err(line, e))?;
            }
            op @ ("CALL" | "WRITE" | "EXPECT_SNAPSHOT") => {
                if header.is_none() {
                    return Err(script_err(line, format!("{op} before SCENARIO")));
                }
                let step = match op {
                    "CALL" => {
                        let (name, args) = rest.split_first().ok_or_else(|| script_err(line, "CALL needs an export name"))?;
                        let args = args
                            .iter()
                            .map(|a| parse_u32(a).ok_or_else(|| script_err(line, format!("bad integer `{a}`"))))
                            .collect::<Result<_, _>>()?;
                        ScriptStep::Call { name: name.to_string(), args }
                    }
                    "WRITE" => match rest.as_slice() {
                        [addr, hex] => ScriptStep::Write {
                            addr: parse_u32(addr).ok_or_else(|| script_err(line, format!("bad address `{addr}`")))?,
                            data: decode_hex(hex).ok_or_else(|| script_err(line, format!("bad hex bytes `{hex}`")))?,
                        },
                        _ => return Err(script_err(line, "usage: WRITE addr hexbytes")),
                    },
                    _ => match rest.as_slice() {
                        [file] => ScriptStep::ExpectSnapshot(PathBuf::from(file)),
                        _ => return Err(script_err(line, "usage: EXPECT_SNAPSHOT file")),
                    },
                };
                steps.push((line, step));
            }
            other => return Err(script_err(line, format!("unknown directive `{other}`"))),
        }
    }
    let (scenario, vector) = header.ok_or_else(|| script_err(0, "missing SCENARIO line"))?;
    Ok(Script {
        scenario,
        vector,
        hardening,
        steps,
    })
}

/// What one step did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum StepOutcome {
    Call {
        name: String,
        /// Return value, or the error code on a trap.
        result: Result<u32, String>,
        output: Vec<u8>,
    },
    Write {
        result: Result<(), String>,
    },
    Snapshot {
        file: PathBuf,
        matched: bool,
        blessed: bool,
    },
}

#[derive(Debug, Clone)]
pub struct ScriptRun {
    pub init: Result<u32, String>,
    pub outcomes: Vec<StepOutcome>,
    pub final_snapshot: Snapshot,
}

/// Runs a script. Guest faults are recorded, not returned; only
/// instantiation or snapshot-file problems fail the run. Relative snapshot
/// paths resolve against `snapshot_dir`.
pub fn run_script(script: &Script, kind: BackendKind, snapshot_dir: &Path) -> Result<ScriptRun, HostError> {
    let mut backend = instantiate(kind, script.scenario, script.hardening)?;
    let init = match script.vector {
        Some(v) => backend.call_export("init", &[v.code()]).map_err(|e| e.fault_code().to_string()),
        None => Ok(0),
    };
    let mut outcomes = Vec::with_capacity(script.steps.len());
    for (line, step) in &script.steps {
        let outcome = match step {
            ScriptStep::Call { name, args } => {
                let result = backend.call_export(name, args).map_err(|e| e.fault_code().to_string());
                StepOutcome::Call {
                    name: name.clone(),
                    result,
                    output: backend.take_output(),
                }
            }
            ScriptStep::Write { addr, data } => StepOutcome::Write {
                result: backend.write_memory(*addr, data).map_err(|e| e.code().to_string()),
            },
            ScriptStep::ExpectSnapshot(file) => {
                let path = snapshot_dir.join(file);
                let (matched, blessed) = check_golden(backend.as_ref(), &path).map_err(|m| script_err(*line, m))?;
                StepOutcome::Snapshot {
                    file: file.clone(),
                    matched,
                    blessed,
                }
            }
        };
        outcomes.push(outcome);
    }
    Ok(ScriptRun {
        init,
        outcomes,
        final_snapshot: backend.snapshot(),
    })
}

/// Compares the backend's snapshot with a golden file, writing the file if
/// it is missing or blessing is requested.
pub fn check_golden(backend: &dyn Backend, path: &Path) -> Result<(bool, bool), String> {
    let current = backend.snapshot();
    if !path.exists() || std::env::var_os(BLESS_ENV).is_some() {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        }
        std::fs::write(path, current.to_bytes()).map_err(|e| format!("{}: {e}", path.display()))?;
        return Ok((true, true));
    }
    let raw = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let golden = Snapshot::from_bytes(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((golden == current, false))
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffReport {
    pub scenario: Scenario,
    pub backends: [BackendKind; 2],
    pub steps: usize,
    /// Indices (0 = init) of steps whose outcomes differ.
    pub outcome_mismatches: Vec<usize>,
    pub memory_diff: Vec<DiffRange>,
    pub allocator_equal: bool,
}

impl DiffReport {
    pub fn identical(&self) -> bool {
        self.outcome_mismatches.is_empty() && self.memory_diff.is_empty() && self.allocator_equal
    }

    pub fn differing_bytes(&self) -> u64 {
        self.memory_diff.iter().map(|r| r.len as u64).sum()
    }
}

/// Runs `script` on two backends and compares every return value and the
/// final snapshots byte-wise.
pub fn diff_backends(script: &Script, a: BackendKind, b: BackendKind, snapshot_dir: &Path) -> Result<DiffReport, HostError> {
    let ra = run_script(script, a, snapshot_dir)?;
    let rb = run_script(script, b, snapshot_dir)?;
    let mut outcome_mismatches = Vec::new();
    if ra.init != rb.init {
        outcome_mismatches.push(0);
    }
    for (i, (x, y)) in ra.outcomes.iter().zip(&rb.outcomes).enumerate() {
        if !same_outcome(x, y) {
            outcome_mismatches.push(i + 1);
        }
    }
    Ok(DiffReport {
        scenario: script.scenario,
        backends: [a, b],
        steps: script.steps.len(),
        outcome_mismatches,
        memory_diff: ra.final_snapshot.diff(&rb.final_snapshot),
        allocator_equal: ra.final_snapshot.allocator == rb.final_snapshot.allocator,
    })
}

/// Equal outcomes, except that only one run may have written a golden file.
fn same_outcome(a: &StepOutcome, b: &StepOutcome) -> bool {
    match (a, b) {
        (
            StepOutcome::Snapshot { file: fa, matched: ma, .. },
            StepOutcome::Snapshot { file: fb, matched: mb, .. },
        ) => fa == fb && ma == mb,
        _ => a == b,
    }
}

/// Simulator versus WebAssembly guest.
pub fn diff_outcomes(script: &Script, snapshot_dir: &Path) -> Result<DiffReport, HostError> {
    diff_backends(script, BackendKind::Sim, BackendKind::Wasm, snapshot_dir)
}
