use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::regexlite::{match_steps, parse_regex, StepBudget};

/// Repetition count of the catastrophic group.
pub const REPEAT: u32 = 21;
/// Length of the calibration subject: one known character plus 23 random.
pub const CALIBRATION_SUBJECT_LEN: usize = 24;

const CALIBRATION_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
/// Literal that never occurs in a subject; forces the failure path.
const UNMATCHABLE: char = '!';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Matcher steps, exposed by the test-mode header. Deterministic.
    #[default]
    Steps,
    /// Elapsed matching time in milliseconds.
    WallClock,
}

impl FromStr for OracleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "steps" => Ok(OracleMode::Steps),
            "wall" | "wall-clock" | "wall_clock" | "time" => Ok(OracleMode::WallClock),
            other => Err(format!("unknown oracle mode `{other}` (steps, wall-clock)")),
        }
    }
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleMode::Steps => "steps",
            OracleMode::WallClock => "wall-clock",
        })
    }
}

/// Shape of the probe pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternStyle {
    /// `^prefix(.+){21}`
    #[default]
    Plain,
    /// `^prefix(.+){21}!`, which can never match.
    TrailingLiteral,
}

impl FromStr for PatternStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(PatternStyle::Plain),
            "trailing" | "trailing-literal" | "trailing_literal" => Ok(PatternStyle::TrailingLiteral),
            other => Err(format!("unknown pattern style `{other}` (plain, trailing-literal)")),
        }
    }
}

impl fmt::Display for PatternStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternStyle::Plain => "plain",
            PatternStyle::TrailingLiteral => "trailing-literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub mode: OracleMode,
    /// Measurements per guess.
    pub samples: u32,
    pub style: PatternStyle,
    /// Try every candidate at each position instead of stopping at the
    /// first hit, so several hits surface as `EAMBIGUOUS`.
    pub exhaustive: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            mode: OracleMode::Steps,
            samples: 1,
            style: PatternStyle::Plain,
            exhaustive: false,
        }
    }
}

impl OracleOptions {
    pub fn wall_clock() -> Self {
        Self {
            mode: OracleMode::WallClock,
            samples: 3,
            style: PatternStyle::Plain,
            exhaustive: true,
        }
    }
}

/// Escapes regex metacharacters so `text` matches literally.
pub fn escape_literal(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if "^$.()+*?{}[]|\\".contains(c) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn tail(style: PatternStyle) -> String {
    match style {
        PatternStyle::Plain => format!("(.+){{{REPEAT}}}"),
        PatternStyle::TrailingLiteral => format!("(.+){{{REPEAT}}}{UNMATCHABLE}"),
    }
}

/// `^<prefix>(.+){21}`: slow exactly when the subject starts with `prefix`.
pub fn probe_pattern(prefix: &str, style: PatternStyle) -> String {
    format!("^{}{}", escape_literal(prefix), tail(style))
}

/// Probe for "the first secret ends after `prefix`".
pub fn terminator_pattern(prefix: &str, style: PatternStyle) -> String {
    format!("^{}\n{}", escape_literal(prefix), tail(style))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TimingSample {
    pub guess: char,
    #[serde(serialize_with = "ser_ms")]
    pub elapsed: Duration,
    pub steps: Option<u64>,
}

fn ser_ms<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

impl TimingSample {
    pub fn observable(&self, mode: OracleMode) -> f64 {
        match mode {
            OracleMode::Steps => self.steps.unwrap_or(0) as f64,
            OracleMode::WallClock => self.elapsed.as_secs_f64() * 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleDecision {
    pub guess: char,
    /// Median observable over the guess's samples.
    pub observable: f64,
    pub hit: bool,
    pub threshold: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => values[n / 2],
        _ => (values[n / 2 - 1] + values[n / 2]) / 2.0,
    }
}

/// One decision per distinct guess, in order of first appearance: hit iff
/// the median observable reaches `threshold`.
pub fn decide(samples: &[TimingSample], mode: OracleMode, threshold: f64) -> Vec<OracleDecision> {
    let mut order: Vec<char> = Vec::new();
    for s in samples {
        if !order.contains(&s.guess) {
            order.push(s.guess);
        }
    }
    order
        .into_iter()
        .map(|guess| {
            let mut obs: Vec<f64> = samples.iter().filter(|s| s.guess == guess).map(|s| s.observable(mode)).collect();
            let observable = median(&mut obs);
            OracleDecision {
                guess,
                observable,
                hit: observable >= threshold,
                threshold,
            }
        })
        .collect()
}

/// Result of the two-point calibration run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub mode: OracleMode,
    pub style: PatternStyle,
    pub subject: String,
    pub hit_pattern: String,
    pub miss_pattern: String,
    pub hit: Vec<f64>,
    pub miss: Vec<f64>,
    pub max_steps: u64,
    /// Geometric mean of the weakest hit and the strongest miss.
    pub threshold: f64,
    /// Weakest hit over strongest miss.
    pub ratio: f64,
}

impl Calibration {
    /// The hit/miss table as aligned columns.
    pub fn table(&self) -> String {
        let unit = match self.mode {
            OracleMode::Steps => "steps",
            OracleMode::WallClock => "ms",
        };
        let rows: Vec<(&str, &str, usize, f64)> = self
            .hit
            .iter()
            .enumerate()
            .map(|(i, &v)| ("hit", self.hit_pattern.as_str(), i, v))
            .chain(self.miss.iter().enumerate().map(|(i, &v)| ("miss", self.miss_pattern.as_str(), i, v)))
            .collect();
        let pw = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("pattern".len());
        let mut out = String::new();
        let _ = writeln!(out, "subject: {}", self.subject);
        let _ = writeln!(out, "{:<5} {:<pw$} {:>6} {:>14}", "case", "pattern", "sample", unit);
        for (case, pattern, i, v) in rows {
            let _ = writeln!(out, "{case:<5} {pattern:<pw$} {i:>6} {v:>14.3}");
        }
        let _ = writeln!(out, "threshold {:.3} {unit}; hit/miss ratio {:.1}", self.threshold, self.ratio);
        out
    }
}

/// Measures a known hit (`^a(.+){21}`) and a known miss (`^z(.+){21}`) on
/// `'a'` plus 23 seeded random characters, and fixes the threshold before
/// any real measurement.
pub fn calibrate(mode: OracleMode, style: PatternStyle, samples: u32, budget: StepBudget, seed: u64) -> Calibration {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut subject = String::from("a");
    for _ in 1..CALIBRATION_SUBJECT_LEN {
        subject.push(*CALIBRATION_ALPHABET.choose(&mut rng).expect("non-empty") as char);
    }
    let hit_pattern = probe_pattern("a", style);
    let miss_pattern = probe_pattern("z", style);
    let measure = |pattern: &str| -> Vec<f64> {
        let ast = parse_regex(pattern).expect("probe patterns parse");
        (0..samples.max(1))
            .map(|_| {
                let start = Instant::now();
                let o = match_steps(&ast, &subject, budget);
                let sample = TimingSample {
                    guess: '?',
                    elapsed: start.elapsed(),
                    steps: Some(o.steps),
                };
                sample.observable(mode)
            })
            .collect()
    };
    let hit = measure(&hit_pattern);
    let miss = measure(&miss_pattern);
    let min_hit = hit.iter().copied().fold(f64::INFINITY, f64::min);
    let max_miss = miss.iter().copied().fold(0.0, f64::max);
    // A zero reading (sub-resolution timer) would collapse the mean.
    let floor = match mode {
        OracleMode::Steps => 1.0,
        OracleMode::WallClock => 1e-6,
    };
    Calibration {
        mode,
        style,
        subject,
        hit_pattern,
        miss_pattern,
        hit,
        miss,
        max_steps: budget.max_steps(),
        threshold: (min_hit * max_miss.max(floor)).sqrt(),
        ratio: min_hit / max_miss.max(floor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(guess: char, s: &[u64]) -> Vec<TimingSample> {
        s.iter()
            .map(|&n| TimingSample {
                guess,
                elapsed: Duration::ZERO,
                steps: Some(n),
            })
            .collect()
    }

    #[test]
    fn decisions_use_the_median() {
        let d = decide(&steps('a', &[30, 41]), OracleMode::Steps, 5000.0);
        assert_eq!(d.len(), 1);
        assert!(!d[0].hit);
        assert_eq!(d[0].observable, 35.5);
        assert!(decide(&steps('b', &[120_000]), OracleMode::Steps, 5000.0)[0].hit);

        let ms = |guess, v: &[f64]| -> Vec<TimingSample> {
            v.iter()
                .map(|&m| TimingSample {
                    guess,
                    elapsed: Duration::from_secs_f64(m / 1e3),
                    steps: None,
                })
                .collect()
        };
        let mut samples = ms('x', &[0.1, 50.0, 60.0]);
        samples.extend(ms('y', &[0.1, 0.2, 55.0]));
        let d = decide(&samples, OracleMode::WallClock, 10.0);
        assert_eq!(d.iter().map(|d| (d.guess, d.hit)).collect::<Vec<_>>(), [('x', true), ('y', false)]);
    }

    #[test]
    fn patterns_escape_the_prefix() {
        assert_eq!(probe_pattern("ab", PatternStyle::Plain), "^ab(.+){21}");
        assert_eq!(probe_pattern("a.b", PatternStyle::TrailingLiteral), "^a\\.b(.+){21}!");
        assert_eq!(terminator_pattern("ab", PatternStyle::Plain), "^ab\n(.+){21}");
        for p in [probe_pattern("x+(y)", PatternStyle::Plain), terminator_pattern("$", PatternStyle::TrailingLiteral)] {
            parse_regex(&p).unwrap();
        }
        assert_eq!(escape_literal("a{2}"), "a\\{2\\}");
    }

    #[test]
    fn step_calibration_separates() {
        for style in [PatternStyle::Plain, PatternStyle::TrailingLiteral] {
            let c = calibrate(OracleMode::Steps, style, 1, StepBudget::default(), 7);
            assert!(c.ratio >= 100.0, "{style}: {}", c.table());
            assert!(c.miss[0] < c.threshold && c.threshold < c.hit[0]);
            assert_eq!(c.subject.len(), CALIBRATION_SUBJECT_LEN);
        }
    }

    #[test]
    fn table_is_aligned() {
        let c = calibrate(OracleMode::Steps, PatternStyle::Plain, 2, StepBudget::new(50_000).unwrap(), 1);
        let t = c.table();
        let lines: Vec<&str> = t.lines().skip(1).take(5).collect();
        assert_eq!(lines.len(), 5);
        assert!(lines.windows(2).all(|w| w[0].len() == w[1].len()), "{t}");
    }
}
