//! Backtracking regex engine with deterministic step accounting.
//!
//! Deliberately naive: quantifiers are explored greedily with full
//! backtracking and `{n}` expands into `n` independent backtrack points, so
//! nested repetition such as `(.+){21}` goes exponential on a miss. The
//! step counter is the timing observable used by the blind oracle.

mod matcher;
mod parse;

pub use matcher::{match_steps, MatchOutcome, StepBudget};
pub use parse::parse_regex;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegexAst {
    Literal(char),
    Dot,
    Concat(Vec<RegexAst>),
    Group(Box<RegexAst>),
    Plus(Box<RegexAst>),
    Star(Box<RegexAst>),
    RepeatExact(Box<RegexAst>, u32),
    AnchorStart,
    AnchorEnd,
}

impl RegexAst {
    /// True when the pattern can only match at offset 0.
    pub fn is_anchored_start(&self) -> bool {
        match self {
            RegexAst::AnchorStart => true,
            RegexAst::Concat(items) => items.first().is_some_and(RegexAst::is_anchored_start),
            _ => false,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            RegexAst::Literal(_) | RegexAst::Dot | RegexAst::AnchorStart | RegexAst::AnchorEnd => 1,
            RegexAst::Concat(items) => 1 + items.iter().map(RegexAst::depth).max().unwrap_or(0),
            RegexAst::Group(c) | RegexAst::Plus(c) | RegexAst::Star(c) | RegexAst::RepeatExact(c, _) => 1 + c.depth(),
        }
    }
}

impl std::fmt::Display for RegexAst {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegexAst::Literal(c) => {
                if "^$.()+*{}\\".contains(*c) {
                    write!(f, "\\{c}")
                } else {
                    write!(f, "{c}")
                }
            }
            RegexAst::Dot => f.write_str("."),
            RegexAst::Concat(items) => items.iter().try_for_each(|i| write!(f, "{i}")),
            RegexAst::Group(c) => write!(f, "({c})"),
            RegexAst::Plus(c) => write!(f, "{c}+"),
            RegexAst::Star(c) => write!(f, "{c}*"),
            RegexAst::RepeatExact(c, n) => write!(f, "{c}{{{n}}}"),
            RegexAst::AnchorStart => f.write_str("^"),
            RegexAst::AnchorEnd => f.write_str("$"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("EREGEX at offset {offset}: {message}")]
pub struct RegexError {
    pub offset: usize,
    pub message: String,
}

impl RegexError {
    pub fn code(&self) -> &'static str {
        "EREGEX"
    }
}
