use super::RegexAst;

/// Upper bound on matcher transitions for one search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepBudget {
    max_steps: u64,
}

impl StepBudget {
    pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

    /// `None` for a zero budget.
    pub fn new(max_steps: u64) -> Option<Self> {
        (max_steps > 0).then_some(Self { max_steps })
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps
    }
}

impl Default for StepBudget {
    fn default() -> Self {
        Self {
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchOutcome {
    pub matched: bool,
    pub steps: u64,
    pub budget_exceeded: bool,
}

/// Runs a leftmost backtracking search of `ast` over `subject`.
///
/// Each node entry and each retry of a quantifier alternative costs one
/// step. Unanchored patterns are attempted at every start offset. The
/// search stops as soon as the budget is spent; that is reported as a
/// non-match with `steps == max_steps`.
pub fn match_steps(ast: &RegexAst, subject: &str, budget: StepBudget) -> MatchOutcome {
    let chars: Vec<char> = subject.chars().collect();
    let mut m = Matcher {
        subject: &chars,
        steps: 0,
        max_steps: budget.max_steps,
        exhausted: false,
    };
    let last_start = if ast.is_anchored_start() { 0 } else { chars.len() };
    let mut matched = false;
    for start in 0..=last_start {
        if m.node(ast, start, &mut |_, _| true) {
            matched = true;
            break;
        }
        if m.exhausted {
            break;
        }
    }
    MatchOutcome {
        matched: matched && !m.exhausted,
        steps: m.steps,
        budget_exceeded: m.exhausted,
    }
}

type Cont<'k, 's> = dyn FnMut(&mut Matcher<'s>, usize) -> bool + 'k;

struct Matcher<'s> {
    subject: &'s [char],
    steps: u64,
    max_steps: u64,
    exhausted: bool,
}

impl<'s> Matcher<'s> {
    #[inline]
    fn tick(&mut self) -> bool {
        if self.steps >= self.max_steps {
            self.exhausted = true;
            return false;
        }
        self.steps += 1;
        true
    }

    fn node(&mut self, ast: &RegexAst, pos: usize, k: &mut Cont<'_, 's>) -> bool {
        if !self.tick() {
            return false;
        }
        match ast {
            RegexAst::Literal(c) => self.subject.get(pos) == Some(c) && k(self, pos + 1),
            RegexAst::Dot => pos < self.subject.len() && k(self, pos + 1),
            RegexAst::AnchorStart => pos == 0 && k(self, pos),
            RegexAst::AnchorEnd => pos == self.subject.len() && k(self, pos),
            RegexAst::Group(child) => self.node(child, pos, k),
            RegexAst::Concat(items) => self.seq(items, pos, k),
            RegexAst::Plus(child) => self.node(child, pos, &mut |m: &mut Self, p| m.star(child, p, k)),
            RegexAst::Star(child) => self.star(child, pos, k),
            RegexAst::RepeatExact(child, n) => self.repeat(child, *n, pos, k),
        }
    }

    fn seq(&mut self, items: &[RegexAst], pos: usize, k: &mut Cont<'_, 's>) -> bool {
        match items.split_first() {
            None => k(self, pos),
            Some((first, rest)) => self.node(first, pos, &mut |m: &mut Self, p| m.seq(rest, p, k)),
        }
    }

    /// Greedy zero-or-more. An iteration that consumes nothing ends the loop.
    fn star(&mut self, child: &RegexAst, pos: usize, k: &mut Cont<'_, 's>) -> bool {
        if self.node(child, pos, &mut |m: &mut Self, p| p != pos && m.star(child, p, k)) {
            return true;
        }
        if self.exhausted || !self.tick() {
            return false;
        }
        k(self, pos)
    }

    fn repeat(&mut self, child: &RegexAst, left: u32, pos: usize, k: &mut Cont<'_, 's>) -> bool {
        if left == 0 {
            return k(self, pos);
        }
        self.node(child, pos, &mut |m: &mut Self, p| m.repeat(child, left - 1, p, k))
    }
}
