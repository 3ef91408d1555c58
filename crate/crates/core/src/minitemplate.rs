//! Interpolating template renderer. `#{expr}` evaluates integer arithmetic
//! over a context; `#{exec(...)}` stands in for code execution and only
//! raises a flag.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

pub const ACE_MARKER: &str = "[ACE]";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("ETPL at offset {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("EDIV0 at offset {offset}: division by zero")]
    DivByZero { offset: usize },
}

impl TemplateError {
    pub fn code(&self) -> &'static str {
        match self {
            TemplateError::Malformed { .. } => "ETPL",
            TemplateError::DivByZero { .. } => "EDIV0",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct RenderReport {
    pub output: String,
    pub evaluated_count: u32,
    pub ace_triggered: bool,
}

pub type Context = BTreeMap<String, i64>;

/// Renders `source`. A `#` not followed by `{` is literal text.
pub fn compile_and_render(source: &str, context: &Context) -> Result<RenderReport, TemplateError> {
    let mut report = RenderReport::default();
    let mut rest = source;
    let mut base = 0;
    while let Some(at) = rest.find("#{") {
        report.output.push_str(&rest[..at]);
        let expr_start = base + at + 2;
        let body = &rest[at + 2..];
        let close = body.find('}').ok_or_else(|| malformed(expr_start - 2, "unterminated interpolation"))?;
        let expr = &body[..close];
        if expr.contains("#{") || expr.contains('{') {
            return Err(malformed(expr_start, "nested interpolation"));
        }
        if is_exec_sentinel(expr) {
            report.output.push_str(ACE_MARKER);
            report.ace_triggered = true;
        } else {
            let value = Eval::new(expr, expr_start, context).run()?;
            report.output.push_str(&value.to_string());
        }
        report.evaluated_count += 1;
        let consumed = at + 2 + close + 1;
        rest = &rest[consumed..];
        base += consumed;
    }
    report.output.push_str(rest);
    Ok(report)
}

fn is_exec_sentinel(expr: &str) -> bool {
    let expr = expr.trim();
    expr.starts_with("exec(") && expr.ends_with(')')
}

fn malformed(offset: usize, message: &str) -> TemplateError {
    TemplateError::Malformed {
        offset,
        message: message.into(),
    }
}

/// Page shell for the SSTI scenario. The nonce is pasted into the source
/// text before compilation, so anything it contains is template code.
pub fn build_page(nonce: &str, body: &str) -> String {
    format!(
        "<!doctype html><html><head><script nonce=\"{nonce}\">window.lab = {{ ready: true }};</script></head><body>{body}</body></html>"
    )
}

/// Escapes user data for the page body, including `#`, so it cannot open
/// an interpolation.
pub fn escape_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '#' => out.push_str("&#35;"),
            c => out.push(c),
        }
    }
    out
}

struct Eval<'a> {
    src: &'a [u8],
    pos: usize,
    base: usize,
    ctx: &'a Context,
}

impl<'a> Eval<'a> {
    fn new(expr: &'a str, base: usize, ctx: &'a Context) -> Self {
        Self {
            src: expr.as_bytes(),
            pos: 0,
            base,
            ctx,
        }
    }

    fn err(&self, message: &str) -> TemplateError {
        malformed(self.base + self.pos, message)
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn run(mut self) -> Result<i64, TemplateError> {
        let v = self.expr()?;
        if self.peek().is_some() {
            return Err(self.err("unexpected token"));
        }
        Ok(v)
    }

    fn expr(&mut self) -> Result<i64, TemplateError> {
        let mut acc = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == b'+' { acc.checked_add(rhs) } else { acc.checked_sub(rhs) }
                .ok_or_else(|| self.err("integer overflow"))?;
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<i64, TemplateError> {
        let mut acc = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            let at = self.base + self.pos;
            self.pos += 1;
            let rhs = self.unary()?;
            acc = if op == b'*' {
                acc.checked_mul(rhs).ok_or_else(|| self.err("integer overflow"))?
            } else if rhs == 0 {
                return Err(TemplateError::DivByZero { offset: at });
            } else {
                acc.checked_div(rhs).ok_or_else(|| self.err("integer overflow"))?
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<i64, TemplateError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let v = self.unary()?;
            return v.checked_neg().ok_or_else(|| self.err("integer overflow"));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<i64, TemplateError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                    self.pos += 1;
                }
                let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                digits.parse().map_err(|_| malformed(self.base + start, "integer literal too large"))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.src.get(self.pos).is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                self.ctx
                    .get(name)
                    .copied()
                    .ok_or_else(|| malformed(self.base + start, &format!("unknown identifier `{name}`")))
            }
            Some(_) => Err(self.err("expected a number, identifier or `(`")),
            None => Err(self.err("empty expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn render(src: &str) -> Result<RenderReport, TemplateError> {
        compile_and_render(src, &Context::new())
    }

    #[test]
    fn arithmetic() {
        assert_eq!(render("n=#{7*7}").unwrap().output, "n=49");
        assert_eq!(render("#{1+2*3}|#{(1+2)*3}|#{-7/2}|#{7/-2}|#{--3}").unwrap().output, "7|9|-3|-3|3");
        let ctx = Context::from([("visits".to_string(), 41)]);
        assert_eq!(compile_and_render("#{visits + 1}", &ctx).unwrap().output, "42");
    }

    #[test]
    fn plain_text() {
        let r = render("hello").unwrap();
        assert_eq!((r.output.as_str(), r.evaluated_count, r.ace_triggered), ("hello", 0, false));
        assert_eq!(render("a # b #x {}").unwrap().output, "a # b #x {}");
    }

    #[test]
    fn exec_sentinel_only_sets_a_flag() {
        let r = render("#{exec(whoami)}").unwrap();
        assert!(r.ace_triggered);
        assert_eq!(r.output, ACE_MARKER);
        assert_eq!(r.evaluated_count, 1);
        assert!(render("#{1 + exec(x)}").is_err());
    }

    #[test]
    fn errors() {
        assert_eq!(render("#{1/0}").unwrap_err(), TemplateError::DivByZero { offset: 3 });
        assert_eq!(render("ab#{7*").unwrap_err().code(), "ETPL");
        assert_eq!(render("#{}").unwrap_err().code(), "ETPL");
        assert_eq!(render("#{a #{b}}").unwrap_err().code(), "ETPL");
        assert_eq!(render("#{nope}").unwrap_err().code(), "ETPL");
        assert_eq!(render("#{9223372036854775807 + 1}").unwrap_err().code(), "ETPL");
        assert_eq!(render("#{(1}").unwrap_err().code(), "ETPL");
    }

    #[test]
    fn page_carries_the_nonce_verbatim() {
        let r = render(&build_page("a1b2", "hi")).unwrap();
        assert!(r.output.contains("nonce=\"a1b2\""));
        assert_eq!(r.evaluated_count, 0);
        let r = render(&build_page("#{7*7}", "hi")).unwrap();
        assert!(r.output.contains("nonce=\"49\""));
        assert!(render(&build_page("#{exec(x)}", "")).unwrap().ace_triggered);
    }

    #[test]
    fn escaped_user_data_is_inert() {
        let body = escape_html("#{7*7}<b>");
        assert_eq!(render(&body).unwrap().output, "&#35;{7*7}&lt;b&gt;");
    }

    /// Reference evaluator over an explicit tree.
    #[derive(Debug, Clone)]
    enum E {
        N(i64),
        Neg(Box<E>),
        Bin(Box<E>, char, Box<E>),
    }

    impl E {
        fn eval(&self) -> Option<i64> {
            match self {
                E::N(n) => Some(*n),
                E::Neg(e) => e.eval()?.checked_neg(),
                E::Bin(a, op, b) => {
                    let (a, b) = (a.eval()?, b.eval()?);
                    match op {
                        '+' => a.checked_add(b),
                        '-' => a.checked_sub(b),
                        '*' => a.checked_mul(b),
                        _ => a.checked_div(b),
                    }
                }
            }
        }

        fn text(&self) -> String {
            match self {
                E::N(n) => n.to_string(),
                E::Neg(e) => format!("-({})", e.text()),
                E::Bin(a, op, b) => format!("({} {op} {})", a.text(), b.text()),
            }
        }
    }

    fn expr_tree() -> impl Strategy<Value = E> {
        (0i64..1000).prop_map(E::N).prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| E::Neg(Box::new(e))),
                (inner.clone(), prop::sample::select(vec!['+', '-', '*', '/']), inner)
                    .prop_map(|(a, op, b)| E::Bin(Box::new(a), op, Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn matches_reference_evaluator(e in expr_tree()) {
            let got = render(&format!("#{{{}}}", e.text()));
            match e.eval() {
                Some(v) => prop_assert_eq!(got.unwrap().output, v.to_string()),
                None => prop_assert!(got.is_err()),
            }
        }

        #[test]
        fn text_without_hash_is_unchanged(s in "[^#]{0,64}") {
            prop_assert_eq!(render(&s).unwrap().output, s);
        }

        #[test]
        fn hex_nonces_are_inert(nonce in "[0-9a-f]{1,32}") {
            let r = render(&build_page(&nonce, "")).unwrap();
            prop_assert!(!r.ace_triggered);
            prop_assert_eq!(r.evaluated_count, 0);
            let needle = format!("nonce=\"{}\"", nonce);
            prop_assert!(r.output.contains(&needle));
        }
    }
}
