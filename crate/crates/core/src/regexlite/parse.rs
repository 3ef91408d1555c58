use super::{RegexAst, RegexError};

/// Largest accepted `{n}`.
const MAX_REPEAT: u32 = 1000;

/// Parses `^? term* $?` where `term := atom ('+' | '*' | '{n}')?` and
/// `atom := literal | '.' | '(' term* ')'`. A backslash escapes the next
/// character.
pub fn parse_regex(pattern: &str) -> Result<RegexAst, RegexError> {
    let chars: Vec<char> = pattern.chars().collect();
    let mut p = Parser { chars: &chars, pos: 0 };
    let mut items = Vec::new();
    if p.peek() == Some('^') {
        p.pos += 1;
        items.push(RegexAst::AnchorStart);
    }
    items.extend(p.terms(0)?);
    if p.peek() == Some('$') {
        p.pos += 1;
        items.push(RegexAst::AnchorEnd);
    }
    if let Some(c) = p.peek() {
        let message = match c {
            ')' => "unbalanced `)`".to_string(),
            other => format!("unexpected `{other}`"),
        };
        return Err(p.err(message));
    }
    Ok(RegexAst::Concat(items))
}

struct Parser<'a> {
    chars: &'a [char],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn err(&self, message: impl Into<String>) -> RegexError {
        RegexError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn terms(&mut self, depth: usize) -> Result<Vec<RegexAst>, RegexError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            match c {
                ')' if depth > 0 => break,
                ')' => return Err(self.err("unbalanced `)`")),
                // `$` only closes the whole pattern.
                '$' if depth == 0 && self.pos + 1 == self.chars.len() => break,
                _ => out.push(self.term(depth)?),
            }
        }
        Ok(out)
    }

    fn term(&mut self, depth: usize) -> Result<RegexAst, RegexError> {
        let atom = self.atom(depth)?;
        let quantified = match self.peek() {
            Some('+') => {
                self.pos += 1;
                RegexAst::Plus(Box::new(atom))
            }
            Some('*') => {
                self.pos += 1;
                RegexAst::Star(Box::new(atom))
            }
            Some('{') => {
                let n = self.repeat_count()?;
                RegexAst::RepeatExact(Box::new(atom), n)
            }
            _ => return Ok(atom),
        };
        if matches!(self.peek(), Some('+' | '*' | '{')) {
            return Err(self.err("repetition of a repetition"));
        }
        Ok(quantified)
    }

    fn atom(&mut self, depth: usize) -> Result<RegexAst, RegexError> {
        let c = self.peek().ok_or_else(|| self.err("expected an atom"))?;
        match c {
            '.' => {
                self.pos += 1;
                Ok(RegexAst::Dot)
            }
            '(' => {
                let open = self.pos;
                self.pos += 1;
                let mut inner = self.terms(depth + 1)?;
                if self.peek() != Some(')') {
                    return Err(RegexError {
                        offset: open,
                        message: "unbalanced `(`".into(),
                    });
                }
                self.pos += 1;
                let child = if inner.len() == 1 {
                    inner.pop().unwrap()
                } else {
                    RegexAst::Concat(inner)
                };
                Ok(RegexAst::Group(Box::new(child)))
            }
            '\\' => {
                let escaped = self.chars.get(self.pos + 1).copied().ok_or_else(|| self.err("dangling escape"))?;
                self.pos += 2;
                Ok(RegexAst::Literal(escaped))
            }
            '+' | '*' | '{' => Err(self.err(format!("`{c}` has nothing to repeat"))),
            '^' | '$' | '}' => Err(self.err(format!("`{c}` is not allowed here"))),
            literal => {
                self.pos += 1;
                Ok(RegexAst::Literal(literal))
            }
        }
    }

    fn repeat_count(&mut self) -> Result<u32, RegexError> {
        let open = self.pos;
        self.pos += 1;
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let digits: String = self.chars[start..self.pos].iter().collect();
        let bad = |message: &str| RegexError {
            offset: open,
            message: message.into(),
        };
        if self.peek() != Some('}') || digits.is_empty() {
            return Err(bad("bad repetition: expected `{n}`"));
        }
        self.pos += 1;
        match digits.parse::<u32>() {
            Ok(n) if (1..=MAX_REPEAT).contains(&n) => Ok(n),
            _ => Err(bad("bad repetition count")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use RegexAst::*;

    fn lit(c: char) -> RegexAst {
        Literal(c)
    }

    #[test]
    fn simple_sequence() {
        assert_eq!(
            parse_regex("^a.b").unwrap(),
            Concat(vec![AnchorStart, lit('a'), Dot, lit('b')])
        );
    }

    #[test]
    fn redos_vector_shape() {
        let ast = parse_regex("^secret_prefix(.+){21}").unwrap();
        let RegexAst::Concat(items) = &ast else { panic!() };
        assert_eq!(items.len(), 1 + 13 + 1);
        assert_eq!(items[0], AnchorStart);
        assert!(items[1..14].iter().all(|i| matches!(i, Literal(_))));
        assert_eq!(items[14], RepeatExact(Box::new(Group(Box::new(Plus(Box::new(Dot))))), 21));
        assert!(ast.is_anchored_start());
        assert_eq!(ast.to_string(), "^secret_prefix(.+){21}");
    }

    #[test]
    fn groups_and_anchors() {
        assert_eq!(
            parse_regex("(ab)*$").unwrap(),
            Concat(vec![Star(Box::new(Group(Box::new(Concat(vec![lit('a'), lit('b')]))))), AnchorEnd])
        );
        assert_eq!(parse_regex("").unwrap(), Concat(vec![]));
        assert_eq!(parse_regex("()").unwrap(), Concat(vec![Group(Box::new(Concat(vec![])))]));
        assert_eq!(parse_regex("\\.").unwrap(), Concat(vec![lit('.')]));
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(parse_regex("(.+").unwrap_err().offset, 0);
        assert_eq!(parse_regex("ab)").unwrap_err().offset, 2);
        assert!(parse_regex("a{0}").is_err());
        assert!(parse_regex("a{}").is_err());
        assert!(parse_regex("a{3").is_err());
        assert!(parse_regex("a{99999}").is_err());
        assert!(parse_regex("+a").is_err());
        assert!(parse_regex("a**").is_err());
        assert!(parse_regex("a^").is_err());
        assert!(parse_regex("a$b").is_err());
        assert!(parse_regex("\\").is_err());
    }
}
