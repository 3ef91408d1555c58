use super::{QueryError, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectItem {
    Column(String),
    Const(Value),
}

impl SelectItem {
    /// Result column heading.
    pub fn label(&self) -> String {
        match self {
            SelectItem::Column(c) => c.clone(),
            SelectItem::Const(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    /// Positional placeholder, numbered from 0 in source order.
    Slot(u32),
    Const(Value),
}

/// `SELECT items [FROM table [WHERE col = operand]] [;]`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub items: Vec<SelectItem>,
    pub from: Option<String>,
    pub filter: Option<(String, Operand)>,
    pub slot_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Int(i64),
    Str(String),
    Comma,
    Eq,
    Slot,
    Semi,
}

fn syntax(offset: usize, message: impl Into<String>) -> QueryError {
    QueryError::Syntax {
        offset,
        message: message.into(),
    }
}

fn lex(sql: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let b = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let start = i;
        let c = b[i];
        let tok = match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b',' => Tok::Comma,
            b'=' => Tok::Eq,
            b'?' => Tok::Slot,
            b';' => Tok::Semi,
            b'\'' => {
                let mut text = String::new();
                i += 1;
                loop {
                    match b.get(i) {
                        None => return Err(syntax(start, "unterminated string literal")),
                        Some(b'\'') if b.get(i + 1) == Some(&b'\'') => {
                            text.push('\'');
                            i += 2;
                        }
                        Some(b'\'') => break,
                        Some(&other) => {
                            text.push(other as char);
                            i += 1;
                        }
                    }
                }
                out.push((start, Tok::Str(text)));
                i += 1;
                continue;
            }
            b'0'..=b'9' | b'-' => {
                i += 1;
                while b.get(i).is_some_and(u8::is_ascii_digit) {
                    i += 1;
                }
                let n = sql[start..i]
                    .parse::<i64>()
                    .map_err(|_| syntax(start, "bad integer literal"))?;
                out.push((start, Tok::Int(n)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while b.get(i).is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Word(sql[start..i].to_string())));
                continue;
            }
            _ => return Err(syntax(start, format!("unexpected character {:?}", c as char))),
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

fn is_keyword(word: &str) -> bool {
    ["select", "from", "where"].iter().any(|k| word.eq_ignore_ascii_case(k))
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    slots: u32,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        match self.peek() {
            Some(Tok::Word(w)) if !is_keyword(w) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(syntax(self.offset(), format!("expected {what}"))),
        }
    }

    fn constant(&mut self) -> Option<Value> {
        let v = match self.peek()? {
            Tok::Int(n) => Value::Int(*n),
            Tok::Str(s) => Value::Text(s.clone()),
            _ => return None,
        };
        self.pos += 1;
        Some(v)
    }

    fn item(&mut self) -> Result<SelectItem, QueryError> {
        if let Some(v) = self.constant() {
            return Ok(SelectItem::Const(v));
        }
        self.ident("a column or constant").map(SelectItem::Column)
    }

    fn query(&mut self) -> Result<Query, QueryError> {
        if !self.keyword("select") {
            return Err(syntax(self.offset(), "expected SELECT"));
        }
        let mut items = vec![self.item()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            items.push(self.item()?);
        }
        let mut from = None;
        let mut filter = None;
        if self.keyword("from") {
            from = Some(self.ident("a table name")?);
            if self.keyword("where") {
                let col = self.ident("a column name")?;
                if self.peek() != Some(&Tok::Eq) {
                    return Err(syntax(self.offset(), "expected `=`"));
                }
                self.pos += 1;
                let operand = if self.peek() == Some(&Tok::Slot) {
                    self.pos += 1;
                    self.slots += 1;
                    Operand::Slot(self.slots - 1)
                } else {
                    let at = self.offset();
                    Operand::Const(self.constant().ok_or_else(|| syntax(at, "expected `?` or a constant"))?)
                };
                filter = Some((col, operand));
            }
        } else if items.iter().any(|i| matches!(i, SelectItem::Column(_))) {
            // Column references need a table.
            return Err(syntax(self.offset(), "expected FROM"));
        }
        if self.peek() == Some(&Tok::Semi) {
            self.pos += 1;
        }
        if self.pos < self.toks.len() {
            return Err(syntax(self.offset(), "trailing input"));
        }
        Ok(Query {
            items,
            from,
            filter,
            slot_count: self.slots,
        })
    }
}

/// Parses one statement. Placeholders inside string literals are data.
pub fn parse_query(sql: &str) -> Result<Query, QueryError> {
    let mut p = Parser {
        toks: lex(sql)?,
        pos: 0,
        end: sql.len(),
        slots: 0,
    };
    p.query()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_template() {
        let q = parse_query("SELECT name FROM users WHERE id = ?").unwrap();
        assert_eq!(q.slot_count, 1);
        assert_eq!(q.items, vec![SelectItem::Column("name".into())]);
        assert_eq!(q.filter, Some(("id".into(), Operand::Slot(0))));
    }

    #[test]
    fn bare_constants() {
        let q = parse_query("select 1, 'x''y', -7;").unwrap();
        assert_eq!(q.from, None);
        assert_eq!(q.slot_count, 0);
        assert_eq!(
            q.items,
            vec![
                SelectItem::Const(Value::Int(1)),
                SelectItem::Const(Value::Text("x'y".into())),
                SelectItem::Const(Value::Int(-7))
            ]
        );
    }

    #[test]
    fn placeholders_in_strings_do_not_count() {
        let q = parse_query("SELECT id FROM users WHERE name = '?'").unwrap();
        assert_eq!(q.slot_count, 0);
    }

    #[test]
    fn syntax_errors_point_at_the_bad_token() {
        let off = |s: &str| match parse_query(s) {
            Err(QueryError::Syntax { offset, .. }) => offset,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(off("SELECT FROM WHERE"), 7);
        assert_eq!(off("SELECT name"), 11);
        assert_eq!(off("UPDATE users"), 0);
        assert_eq!(off("SELECT 1 FROM users WHERE id"), 28);
        assert_eq!(off("SELECT 1 FROM users WHERE id = name"), 31);
        assert_eq!(off("SELECT 'abc"), 7);
        assert_eq!(off("SELECT 1 garbage"), 9);
        assert_eq!(off("SELECT 1 # x"), 9);
        assert_eq!(off(""), 0);
    }
}
