use std::collections::BTreeMap;

use super::{QueryError, Value};

/// Built-in `users` table. Row `id = 0` is the restricted administrator.
pub const DEFAULT_FIXTURE: &str = include_str!("../../fixtures/users.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TableStore {
    tables: BTreeMap<String, Table>,
}

impl TableStore {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, t)| t)
    }

    pub fn insert(&mut self, name: impl Into<String>, table: Table) -> Result<(), QueryError> {
        if let Some(row) = table.rows.iter().position(|r| r.len() != table.columns.len()) {
            return Err(QueryError::Fixture {
                line: row + 1,
                message: "row arity differs from column count".into(),
            });
        }
        self.tables.insert(name.into(), table);
        Ok(())
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }
}

fn cell(raw: &str) -> Value {
    raw.parse::<i64>().map_or_else(|_| Value::Text(raw.to_string()), Value::Int)
}

/// Loads `TABLE name(col,...)` blocks followed by tab-separated rows.
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_fixture(text: &str) -> Result<TableStore, QueryError> {
    let mut store = TableStore::default();
    let mut current: Option<(String, Table)> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let bad = |message: &str| QueryError::Fixture {
            line: lineno,
            message: message.into(),
        };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(header) = line.strip_prefix("TABLE ") {
            if let Some((name, table)) = current.take() {
                store.insert(name, table)?;
            }
            let (name, cols) = header
                .trim()
                .strip_suffix(')')
                .and_then(|h| h.split_once('('))
                .ok_or_else(|| bad("expected `TABLE name(col,...)`"))?;
            let columns: Vec<String> = cols.split(',').map(|c| c.trim().to_string()).collect();
            if name.trim().is_empty() || columns.iter().any(String::is_empty) {
                return Err(bad("empty table or column name"));
            }
            current = Some((name.trim().to_string(), Table { columns, rows: Vec::new() }));
            continue;
        }
        let (_, table) = current.as_mut().ok_or_else(|| bad("row before any TABLE header"))?;
        let row: Vec<Value> = line.split('\t').map(cell).collect();
        if row.len() != table.columns.len() {
            return Err(bad("row arity differs from column count"));
        }
        table.rows.push(row);
    }
    if let Some((name, table)) = current {
        store.insert(name, table)?;
    }
    Ok(store)
}

pub fn default_fixture() -> TableStore {
    parse_fixture(DEFAULT_FIXTURE).expect("built-in fixture is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_fixture_has_restricted_row_zero() {
        let store = default_fixture();
        let users = store.table("users").unwrap();
        assert_eq!(users.columns, ["id", "name", "secret", "role"]);
        assert_eq!(users.rows[0][0], Value::Int(0));
        assert_eq!(users.rows[0][3], Value::Text("restricted".into()));
    }

    #[test]
    fn multiple_tables_and_errors() {
        let store = parse_fixture("TABLE a(x)\n1\n\n# note\nTABLE b(y,z)\nq\t2\n").unwrap();
        assert_eq!(store.table_names().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(store.table("B").unwrap().rows, vec![vec![Value::Text("q".into()), Value::Int(2)]]);
        assert!(matches!(parse_fixture("1\t2"), Err(QueryError::Fixture { line: 1, .. })));
        assert!(matches!(parse_fixture("TABLE a(x,y)\n1"), Err(QueryError::Fixture { line: 2, .. })));
        assert!(parse_fixture("TABLE a x").is_err());
    }
}
