//! A deliberately small prepared-statement engine over in-memory tables.
//!
//! The statement text is re-read and re-parsed at execute time, so whatever
//! the template bytes say when the query runs is what gets evaluated.

mod parse;
mod store;

pub use parse::{parse_query, Operand, Query, SelectItem};
pub use store::{default_fixture, parse_fixture, Table, TableStore, DEFAULT_FIXTURE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Text(String),
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Text(t) => write!(f, "'{}'", t.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("ESYNTAX at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("EBINDMISMATCH: template has {slots} placeholders, {bindings} bindings supplied")]
    BindMismatch { slots: u32, bindings: usize },
    #[error("EINTEGRITY: template digest {actual:#018x} differs from prepared {expected:#018x}")]
    Integrity { expected: u64, actual: u64 },
    #[error("ENOTABLE: no table `{0}`")]
    NoTable(String),
    #[error("ENOCOL: no column `{0}`")]
    NoColumn(String),
    #[error("EFIXTURE line {line}: {message}")]
    Fixture { line: usize, message: String },
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::Syntax { .. } => "ESYNTAX",
            QueryError::BindMismatch { .. } => "EBINDMISMATCH",
            QueryError::Integrity { .. } => "EINTEGRITY",
            QueryError::NoTable(_) => "ENOTABLE",
            QueryError::NoColumn(_) => "ENOCOL",
            QueryError::Fixture { .. } => "EFIXTURE",
        }
    }
}

/// FNV-1a, 64-bit.
pub fn hash_template(template: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    template
        .bytes()
        .fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedStatement {
    pub template: String,
    pub slot_count: u32,
    pub digest: Option<u64>,
}

/// Parses `sql` once to validate it and count its slots. The digest is only
/// recorded when `integrity` is requested.
pub fn prepare(sql: &str, integrity: bool) -> Result<PreparedStatement, QueryError> {
    let query = parse_query(sql)?;
    Ok(PreparedStatement {
        template: sql.to_string(),
        slot_count: query.slot_count,
        digest: integrity.then(|| hash_template(sql)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Executes the template as it reads *now*, not as it was prepared.
pub fn execute(
    stmt: &PreparedStatement,
    template_now: &str,
    bindings: &[Value],
    store: &TableStore,
) -> Result<QueryResult, QueryError> {
    if let Some(expected) = stmt.digest {
        let actual = hash_template(template_now);
        if actual != expected {
            return Err(QueryError::Integrity { expected, actual });
        }
    }
    let query = parse_query(template_now)?;
    if query.slot_count as usize != bindings.len() {
        return Err(QueryError::BindMismatch {
            slots: query.slot_count,
            bindings: bindings.len(),
        });
    }
    evaluate(&query, bindings, store)
}

fn evaluate(query: &Query, bindings: &[Value], store: &TableStore) -> Result<QueryResult, QueryError> {
    let columns = query.items.iter().map(SelectItem::label).collect();
    let Some(table_name) = &query.from else {
        let row = query
            .items
            .iter()
            .map(|item| match item {
                SelectItem::Const(v) => Ok(v.clone()),
                SelectItem::Column(c) => Err(QueryError::NoColumn(c.clone())),
            })
            .collect::<Result<_, _>>()?;
        return Ok(QueryResult { columns, rows: vec![row] });
    };
    let table = store.table(table_name).ok_or_else(|| QueryError::NoTable(table_name.clone()))?;
    let column = |name: &str| table.column_index(name).ok_or_else(|| QueryError::NoColumn(name.to_string()));

    enum Cell {
        Col(usize),
        Const(Value),
    }
    let cells: Vec<Cell> = query
        .items
        .iter()
        .map(|item| match item {
            SelectItem::Column(c) => column(c).map(Cell::Col),
            SelectItem::Const(v) => Ok(Cell::Const(v.clone())),
        })
        .collect::<Result<_, _>>()?;
    let filter = match &query.filter {
        None => None,
        Some((col, operand)) => {
            let value = match operand {
                Operand::Const(v) => v,
                Operand::Slot(i) => &bindings[*i as usize],
            };
            Some((column(col)?, value))
        }
    };

    let rows = table
        .rows
        .iter()
        .filter(|row| filter.as_ref().map_or(true, |(i, v)| &row[*i] == *v))
        .map(|row| {
            cells
                .iter()
                .map(|c| match c {
                    Cell::Col(i) => row[*i].clone(),
                    Cell::Const(v) => v.clone(),
                })
                .collect()
        })
        .collect();
    Ok(QueryResult { columns, rows })
}
