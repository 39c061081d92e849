//! Embedded relational store: CSV ingestion, guarded SQL execution with an
//! audit log, and the per-query staging namespace.

mod engine;
pub mod sql;
pub mod synth;
mod value;

pub use engine::{EngineError, Row};
pub use value::{infer_type, ScalarType, Value};

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sqlparser::ast::Statement;
use thiserror::Error;

use engine::{Engine, RelationSource};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("schema mismatch for `{table}`: {detail}")]
    SchemaMismatch { table: String, detail: String },
    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("access denied to table `{table}`: {reason}")]
    AccessDenied { table: String, reason: String },
    #[error("SQL parse error: {0}")]
    Parse(String),
    #[error("execution error: {0}")]
    Execution(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ScalarType,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, ty: ScalarType) -> Self {
        Self { name: name.into(), ty }
    }
}

#[derive(Debug, Clone)]
pub struct PhysicalTable {
    name: String,
    schema: Vec<ColumnDef>,
    rows: Vec<Row>,
}

impl PhysicalTable {
    /// Builds a table after checking every row against the schema.
    pub fn new(name: &str, schema: Vec<ColumnDef>, rows: Vec<Vec<Value>>) -> Result<Self, StoreError> {
        let name = name.to_lowercase();
        check_schema(&name, &schema)?;
        let mut out = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != schema.len() {
                return Err(StoreError::MalformedRow {
                    line: i as u64 + 1,
                    message: format!("expected {} fields, found {}", schema.len(), row.len()),
                });
            }
            for (v, col) in row.iter().zip(&schema) {
                let ok = match (v.type_of(), col.ty) {
                    (None, _) => true,
                    (Some(ScalarType::Integer), ScalarType::Integer | ScalarType::Decimal) => true,
                    (Some(ScalarType::Decimal), ScalarType::Decimal) => true,
                    (Some(t), ty) => t == ty,
                };
                if !ok {
                    return Err(StoreError::MalformedRow {
                        line: i as u64 + 1,
                        message: format!("value `{v}` does not fit column `{}` of type {}", col.name, col.ty),
                    });
                }
            }
            out.push(Arc::from(row));
        }
        Ok(Self {
            name,
            schema,
            rows: out,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn schema(&self) -> &[ColumnDef] {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Value]> {
        self.rows.iter().map(|r| &r[..])
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }
}

fn check_schema(table: &str, schema: &[ColumnDef]) -> Result<(), StoreError> {
    if schema.is_empty() {
        return Err(StoreError::SchemaMismatch {
            table: table.to_string(),
            detail: "schema has no columns".into(),
        });
    }
    let mut seen = HashSet::new();
    for c in schema {
        if !seen.insert(c.name.to_lowercase()) {
            return Err(StoreError::SchemaMismatch {
                table: table.to_string(),
                detail: format!("duplicate column `{}`", c.name),
            });
        }
    }
    Ok(())
}

/// Result of executing a query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultSet {
    pub columns: Vec<ColumnDef>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultSet {
    pub fn new(names: Vec<String>, rows: Vec<Vec<Value>>) -> Self {
        let columns = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| ColumnDef {
                ty: infer_type(rows.iter().map(|r| &r[i])),
                name,
            })
            .collect();
        Self { columns, rows }
    }
}

/// Access decision hook consulted for every base-table read.
pub trait TableGuard: Send + Sync {
    /// `Err(reason)` denies the read.
    fn check(&self, table: &str) -> Result<(), String>;
}

/// Guard that permits every table. Used for ingestion-side checks and
/// test oracles, never for user sessions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unrestricted;

impl TableGuard for Unrestricted {
    fn check(&self, _table: &str) -> Result<(), String> {
        Ok(())
    }
}

/// Who is reading and under which access decision.
#[derive(Clone, Copy)]
pub struct ReadContext<'a> {
    pub session: &'a str,
    pub guard: &'a dyn TableGuard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub session: String,
    pub table: String,
    pub permitted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// A query result saved in the staging namespace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StagedTable {
    pub staging_id: String,
    pub columns: Vec<ColumnDef>,
    pub rows: Vec<Vec<Value>>,
    pub row_count: usize,
    /// Statements that produced the rows, as executed.
    pub source_sql: Vec<String>,
    /// `sql`, `faq` or `plugin:<name>`.
    pub origin: String,
}

impl StagedTable {
    /// Every cell, row by row.
    pub fn cells(&self) -> impl Iterator<Item = &Value> {
        self.rows.iter().flatten()
    }
}

pub fn staging_id(session: &str, query_no: u32) -> String {
    format!("stage_{session}_{query_no}")
}

#[derive(Default)]
pub struct TabularStore {
    tables: RwLock<BTreeMap<String, Arc<PhysicalTable>>>,
    staging: RwLock<BTreeMap<String, Arc<StagedTable>>>,
    audit: Mutex<Vec<AuditEntry>>,
}

struct GuardedSource<'a> {
    tables: BTreeMap<String, Arc<PhysicalTable>>,
    ctx: ReadContext<'a>,
    audit: &'a Mutex<Vec<AuditEntry>>,
}

impl RelationSource for GuardedSource<'_> {
    fn base_table(&self, name: &str) -> Result<Option<(Vec<String>, Vec<Row>)>, EngineError> {
        let Some(table) = self.tables.get(name) else {
            return Ok(None);
        };
        let decision = self.ctx.guard.check(name);
        self.audit.lock().unwrap().push(AuditEntry {
            session: self.ctx.session.to_string(),
            table: name.to_string(),
            permitted: decision.is_ok(),
            reason: decision.as_ref().err().cloned(),
        });
        match decision {
            Ok(()) => Ok(Some((
                table.schema.iter().map(|c| c.name.clone()).collect(),
                table.rows.clone(),
            ))),
            Err(reason) => Err(EngineError::Denied(format!("{name}\u{0}{reason}"))),
        }
    }
}

impl TabularStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a table.
    pub fn insert_table(&self, table: PhysicalTable) {
        self.tables.write().unwrap().insert(table.name.clone(), Arc::new(table));
    }

    pub fn table(&self, name: &str) -> Option<Arc<PhysicalTable>> {
        self.tables.read().unwrap().get(&name.to_lowercase()).cloned()
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.read().unwrap().keys().cloned().collect()
    }

    /// Lowercased table and column names, for identifier normalization.
    pub fn known_names(&self) -> HashSet<String> {
        let tables = self.tables.read().unwrap();
        let mut names = HashSet::new();
        for t in tables.values() {
            names.insert(t.name.clone());
            names.extend(t.schema.iter().map(|c| c.name.to_lowercase()));
        }
        names
    }

    /// Ingests a CSV file (header row required) under a declared schema.
    /// Re-ingesting under the same name replaces the table.
    pub fn ingest_csv(&self, path: &Path, name: &str, schema: &[ColumnDef]) -> Result<Arc<PhysicalTable>, StoreError> {
        let file = std::fs::File::open(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.ingest_reader(file, name, schema)
    }

    pub fn ingest_reader<R: Read>(
        &self,
        reader: R,
        name: &str,
        schema: &[ColumnDef],
    ) -> Result<Arc<PhysicalTable>, StoreError> {
        let name = name.to_lowercase();
        check_schema(&name, schema)?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| StoreError::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?;
        let found: Vec<&str> = header.iter().map(str::trim).collect();
        let declared: Vec<&str> = schema.iter().map(|c| c.name.as_str()).collect();
        if found.len() != declared.len() || found.iter().zip(&declared).any(|(a, b)| !a.eq_ignore_ascii_case(b)) {
            return Err(StoreError::SchemaMismatch {
                table: name,
                detail: format!(
                    "header [{}] does not match declared [{}]",
                    found.join(", "),
                    declared.join(", ")
                ),
            });
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| StoreError::MalformedRow {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != schema.len() {
                return Err(StoreError::MalformedRow {
                    line,
                    message: format!("expected {} fields, found {}", schema.len(), record.len()),
                });
            }
            let mut row = Vec::with_capacity(schema.len());
            for (field, col) in record.iter().zip(schema) {
                let v = col.ty.parse_field(field).map_err(|m| StoreError::MalformedRow {
                    line,
                    message: format!("column `{}`: {m}", col.name),
                })?;
                row.push(v);
            }
            rows.push(Arc::from(row));
        }
        let table = Arc::new(PhysicalTable {
            name: name.clone(),
            schema: schema.to_vec(),
            rows,
        });
        self.tables.write().unwrap().insert(name, Arc::clone(&table));
        Ok(table)
    }

    pub fn export_csv<W: Write>(&self, name: &str, out: W) -> Result<(), StoreError> {
        let table = self
            .table(name)
            .ok_or_else(|| StoreError::UnknownTable(name.to_string()))?;
        write_csv(table.schema.iter().map(|c| c.name.as_str()), table.rows(), out)
    }

    /// Parses (after identifier normalization) and executes SQL text.
    pub fn execute_sql(&self, sql: &str, ctx: ReadContext<'_>) -> Result<ResultSet, StoreError> {
        let normalized = sql::normalize_identifiers(sql, Some(&self.known_names()));
        let statements = sql::parse_statements(&normalized).map_err(StoreError::Parse)?;
        self.execute(&statements, ctx)
    }

    /// Executes validated statements. Every base-table read is checked
    /// against `ctx.guard` and recorded in the audit log.
    pub fn execute(&self, statements: &[Statement], ctx: ReadContext<'_>) -> Result<ResultSet, StoreError> {
        let source = GuardedSource {
            tables: self.tables.read().unwrap().clone(),
            ctx,
            audit: &self.audit,
        };
        let rel = Engine::new(&source).run(statements).map_err(|e| match e {
            EngineError::Denied(msg) => {
                let (table, reason) = msg.split_once('\u{0}').unwrap_or((msg.as_str(), "denied"));
                StoreError::AccessDenied {
                    table: table.to_string(),
                    reason: reason.to_string(),
                }
            }
            other => StoreError::Execution(other.to_string()),
        })?;
        let names = rel.column_names();
        Ok(ResultSet::new(names, rel.into_rows()))
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().unwrap().clone()
    }

    pub fn stage(&self, table: StagedTable) -> Arc<StagedTable> {
        let table = Arc::new(table);
        self.staging
            .write()
            .unwrap()
            .insert(table.staging_id.clone(), Arc::clone(&table));
        table
    }

    pub fn staged(&self, staging_id: &str) -> Option<Arc<StagedTable>> {
        self.staging.read().unwrap().get(staging_id).cloned()
    }

    /// Drops every staged table of a session; returns how many were dropped.
    pub fn drop_staging(&self, session: &str) -> usize {
        let prefix = format!("stage_{session}_");
        let mut staging = self.staging.write().unwrap();
        let before = staging.len();
        staging.retain(|k, _| !k.starts_with(&prefix));
        before - staging.len()
    }

    pub fn staging_ids(&self) -> Vec<String> {
        self.staging.read().unwrap().keys().cloned().collect()
    }
}

pub(crate) fn write_csv<'r, W: Write>(
    header: impl Iterator<Item = &'r str>,
    rows: impl Iterator<Item = &'r [Value]>,
    out: W,
) -> Result<(), StoreError> {
    let io = |e: csv::Error| StoreError::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(Value::to_field)).map_err(io)?;
    }
    w.flush().map_err(|source| StoreError::Io {
        path: "<csv>".into(),
        source,
    })
}

/// Loads a `schemas.json` document: table name → ordered column list.
pub fn parse_schemas(text: &str) -> Result<BTreeMap<String, Vec<ColumnDef>>, serde_json::Error> {
    serde_json::from_str(text)
}
