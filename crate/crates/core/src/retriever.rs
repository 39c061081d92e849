//! SQL retrieval: builds the SQL-generation prompt, validates the generated
//! SQL, runs it under the session profile and stages the result. Also hosts
//! the analytics plugin registry.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;
use std::sync::Arc;

use rust_decimal::Decimal;
use serde::Serialize;
use sqlparser::ast::{Select, Statement, Visit, Visitor};
use thiserror::Error;

use crate::auth::{AccessDecision, MinimalUserProfile};
use crate::catalog::TableConfiguration;
use crate::gateway::{GatewayError, GenerationParams, LlmGateway, PromptRole, PromptText};
use crate::store::{sql, staging_id, ReadContext, ResultSet, StagedTable, StoreError, TabularStore, Value};

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("missing prompt input: {0}")]
    MissingInput(&'static str),
    #[error("malformed SQL: {0}")]
    MalformedSql(String),
    #[error("forbidden statement: {0}")]
    ForbiddenStatement(String),
    #[error("access denied to `{table}`: {reason}")]
    AccessDenied { table: String, reason: String },
    #[error("execution error: {0}")]
    Execution(String),
    #[error("unknown plugin `{0}`")]
    UnknownPlugin(String),
    #[error("plugin failure: {0}")]
    PluginFailure(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Llm,
    Fixture,
}

/// Validated SQL: zero or more `CREATE VIEW` statements followed by one
/// query, in canonical rendering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SqlPlan {
    pub statements: Vec<String>,
    pub target_tables: BTreeSet<String>,
    pub generated_by: PlanSource,
    #[serde(skip)]
    parsed: Vec<Statement>,
}

impl SqlPlan {
    pub fn parsed(&self) -> &[Statement] {
        &self.parsed
    }

    pub fn sql(&self) -> String {
        self.statements.join(";\n")
    }
}

const FORBIDDEN: &[&str] = &[
    "INSERT", "UPDATE", "DELETE", "DROP", "ALTER", "TRUNCATE", "MERGE", "GRANT", "REVOKE", "ATTACH", "DETACH", "COPY",
    "CALL", "EXEC", "EXECUTE", "VACUUM", "PRAGMA", "UPSERT", "REINDEX", "LOCK",
];

/// Upper-cased bare words outside string literals, quoted identifiers and
/// comments.
fn bare_words(sql: &str) -> Vec<String> {
    let chars: Vec<char> = sql.chars().collect();
    let mut words = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\'' || c == '"' || c == '`' {
            i += 1;
            while i < chars.len() {
                if chars[i] == c {
                    if chars.get(i + 1) == Some(&c) {
                        i += 2;
                        continue;
                    }
                    break;
                }
                i += 1;
            }
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            i += 2;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            words.push(chars[start..i].iter().collect::<String>().to_ascii_uppercase());
        } else {
            i += 1;
        }
    }
    words
}

/// Rejects data-modifying keywords. `CREATE` is allowed only for views.
pub fn scan_forbidden(sql: &str) -> Result<(), RetrieverError> {
    let words = bare_words(sql);
    for (i, w) in words.iter().enumerate() {
        if FORBIDDEN.contains(&w.as_str()) {
            return Err(RetrieverError::ForbiddenStatement(w.clone()));
        }
        if w == "CREATE" {
            let rest: Vec<&str> = words[i + 1..].iter().take(3).map(String::as_str).collect();
            let view = matches!(
                rest.as_slice(),
                ["VIEW", ..] | ["OR", "REPLACE", "VIEW"] | ["TEMP" | "TEMPORARY", "VIEW", ..]
            );
            if !view {
                return Err(RetrieverError::ForbiddenStatement(format!(
                    "CREATE {}",
                    rest.first().unwrap_or(&"")
                )));
            }
        }
    }
    Ok(())
}

fn strip_code_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest
        .strip_prefix("sql")
        .or_else(|| rest.strip_prefix("SQL"))
        .unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Validates completion text into a plan.
///
/// The text is fence-stripped, scanned for forbidden keywords, identifier
/// normalized against `known` names, parsed and shape-checked.
pub fn validate_sql(
    text: &str,
    known: &std::collections::HashSet<String>,
    generated_by: PlanSource,
) -> Result<SqlPlan, RetrieverError> {
    let body = strip_code_fences(text);
    if body.is_empty() {
        return Err(RetrieverError::MalformedSql("empty completion".into()));
    }
    scan_forbidden(body)?;
    let normalized = sql::normalize_identifiers(body, Some(known));
    let parsed = sql::parse_statements(&normalized).map_err(RetrieverError::MalformedSql)?;
    let Some((last, views)) = parsed.split_last() else {
        return Err(RetrieverError::MalformedSql("no statement".into()));
    };
    for v in views {
        if sql::view_query(v).is_none() {
            return Err(RetrieverError::ForbiddenStatement(
                "only CREATE VIEW may precede the final query".into(),
            ));
        }
    }
    if !matches!(last, Statement::Query(_)) {
        return Err(RetrieverError::ForbiddenStatement(
            "the final statement must be a query".into(),
        ));
    }
    struct IntoCheck(bool);
    impl Visitor for IntoCheck {
        type Break = ();
        fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<()> {
            if select.into.is_some() {
                self.0 = true;
                return ControlFlow::Break(());
            }
            ControlFlow::Continue(())
        }
    }
    let mut into = IntoCheck(false);
    for s in &parsed {
        let _ = s.visit(&mut into);
    }
    if into.0 {
        return Err(RetrieverError::ForbiddenStatement("SELECT INTO".into()));
    }
    let local = sql::local_relation_names(&parsed);
    let target_tables = sql::referenced_relations(&parsed)
        .into_iter()
        .filter(|r| !local.contains(r))
        .collect();
    Ok(SqlPlan {
        statements: parsed.iter().map(ToString::to_string).collect(),
        target_tables,
        generated_by,
        parsed,
    })
}

pub fn render_config(cfg: &TableConfiguration) -> String {
    let mut out = format!("Table: {}\n", cfg.table_name);
    if !cfg.description.is_empty() {
        out.push_str(&format!("Description: {}\n", cfg.description));
    }
    let fields: Vec<String> = cfg
        .relevant_fields
        .iter()
        .map(|f| format!("{} ({})", f.name, f.ty))
        .collect();
    out.push_str(&format!("Fields: {}\n", fields.join(", ")));
    if !cfg.sample_field_values.is_empty() {
        let samples: Vec<String> = cfg
            .sample_field_values
            .iter()
            .map(|(c, v)| format!("{c} = {}", v.join(", ")))
            .collect();
        out.push_str(&format!("Sample values: {}\n", samples.join("; ")));
    }
    out
}

/// Assembles the SQL-generation prompt: sub-queries, table configurations
/// and the example question with its answer, in that order.
pub fn build_sql_prompt(
    subqueries: &[String],
    configs: &[TableConfiguration],
    example: Option<(&str, &str)>,
) -> Result<PromptText, RetrieverError> {
    if subqueries.iter().all(|s| s.trim().is_empty()) {
        return Err(RetrieverError::MissingInput("sub-queries"));
    }
    if configs.is_empty() {
        return Err(RetrieverError::MissingInput("table configurations"));
    }
    let (eq, ea) = example
        .filter(|(q, a)| !q.trim().is_empty() && !a.trim().is_empty())
        .ok_or(RetrieverError::MissingInput("example question and answer"))?;
    let mut out = String::from(
        "Write SQL that answers the sub-queries using only the tables and fields below. \
         Reply with one SELECT statement, optionally preceded by CREATE VIEW statements, and nothing else.\n\n",
    );
    for (i, sq) in subqueries.iter().enumerate() {
        out.push_str(&format!("Sub-query {}: {}\n", i + 1, sq.trim()));
    }
    out.push('\n');
    for cfg in configs {
        out.push_str(&render_config(cfg));
        out.push('\n');
    }
    out.push_str(&format!(
        "Example question: {}\nExample answer: {}\n",
        eq.trim(),
        ea.trim()
    ));
    Ok(PromptText::new(PromptRole::SqlGen, out)?)
}

/// Completes the SQL prompt and validates the output. A malformed result
/// is retried once with the parser diagnostic appended to the prompt.
pub fn generate_sql(
    gateway: &LlmGateway,
    ledger_key: &str,
    prompt: &PromptText,
    store: &TabularStore,
) -> Result<SqlPlan, RetrieverError> {
    let source = if gateway.completion_provider_id() == "mock" {
        PlanSource::Fixture
    } else {
        PlanSource::Llm
    };
    let known = store.known_names();
    let params = GenerationParams::default();
    let record = gateway.complete(ledger_key, prompt, &params)?;
    match validate_sql(&record.output, &known, source) {
        Err(RetrieverError::MalformedSql(diag)) => {
            let retry = PromptText::new(
                PromptRole::SqlGen,
                format!(
                    "{}\nThe previous reply could not be parsed: {diag}\nReply with corrected SQL only.\n",
                    prompt.body()
                ),
            )?;
            let record = gateway.complete(ledger_key, &retry, &params)?;
            validate_sql(&record.output, &known, source)
        }
        other => other,
    }
}

fn map_store_error(e: StoreError) -> RetrieverError {
    match e {
        StoreError::AccessDenied { table, reason } => RetrieverError::AccessDenied { table, reason },
        other => RetrieverError::Execution(other.to_string()),
    }
}

/// Runs a plan under the profile and returns the rows without staging.
///
/// Every target table must be granted; a query whose literal filters fall
/// wholly outside a row constraint is denied; constraints are then applied
/// to every scan of their table.
pub fn execute_plan(
    plan: &SqlPlan,
    store: &TabularStore,
    mup: &MinimalUserProfile,
    session: &str,
) -> Result<(ResultSet, Vec<String>), RetrieverError> {
    let mut constraints = BTreeMap::new();
    for t in &plan.target_tables {
        match mup.enforce(t) {
            AccessDecision::Deny { reason } => {
                return Err(RetrieverError::AccessDenied {
                    table: t.clone(),
                    reason,
                })
            }
            AccessDecision::Permit { constraint: Some(c) } => {
                if let Some(filter) = sql::excluded_by_constraint(&plan.parsed, t, &c) {
                    return Err(RetrieverError::AccessDenied {
                        table: t.clone(),
                        reason: format!("rows with {filter} are outside the profile"),
                    });
                }
                constraints.insert(t.clone(), c);
            }
            AccessDecision::Permit { constraint: None } => {}
        }
    }
    let mut statements = plan.parsed.clone();
    sql::apply_row_constraints(&mut statements, &constraints).map_err(RetrieverError::Execution)?;
    let result = store
        .execute(&statements, ReadContext { session, guard: mup })
        .map_err(map_store_error)?;
    Ok((result, statements.iter().map(ToString::to_string).collect()))
}

/// Executes and stages the result as `stage_<session>_<query_no>`.
/// An empty result is staged like any other.
pub fn run_query(
    plan: &SqlPlan,
    store: &TabularStore,
    mup: &MinimalUserProfile,
    session: &str,
    query_no: u32,
) -> Result<Arc<StagedTable>, RetrieverError> {
    let (result, executed) = execute_plan(plan, store, mup, session)?;
    Ok(stage_result(store, session, query_no, result, executed, "sql".into()))
}

pub fn stage_result(
    store: &TabularStore,
    session: &str,
    query_no: u32,
    result: ResultSet,
    source_sql: Vec<String>,
    origin: String,
) -> Arc<StagedTable> {
    store.stage(StagedTable {
        staging_id: staging_id(session, query_no),
        row_count: result.rows.len(),
        columns: result.columns,
        rows: result.rows,
        source_sql,
        origin,
    })
}

/// Read access for plugins, under the same profile checks as generated SQL.
pub struct PluginData<'a> {
    pub store: &'a TabularStore,
    pub mup: &'a MinimalUserProfile,
    pub session: &'a str,
}

impl PluginData<'_> {
    pub fn query(&self, sql_text: &str) -> Result<(ResultSet, Vec<String>), RetrieverError> {
        let plan = validate_sql(sql_text, &self.store.known_names(), PlanSource::Fixture)?;
        execute_plan(&plan, self.store, self.mup, self.session)
    }
}

pub trait AnalyticsPlugin: Send + Sync {
    fn name(&self) -> &str;
    /// Produces a result table from the entities; the error text becomes
    /// [`RetrieverError::PluginFailure`].
    fn run(&self, entities: &[String], data: &PluginData<'_>) -> Result<(ResultSet, Vec<String>), String>;
}

#[derive(Default, Clone)]
pub struct PluginRegistry {
    plugins: BTreeMap<String, Arc<dyn AnalyticsPlugin>>,
}

impl PluginRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(LinearTrend));
        r
    }

    pub fn register(&mut self, plugin: Arc<dyn AnalyticsPlugin>) {
        self.plugins.insert(plugin.name().to_string(), plugin);
    }

    pub fn names(&self) -> Vec<String> {
        self.plugins.keys().cloned().collect()
    }

    /// Runs a plugin and stages its output exactly like a query result.
    pub fn invoke(
        &self,
        name: &str,
        entities: &[String],
        data: &PluginData<'_>,
        query_no: u32,
    ) -> Result<Arc<StagedTable>, RetrieverError> {
        let plugin = self
            .plugins
            .get(name)
            .ok_or_else(|| RetrieverError::UnknownPlugin(name.to_string()))?;
        if entities.is_empty() {
            return Err(RetrieverError::PluginFailure(format!(
                "`{name}` needs at least one entity"
            )));
        }
        let (result, source_sql) = plugin.run(entities, data).map_err(RetrieverError::PluginFailure)?;
        Ok(stage_result(
            data.store,
            data.session,
            query_no,
            result,
            source_sql,
            format!("plugin:{name}"),
        ))
    }
}

/// Least-squares line through `(i, values[i])`, evaluated at the next
/// index. `None` for an empty series.
pub fn linear_trend_prediction(values: &[Decimal]) -> Option<Decimal> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let nd = Decimal::from(n as u64);
    let mean_x = Decimal::from((n as u64 - 1) * (n as u64)) / Decimal::TWO / nd;
    let mean_y = values.iter().sum::<Decimal>() / nd;
    let mut sxy = Decimal::ZERO;
    let mut sxx = Decimal::ZERO;
    for (i, y) in values.iter().enumerate() {
        let dx = Decimal::from(i as u64) - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = if sxx.is_zero() { Decimal::ZERO } else { sxy / sxx };
    Some((mean_y + slope * (nd - mean_x)).round_dp(6).normalize())
}

/// `linear_trend`: entities are a table followed by two or more numeric
/// columns holding consecutive periods. Each column is summed over the
/// rows the profile can see and the next period is extrapolated.
pub struct LinearTrend;

impl AnalyticsPlugin for LinearTrend {
    fn name(&self) -> &str {
        "linear_trend"
    }

    fn run(&self, entities: &[String], data: &PluginData<'_>) -> Result<(ResultSet, Vec<String>), String> {
        let (table, cols) = entities
            .split_first()
            .filter(|(_, c)| !c.is_empty())
            .ok_or("expected a table and at least one period column")?;
        let ident = |s: &str| sql::quote_ident(&s.to_lowercase());
        let select: Vec<String> = cols.iter().map(|c| format!("SUM({0}) AS {0}", ident(c))).collect();
        let query = format!("SELECT {} FROM {}", select.join(", "), ident(table));
        let (rs, executed) = data.query(&query).map_err(|e| e.to_string())?;
        let row = rs.rows.first().ok_or("no rows")?;
        let series: Vec<Decimal> = row
            .iter()
            .map(|v| v.as_number().ok_or_else(|| format!("non-numeric period value {v}")))
            .collect::<Result<_, _>>()?;
        let prediction = linear_trend_prediction(&series).ok_or("empty series")?;
        let mut names: Vec<String> = cols.iter().map(|c| c.to_lowercase()).collect();
        names.push("prediction".into());
        let mut out: Vec<Value> = row.clone();
        out.push(Value::Number(prediction));
        Ok((ResultSet::new(names, vec![out]), executed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ColumnDef, PhysicalTable, ScalarType};

    fn dec(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn forbidden_keywords_outside_literals() {
        assert!(matches!(
            scan_forbidden("DROP TABLE t"),
            Err(RetrieverError::ForbiddenStatement(_))
        ));
        assert!(scan_forbidden("SELECT 'drop table' FROM t -- delete\n").is_ok());
        assert!(scan_forbidden("CREATE VIEW v AS SELECT 1").is_ok());
        assert!(scan_forbidden("CREATE TABLE x (a INT)").is_err());
        assert!(scan_forbidden("select * from t; delete from t").is_err());
    }

    #[test]
    fn validation_shapes() {
        let known = Default::default();
        let plan = validate_sql("```sql\nSELECT a FROM t\n```", &known, PlanSource::Fixture).unwrap();
        assert_eq!(plan.statements, vec!["SELECT a FROM t"]);
        assert_eq!(plan.target_tables, BTreeSet::from(["t".to_string()]));
        let plan = validate_sql(
            "CREATE VIEW v AS SELECT a FROM t; WITH c AS (SELECT * FROM v) SELECT * FROM c",
            &known,
            PlanSource::Llm,
        )
        .unwrap();
        assert_eq!(plan.target_tables, BTreeSet::from(["t".to_string()]));
        assert!(matches!(
            validate_sql("SELECT a FROM (", &known, PlanSource::Llm),
            Err(RetrieverError::MalformedSql(_))
        ));
        assert!(matches!(
            validate_sql("SELECT a INTO x FROM t", &known, PlanSource::Llm),
            Err(RetrieverError::ForbiddenStatement(_))
        ));
        assert!(matches!(
            validate_sql("SELECT 1; SELECT 2", &known, PlanSource::Llm),
            Err(RetrieverError::ForbiddenStatement(_))
        ));
    }

    #[test]
    fn hyphenated_identifier_sql_is_normalized() {
        let plan = validate_sql(
            "SELECT department, COUNT (patient-id) AS new-patients FROM hospital-admissions WHERE department = 'Oncology' AND (month = 'This' OR month = 'Last') GROUP BY month",
            &Default::default(),
            PlanSource::Fixture,
        )
        .unwrap();
        assert!(plan.statements[0].contains("COUNT(\"patient-id\") AS \"new-patients\""));
        assert_eq!(plan.target_tables, BTreeSet::from(["hospital-admissions".to_string()]));
    }

    #[test]
    fn prompt_sections_in_order() {
        let cfg = TableConfiguration {
            table_name: "t".into(),
            description: String::new(),
            relevant_fields: vec![ColumnDef::new("a", ScalarType::Integer)],
            sample_field_values: Default::default(),
            filter_keyword_map: Default::default(),
        };
        let p = build_sql_prompt(&["q one".into()], std::slice::from_ref(&cfg), Some(("eq", "ea"))).unwrap();
        let body = p.body();
        let i1 = body.find("Sub-query 1: q one").unwrap();
        let i2 = body.find("Table: t").unwrap();
        let i3 = body.find("Example question: eq").unwrap();
        assert!(i1 < i2 && i2 < i3);
        assert!(matches!(
            build_sql_prompt(&["q".into()], &[], Some(("a", "b"))),
            Err(RetrieverError::MissingInput("table configurations"))
        ));
        assert!(matches!(
            build_sql_prompt(&["q".into()], &[cfg], None),
            Err(RetrieverError::MissingInput(_))
        ));
    }

    #[test]
    fn trend_is_exact_on_collinear_points() {
        let v: Vec<Decimal> = ["100", "90", "80", "70"].iter().map(|s| dec(s)).collect();
        assert_eq!(linear_trend_prediction(&v), Some(dec("60")));
        let c: Vec<Decimal> = ["5", "5", "5"].iter().map(|s| dec(s)).collect();
        assert_eq!(linear_trend_prediction(&c), Some(dec("5")));
        assert_eq!(linear_trend_prediction(&[]), None);
    }

    #[test]
    fn plugin_output_is_staged() {
        let store = TabularStore::new();
        let cols = (1..=4)
            .map(|i| ColumnDef::new(format!("y{i}"), ScalarType::Integer))
            .collect();
        store.insert_table(
            PhysicalTable::new(
                "series",
                cols,
                vec![[100, 90, 80, 70].into_iter().map(Value::int).collect()],
            )
            .unwrap(),
        );
        let mut mup = MinimalUserProfile::empty("u", 0);
        mup.granted_tables.insert("series".into());
        let data = PluginData {
            store: &store,
            mup: &mup,
            session: "s",
        };
        let reg = PluginRegistry::with_builtins();
        let entities: Vec<String> = ["series", "y1", "y2", "y3", "y4"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let staged = reg.invoke("linear_trend", &entities, &data, 1).unwrap();
        assert_eq!(staged.row_count, 1);
        assert_eq!(staged.rows[0][4], Value::Number(dec("60")));
        assert_eq!(staged.origin, "plugin:linear_trend");
        assert!(store.staged("stage_s_1").is_some());
        assert!(matches!(
            reg.invoke("nope", &entities, &data, 2),
            Err(RetrieverError::UnknownPlugin(_))
        ));
    }
}
