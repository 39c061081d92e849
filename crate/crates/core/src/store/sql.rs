//! SQL front end: identifier normalization, parsing and row-constraint
//! injection over the `sqlparser` AST.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ops::ControlFlow;

use sqlparser::ast::{
    visit_expressions, visit_relations, BinaryOperator, Expr, GroupByExpr, Ident, Query, Select, SetExpr, Statement,
    TableAlias, TableFactor, Value as SqlValue, Visit, VisitMut, Visitor, VisitorMut,
};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;

/// Lowercased last part of an object name.
pub(crate) fn object_name_key(name: &sqlparser::ast::ObjectName) -> String {
    name.0
        .last()
        .and_then(|p| p.as_ident())
        .map(|i| i.value.to_lowercase())
        .unwrap_or_default()
}

/// Rewrites hyphenated identifiers such as `patient-id` into quoted
/// identifiers (`"patient-id"`), leaving string literals, quoted
/// identifiers and comments untouched.
///
/// With a `known` set of lowercase names, a hyphenated run is kept as a
/// subtraction when every part is a known name and the joined name is not,
/// so `total_2023-total_2022` stays arithmetic.
pub fn normalize_identifiers(sql: &str, known: Option<&HashSet<String>>) -> String {
    let bytes = sql.as_bytes();
    let mut out = String::with_capacity(sql.len() + 8);
    let mut i = 0;
    let is_start = |b: u8| b.is_ascii_alphabetic() || b == b'_';
    let is_cont = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'\'' | b'"' | b'`' => {
                let end = skip_quoted(bytes, i, b);
                out.push_str(&sql[i..end]);
                i = end;
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                let end = sql[i..].find('\n').map_or(sql.len(), |p| i + p);
                out.push_str(&sql[i..end]);
                i = end;
            }
            _ if is_start(b) && (i == 0 || !is_cont(bytes[i - 1])) => {
                let mut parts = Vec::new();
                let mut j = i;
                loop {
                    let s = j;
                    while j < bytes.len() && is_cont(bytes[j]) {
                        j += 1;
                    }
                    parts.push(&sql[s..j]);
                    if j + 1 < bytes.len() && bytes[j] == b'-' && is_start(bytes[j + 1]) {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let word = &sql[i..j];
                if parts.len() > 1 && should_quote(word, &parts, known) {
                    out.push('"');
                    out.push_str(word);
                    out.push('"');
                } else {
                    out.push_str(word);
                }
                i = j;
            }
            _ => {
                let ch = sql[i..].chars().next().unwrap();
                out.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    out
}

fn should_quote(word: &str, parts: &[&str], known: Option<&HashSet<String>>) -> bool {
    let Some(known) = known else { return true };
    if known.contains(&word.to_lowercase()) {
        return true;
    }
    !parts.iter().all(|p| known.contains(&p.to_lowercase()))
}

fn skip_quoted(bytes: &[u8], start: usize, quote: u8) -> usize {
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    bytes.len()
}

/// Parses SQL text in the engine dialect.
pub fn parse_statements(sql: &str) -> Result<Vec<Statement>, String> {
    Parser::parse_sql(&GenericDialect {}, sql).map_err(|e| e.to_string())
}

/// The query of a `CREATE VIEW`, or `None` for any other statement.
pub fn view_query(stmt: &Statement) -> Option<(String, &Query)> {
    match stmt {
        Statement::CreateView(cv) => Some((object_name_key(&cv.name), cv.query.as_ref())),
        _ => None,
    }
}

/// Names of every relation referenced anywhere in the statements,
/// lowercased. Includes CTE and view names.
pub fn referenced_relations(statements: &[Statement]) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for stmt in statements {
        let _ = visit_relations(stmt, |name| {
            names.insert(object_name_key(name));
            ControlFlow::<()>::Continue(())
        });
    }
    names
}

/// Names introduced by the statements themselves: CTE aliases and views.
pub fn local_relation_names(statements: &[Statement]) -> BTreeSet<String> {
    struct Collector(BTreeSet<String>);
    impl sqlparser::ast::Visitor for Collector {
        type Break = ();
        fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
            if let Some(with) = &query.with {
                for cte in &with.cte_tables {
                    self.0.insert(cte.alias.name.value.to_lowercase());
                }
            }
            ControlFlow::Continue(())
        }
        fn pre_visit_statement(&mut self, stmt: &Statement) -> ControlFlow<()> {
            if let Some((name, _)) = view_query(stmt) {
                self.0.insert(name);
            }
            ControlFlow::Continue(())
        }
    }
    let mut c = Collector(BTreeSet::new());
    for stmt in statements {
        let _ = sqlparser::ast::Visit::visit(stmt, &mut c);
    }
    c.0
}

/// Wraps every scan of a constrained base table in a filtered derived
/// table: `t AS a` becomes `(SELECT * FROM t WHERE pred) AS a`.
///
/// Filtering at the scan means the predicate holds for every row the query
/// can observe, whatever the shape of the surrounding query.
pub fn apply_row_constraints(
    statements: &mut [Statement],
    constraints: &BTreeMap<String, String>,
) -> Result<(), String> {
    if constraints.is_empty() {
        return Ok(());
    }
    let mut filters = BTreeMap::new();
    for (table, pred) in constraints {
        let sql = format!("SELECT * FROM {} WHERE {pred}", quote_ident(table));
        let mut parsed = parse_statements(&sql).map_err(|e| format!("constraint on `{table}`: {e}"))?;
        match parsed.pop() {
            Some(Statement::Query(q)) if parsed.is_empty() => {
                filters.insert(table.to_lowercase(), q);
            }
            _ => return Err(format!("constraint on `{table}` is not a single predicate")),
        }
    }
    struct Rewriter<'a> {
        filters: &'a BTreeMap<String, Box<Query>>,
    }
    impl VisitorMut for Rewriter<'_> {
        type Break = ();
        fn post_visit_table_factor(&mut self, tf: &mut TableFactor) -> ControlFlow<()> {
            if let TableFactor::Table {
                name,
                alias,
                args: None,
                ..
            } = tf
            {
                let key = object_name_key(name);
                if let Some(q) = self.filters.get(&key) {
                    let alias = alias.clone().unwrap_or(TableAlias {
                        explicit: true,
                        name: name
                            .0
                            .last()
                            .and_then(|p| p.as_ident())
                            .cloned()
                            .unwrap_or_else(|| Ident::new(key.clone())),
                        columns: Vec::new(),
                        at: None,
                    });
                    *tf = TableFactor::Derived {
                        lateral: false,
                        subquery: q.clone(),
                        alias: Some(alias),
                        sample: None,
                    };
                }
            }
            ControlFlow::Continue(())
        }
    }
    let mut rw = Rewriter { filters: &filters };
    for stmt in statements.iter_mut() {
        let _ = stmt.visit(&mut rw);
    }
    Ok(())
}

/// Double-quotes an identifier when it is not a plain lowercase word.
pub fn quote_ident(name: &str) -> String {
    let plain = name
        .chars()
        .enumerate()
        .all(|(i, c)| c.is_ascii_lowercase() || c == '_' || (i > 0 && c.is_ascii_digit()));
    if plain && !name.is_empty() {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

/// Renders statements back to SQL, `;`-separated.
pub fn render_statements(statements: &[Statement]) -> String {
    statements
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";\n")
}

/// Lowercased names of every column referenced in a WHERE, GROUP BY or
/// HAVING clause of any SELECT in the statements.
pub fn filter_columns(statements: &[Statement]) -> BTreeSet<String> {
    struct Collector(BTreeSet<String>);
    impl Collector {
        fn expr(&mut self, e: &Expr) {
            let _ = visit_expressions(e, |inner| {
                match inner {
                    Expr::Identifier(id) => {
                        self.0.insert(id.value.to_lowercase());
                    }
                    Expr::CompoundIdentifier(parts) => {
                        if let Some(last) = parts.last() {
                            self.0.insert(last.value.to_lowercase());
                        }
                    }
                    _ => {}
                }
                ControlFlow::<()>::Continue(())
            });
        }
    }
    impl Visitor for Collector {
        type Break = ();
        fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<()> {
            if let Some(w) = &select.selection {
                self.expr(w);
            }
            if let Some(h) = &select.having {
                self.expr(h);
            }
            if let GroupByExpr::Expressions(exprs, _) = &select.group_by {
                for e in exprs {
                    self.expr(e);
                }
            }
            ControlFlow::Continue(())
        }
    }
    let mut c = Collector(BTreeSet::new());
    for stmt in statements {
        let _ = stmt.visit(&mut c);
    }
    c.0
}

/// A column reference: optional qualifier and column name, lowercased.
pub type ColumnRef = (Option<String>, String);

fn column_ref(e: &Expr) -> Option<ColumnRef> {
    match e {
        Expr::Identifier(id) => Some((None, id.value.to_lowercase())),
        Expr::CompoundIdentifier(parts) if parts.len() >= 2 => Some((
            Some(parts[parts.len() - 2].value.to_lowercase()),
            parts[parts.len() - 1].value.to_lowercase(),
        )),
        Expr::Nested(inner) => column_ref(inner),
        _ => None,
    }
}

fn literal_key(e: &Expr) -> Option<String> {
    match e {
        Expr::Value(v) => match &v.value {
            SqlValue::SingleQuotedString(s) => Some(format!("'{s}'")),
            SqlValue::Number(n, _) => n
                .parse::<rust_decimal::Decimal>()
                .ok()
                .map(|d| d.normalize().to_string()),
            _ => None,
        },
        Expr::Nested(inner) => literal_key(inner),
        _ => None,
    }
}

fn conjuncts<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            conjuncts(left, out);
            conjuncts(right, out);
        }
        Expr::Nested(inner) => conjuncts(inner, out),
        other => out.push(other),
    }
}

/// The column and literal set one conjunct restricts, if it is an
/// equality, a non-negated IN list, or an OR of such on one column.
fn literal_domain(e: &Expr) -> Option<(ColumnRef, BTreeSet<String>)> {
    match e {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::Eq,
            right,
        } => {
            let (col, lit) = match (column_ref(left), literal_key(right)) {
                (Some(c), Some(l)) => (c, l),
                _ => (column_ref(right)?, literal_key(left)?),
            };
            Some((col, BTreeSet::from([lit])))
        }
        Expr::InList {
            expr,
            list,
            negated: false,
        } => {
            let col = column_ref(expr)?;
            let lits = list.iter().map(literal_key).collect::<Option<BTreeSet<_>>>()?;
            Some((col, lits))
        }
        Expr::BinaryOp {
            left,
            op: BinaryOperator::Or,
            right,
        } => {
            let (lc, mut ls) = literal_domain(left)?;
            let (rc, rs) = literal_domain(right)?;
            if lc.1 != rc.1 {
                return None;
            }
            ls.extend(rs);
            Some((lc, ls))
        }
        Expr::Nested(inner) => literal_domain(inner),
        _ => None,
    }
}

/// Literal domains implied by the top-level conjuncts of a predicate.
pub fn literal_domains(predicate: &Expr) -> Vec<(ColumnRef, BTreeSet<String>)> {
    let mut parts = Vec::new();
    conjuncts(predicate, &mut parts);
    parts.into_iter().filter_map(literal_domain).collect()
}

/// Detects statically that a query asks only for rows of `table` that a
/// row constraint excludes: some SELECT reading `table` restricts a column
/// to literals disjoint from those the constraint allows for that column.
///
/// Returns a description of the excluded filter.
pub fn excluded_by_constraint(statements: &[Statement], table: &str, constraint: &str) -> Option<String> {
    let probe = parse_statements(&format!("SELECT 1 FROM t WHERE {constraint}")).ok()?;
    let Some(Statement::Query(q)) = probe.first() else {
        return None;
    };
    let SetExpr::Select(sel) = q.body.as_ref() else {
        return None;
    };
    let allowed: BTreeMap<String, BTreeSet<String>> = literal_domains(sel.selection.as_ref()?)
        .into_iter()
        .filter(|((qual, _), _)| qual.is_none())
        .map(|((_, col), lits)| (col, lits))
        .collect();
    if allowed.is_empty() {
        return None;
    }

    struct Finder<'a> {
        table: String,
        allowed: &'a BTreeMap<String, BTreeSet<String>>,
        found: Option<String>,
    }
    impl Visitor for Finder<'_> {
        type Break = ();
        fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<()> {
            let mut relations: Vec<(String, Option<String>)> = Vec::new();
            for twj in &select.from {
                for tf in std::iter::once(&twj.relation).chain(twj.joins.iter().map(|j| &j.relation)) {
                    match tf {
                        TableFactor::Table { name, alias, .. } => relations.push((
                            object_name_key(name),
                            alias.as_ref().map(|a| a.name.value.to_lowercase()),
                        )),
                        _ => relations.push((String::new(), None)),
                    }
                }
            }
            let Some((_, alias)) = relations.iter().find(|(n, _)| *n == self.table) else {
                return ControlFlow::Continue(());
            };
            let Some(selection) = &select.selection else {
                return ControlFlow::Continue(());
            };
            for ((qual, col), lits) in literal_domains(selection) {
                let refers = match &qual {
                    Some(q) => *q == self.table || alias.as_deref() == Some(q.as_str()),
                    None => relations.len() == 1,
                };
                if !refers {
                    continue;
                }
                if let Some(permitted) = self.allowed.get(&col) {
                    if permitted.is_disjoint(&lits) {
                        let shown: Vec<&str> = lits.iter().map(String::as_str).collect();
                        self.found = Some(format!("{col} = {}", shown.join(" | ")));
                        return ControlFlow::Break(());
                    }
                }
            }
            ControlFlow::Continue(())
        }
    }
    let mut f = Finder {
        table: table.to_lowercase(),
        allowed: &allowed,
        found: None,
    };
    for stmt in statements {
        if stmt.visit(&mut f).is_break() {
            break;
        }
    }
    f.found
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyphenated_identifiers_are_quoted() {
        let sql = "SELECT department, COUNT (patient-id) AS new-patients FROM hospital-admissions WHERE x = 'a-b'";
        assert_eq!(
            normalize_identifiers(sql, None),
            "SELECT department, COUNT (\"patient-id\") AS \"new-patients\" FROM \"hospital-admissions\" WHERE x = 'a-b'"
        );
    }

    #[test]
    fn subtraction_of_known_columns_is_preserved() {
        let known: HashSet<String> = ["total_2023", "total_2022"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            normalize_identifiers("SELECT total_2023-total_2022 FROM t", Some(&known)),
            "SELECT total_2023-total_2022 FROM t"
        );
        assert_eq!(
            normalize_identifiers("SELECT a - b, x-1 FROM t", None),
            "SELECT a - b, x-1 FROM t"
        );
    }

    #[test]
    fn comments_and_quotes_are_skipped() {
        let sql = "SELECT \"a-b\" -- note-here\nFROM t";
        assert_eq!(normalize_identifiers(sql, None), sql);
    }

    #[test]
    fn relations_and_local_names() {
        let stmts = parse_statements(
            "WITH x AS (SELECT * FROM a) SELECT * FROM x JOIN b ON x.id = b.id WHERE b.v IN (SELECT v FROM c)",
        )
        .unwrap();
        let rels: Vec<_> = referenced_relations(&stmts).into_iter().collect();
        assert_eq!(rels, ["a", "b", "c", "x"]);
        let local: Vec<_> = local_relation_names(&stmts).into_iter().collect();
        assert_eq!(local, ["x"]);
    }

    #[test]
    fn constraints_wrap_each_scan() {
        let mut stmts = parse_statements("SELECT t.city FROM offices AS t JOIN other ON t.id = other.id").unwrap();
        let mut c = BTreeMap::new();
        c.insert("offices".to_string(), "continent = 'North America'".to_string());
        apply_row_constraints(&mut stmts, &c).unwrap();
        assert_eq!(
            render_statements(&stmts),
            "SELECT t.city FROM (SELECT * FROM offices WHERE continent = 'North America') AS t JOIN other ON t.id = other.id"
        );
    }

    #[test]
    fn unaliased_scans_keep_their_name() {
        let mut stmts = parse_statements("SELECT offices.city FROM offices").unwrap();
        let mut c = BTreeMap::new();
        c.insert("offices".to_string(), "region = 'EU'".to_string());
        apply_row_constraints(&mut stmts, &c).unwrap();
        assert_eq!(
            render_statements(&stmts),
            "SELECT offices.city FROM (SELECT * FROM offices WHERE region = 'EU') AS offices"
        );
    }

    #[test]
    fn filter_columns_cover_where_group_and_having() {
        let stmts = parse_statements(
            "SELECT city, SUM(x) FROM t WHERE t.country = 'USA' GROUP BY city HAVING SUM(m2023_01) > 3 ORDER BY unit",
        )
        .unwrap();
        let cols: Vec<String> = filter_columns(&stmts).into_iter().collect();
        assert_eq!(cols, vec!["city", "country", "m2023_01"]);
    }

    #[test]
    fn disjoint_literal_filters_are_detected() {
        let stmts = parse_statements("SELECT SUM(total_2023) FROM e WHERE country = 'Argentina'").unwrap();
        let c = "country IN ('USA', 'Canada')";
        assert_eq!(
            excluded_by_constraint(&stmts, "e", c).as_deref(),
            Some("country = 'Argentina'")
        );
        let ok = parse_statements("SELECT SUM(total_2023) FROM e WHERE country = 'USA'").unwrap();
        assert_eq!(excluded_by_constraint(&ok, "e", c), None);
        let other_col = parse_statements("SELECT * FROM e WHERE city = 'Cordoba'").unwrap();
        assert_eq!(excluded_by_constraint(&other_col, "e", c), None);
        let ored = "(country = 'France') OR (country = 'Spain')";
        let spain = parse_statements("SELECT * FROM e AS x WHERE x.country = 'Spain'").unwrap();
        assert_eq!(excluded_by_constraint(&spain, "e", ored), None);
        let italy = parse_statements("SELECT * FROM e AS x WHERE x.country = 'Italy'").unwrap();
        assert!(excluded_by_constraint(&italy, "e", ored).is_some());
    }
}
