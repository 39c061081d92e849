//! In-memory evaluator for the supported SELECT dialect.
//!
//! Supported: `SELECT [DISTINCT]`, `FROM` with inner/left/right/full/cross
//! joins and derived tables, `WHERE`, `GROUP BY` (expressions, aliases or
//! ordinals), `HAVING`, `ORDER BY`, `LIMIT`/`OFFSET`, CTEs, `UNION`,
//! `INTERSECT`, `EXCEPT`, scalar / `IN` / `EXISTS` subqueries (correlated or
//! not), `CASE`, `CAST`, `LIKE`/`ILIKE`, `BETWEEN`, `IS [NOT] NULL`, the
//! aggregates `COUNT SUM AVG MIN MAX` and a handful of scalar functions.
//! All arithmetic is exact decimal.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rust_decimal::{Decimal, RoundingStrategy};
use sqlparser::ast::{
    self, BinaryOperator, CastKind, Distinct, Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr,
    JoinConstraint, JoinOperator, LimitClause, OrderByExpr, OrderByKind, OrderBySort, Query, Select, SelectItem,
    SelectItemQualifiedWildcardKind, SetExpr, SetOperator, SetQuantifier, Statement, TableFactor, TableWithJoins,
    UnaryOperator,
};

use super::sql::{object_name_key, view_query};
use super::value::Value;

pub type Row = Arc<[Value]>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineError {
    UnknownColumn(String),
    UnknownTable(String),
    Unsupported(String),
    /// Raised by a [`RelationSource`] refusing access; carries its message.
    Denied(String),
    Failed(String),
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::UnknownColumn(c) => write!(f, "column `{c}` does not exist"),
            EngineError::UnknownTable(t) => write!(f, "relation `{t}` does not exist"),
            EngineError::Unsupported(what) => write!(f, "unsupported SQL: {what}"),
            EngineError::Denied(msg) => f.write_str(msg),
            EngineError::Failed(msg) => f.write_str(msg),
        }
    }
}

fn fail<T>(msg: impl Into<String>) -> Result<T, EngineError> {
    Err(EngineError::Failed(msg.into()))
}

fn unsupported<T>(what: impl fmt::Display) -> Result<T, EngineError> {
    Err(EngineError::Unsupported(what.to_string()))
}

/// Base-table lookup used by the engine. Implementations may refuse
/// access by returning [`EngineError::Denied`].
/// Column names and rows of a base table.
pub type BaseTable = (Vec<String>, Vec<Row>);

pub trait RelationSource {
    /// `Ok(None)` when no such base table exists.
    fn base_table(&self, name: &str) -> Result<Option<BaseTable>, EngineError>;
}

#[derive(Debug, Clone)]
struct Col {
    qual: Option<String>,
    key: String,
    display: String,
}

/// Intermediate relation: column metadata plus shared rows.
#[derive(Debug, Clone)]
pub struct Relation {
    cols: Vec<Col>,
    rows: Vec<Row>,
}

impl Relation {
    fn unit() -> Self {
        Relation {
            cols: Vec::new(),
            rows: vec![Arc::from(Vec::new())],
        }
    }

    fn with_names(names: &[String], rows: Vec<Row>, qual: Option<&str>) -> Self {
        let cols = names
            .iter()
            .map(|n| Col {
                qual: qual.map(str::to_string),
                key: n.to_lowercase(),
                display: n.clone(),
            })
            .collect();
        Relation { cols, rows }
    }

    fn requalified(&self, qual: &str) -> Self {
        let cols = self
            .cols
            .iter()
            .map(|c| Col {
                qual: Some(qual.to_string()),
                ..c.clone()
            })
            .collect();
        Relation {
            cols,
            rows: self.rows.clone(),
        }
    }

    fn find(&self, qual: Option<&str>, key: &str) -> Option<usize> {
        self.cols
            .iter()
            .position(|c| c.key == key && qual.is_none_or(|q| c.qual.as_deref() == Some(q)))
    }

    pub fn column_names(&self) -> Vec<String> {
        self.cols.iter().map(|c| c.display.clone()).collect()
    }

    pub fn into_rows(self) -> Vec<Vec<Value>> {
        self.rows.into_iter().map(|r| r.to_vec()).collect()
    }
}

struct Env<'a> {
    rels: HashMap<String, Arc<Relation>>,
    parent: Option<&'a Env<'a>>,
}

impl Env<'_> {
    fn lookup(&self, name: &str) -> Option<Arc<Relation>> {
        match self.rels.get(name) {
            Some(r) => Some(Arc::clone(r)),
            None => self.parent.and_then(|p| p.lookup(name)),
        }
    }
}

#[derive(Clone, Copy)]
struct Scope<'a> {
    rel: &'a Relation,
    row: Option<&'a Row>,
    group: Option<&'a [usize]>,
    outer: Option<&'a Scope<'a>>,
}

/// One output unit of a SELECT: a row, or a group of rows.
struct Unit {
    row: Option<usize>,
    group: Option<Vec<usize>>,
}

pub struct Engine<'s> {
    source: &'s dyn RelationSource,
    subquery_cache: RefCell<HashMap<usize, Arc<Relation>>>,
    correlated: RefCell<HashSet<usize>>,
}

impl<'s> Engine<'s> {
    pub fn new(source: &'s dyn RelationSource) -> Self {
        Self {
            source,
            subquery_cache: RefCell::new(HashMap::new()),
            correlated: RefCell::new(HashSet::new()),
        }
    }

    /// Runs the statements in order. Every statement but the last must be
    /// a `CREATE VIEW`, whose result becomes visible to later statements
    /// for this run only. The last statement must be a query.
    pub fn run(&self, statements: &[Statement]) -> Result<Relation, EngineError> {
        let mut env = Env {
            rels: HashMap::new(),
            parent: None,
        };
        let Some((last, views)) = statements.split_last() else {
            return fail("no statements to execute");
        };
        for stmt in views {
            let Some((name, query)) = view_query(stmt) else {
                return unsupported("only CREATE VIEW may precede the final query");
            };
            let rel = self.query(query, &env, None)?;
            env.rels.insert(name, Arc::new(rel));
        }
        match last {
            Statement::Query(q) => self.query(q, &env, None),
            _ => unsupported("the final statement must be a query"),
        }
    }

    fn query(&self, q: &Query, env: &Env, outer: Option<&Scope>) -> Result<Relation, EngineError> {
        if q.fetch.is_some() || !q.locks.is_empty() {
            return unsupported("FETCH / locking clauses");
        }
        let mut local = Env {
            rels: HashMap::new(),
            parent: Some(env),
        };
        if let Some(with) = &q.with {
            if with.recursive {
                return unsupported("WITH RECURSIVE");
            }
            for cte in &with.cte_tables {
                let rel = {
                    let view = Env {
                        rels: local.rels.clone(),
                        parent: Some(env),
                    };
                    self.query(&cte.query, &view, outer)?
                };
                let rel = rename_columns(rel, &cte.alias)?;
                local.rels.insert(cte.alias.name.value.to_lowercase(), Arc::new(rel));
            }
        }
        let order_by: Vec<OrderByExpr> = match &q.order_by {
            None => Vec::new(),
            Some(ob) => match &ob.kind {
                OrderByKind::Expressions(exprs) => exprs.clone(),
                OrderByKind::All(_) => return unsupported("ORDER BY ALL"),
            },
        };
        let mut rel = match q.body.as_ref() {
            SetExpr::Select(select) => self.select(select, &order_by, &local, outer)?,
            other => {
                let rel = self.set_expr(other, &local, outer)?;
                self.order_output(rel, &order_by)?
            }
        };
        if let Some(limit) = &q.limit_clause {
            let (limit, offset) = match limit {
                LimitClause::LimitOffset {
                    limit,
                    offset,
                    limit_by,
                } => {
                    if !limit_by.is_empty() {
                        return unsupported("LIMIT BY");
                    }
                    (limit.as_ref(), offset.as_ref().map(|o| &o.value))
                }
                LimitClause::OffsetCommaLimit { offset, limit } => (Some(limit), Some(offset)),
            };
            let offset = match offset {
                Some(e) => self.const_count(e, &local)?,
                None => 0,
            };
            let take = match limit {
                Some(e) if !matches!(e, Expr::Value(v) if v.value == ast::Value::Null) => {
                    self.const_count(e, &local)?
                }
                _ => usize::MAX,
            };
            rel.rows = rel.rows.into_iter().skip(offset).take(take).collect();
        }
        Ok(rel)
    }

    fn const_count(&self, e: &Expr, env: &Env) -> Result<usize, EngineError> {
        let unit = Relation::unit();
        let scope = Scope {
            rel: &unit,
            row: unit.rows.first(),
            group: None,
            outer: None,
        };
        match self.eval(e, &scope, env)? {
            Value::Number(d) if d >= Decimal::ZERO && d.fract().is_zero() => {
                usize::try_from(d.mantissa() / 10i128.pow(d.scale())).or_else(|_| fail("LIMIT/OFFSET too large"))
            }
            other => fail(format!("LIMIT/OFFSET must be a non-negative integer, got {other}")),
        }
    }

    fn set_expr(&self, body: &SetExpr, env: &Env, outer: Option<&Scope>) -> Result<Relation, EngineError> {
        match body {
            SetExpr::Select(s) => self.select(s, &[], env, outer),
            SetExpr::Query(q) => self.query(q, env, outer),
            SetExpr::SetOperation {
                op,
                set_quantifier,
                left,
                right,
            } => {
                let l = self.set_expr(left, env, outer)?;
                let r = self.set_expr(right, env, outer)?;
                if l.cols.len() != r.cols.len() {
                    return fail(format!(
                        "each {op} query must have the same number of columns ({} vs {})",
                        l.cols.len(),
                        r.cols.len()
                    ));
                }
                let all = match set_quantifier {
                    SetQuantifier::All => true,
                    SetQuantifier::Distinct | SetQuantifier::None => false,
                    other => return unsupported(format!("set quantifier {other}")),
                };
                let mut cols = l.cols.clone();
                for c in &mut cols {
                    c.qual = None;
                }
                let rows = match op {
                    SetOperator::Union => {
                        let rows: Vec<Row> = l.rows.into_iter().chain(r.rows).collect();
                        if all {
                            rows
                        } else {
                            dedupe(rows)
                        }
                    }
                    SetOperator::Intersect => {
                        let mut right: HashMap<Row, usize> = HashMap::new();
                        for row in r.rows {
                            *right.entry(row).or_default() += 1;
                        }
                        let mut out = Vec::new();
                        for row in l.rows {
                            if let Some(n) = right.get_mut(&row) {
                                if *n > 0 {
                                    if all {
                                        *n -= 1;
                                    }
                                    out.push(row);
                                }
                            }
                        }
                        if all {
                            out
                        } else {
                            dedupe(out)
                        }
                    }
                    SetOperator::Except | SetOperator::Minus => {
                        let mut right: HashMap<Row, usize> = HashMap::new();
                        for row in r.rows {
                            *right.entry(row).or_default() += 1;
                        }
                        let mut out = Vec::new();
                        for row in l.rows {
                            match right.get_mut(&row) {
                                Some(n) if *n > 0 => {
                                    if all {
                                        *n -= 1;
                                    }
                                }
                                _ => out.push(row),
                            }
                        }
                        if all {
                            out
                        } else {
                            dedupe(out)
                        }
                    }
                };
                Ok(Relation { cols, rows })
            }
            other => unsupported(format!("query body `{other}`")),
        }
    }

    fn order_output(&self, mut rel: Relation, order_by: &[OrderByExpr]) -> Result<Relation, EngineError> {
        if order_by.is_empty() {
            return Ok(rel);
        }
        let mut keyed = Vec::with_capacity(rel.rows.len());
        for row in std::mem::take(&mut rel.rows) {
            let mut keys = Vec::with_capacity(order_by.len());
            for ob in order_by {
                let idx = match &ob.expr {
                    Expr::Value(v) => ordinal(&v.value, rel.cols.len())?,
                    Expr::Identifier(id) => rel
                        .find(None, &id.value.to_lowercase())
                        .ok_or_else(|| EngineError::UnknownColumn(id.value.clone()))?,
                    other => return unsupported(format!("ORDER BY `{other}` on a set operation")),
                };
                keys.push(row[idx].clone());
            }
            keyed.push((keys, row));
        }
        sort_keyed(&mut keyed, order_by)?;
        rel.rows = keyed.into_iter().map(|(_, r)| r).collect();
        Ok(rel)
    }

    fn select(
        &self,
        s: &Select,
        order_by: &[OrderByExpr],
        env: &Env,
        outer: Option<&Scope>,
    ) -> Result<Relation, EngineError> {
        if s.top.is_some() {
            return unsupported("TOP");
        }
        if s.into.is_some() {
            return unsupported("SELECT INTO");
        }
        if s.qualify.is_some() || s.prewhere.is_some() || !s.lateral_views.is_empty() || !s.connect_by.is_empty() {
            return unsupported("dialect-specific SELECT clause");
        }
        let distinct = match &s.distinct {
            None | Some(Distinct::All) => false,
            Some(Distinct::Distinct) => true,
            Some(Distinct::On(_)) => return unsupported("DISTINCT ON"),
        };

        let mut rel = match s.from.split_first() {
            None => Relation::unit(),
            Some((first, rest)) => {
                let mut rel = self.table_with_joins(first, env, outer)?;
                for twj in rest {
                    let right = self.table_with_joins(twj, env, outer)?;
                    rel = cross(&rel, &right);
                }
                rel
            }
        };

        if let Some(pred) = &s.selection {
            let mut kept = Vec::with_capacity(rel.rows.len());
            for row in &rel.rows {
                let scope = Scope {
                    rel: &rel,
                    row: Some(row),
                    group: None,
                    outer,
                };
                if truthy(&self.eval(pred, &scope, env)?) {
                    kept.push(Arc::clone(row));
                }
            }
            rel.rows = kept;
        }

        // Projection items, wildcards expanded to column indexes.
        enum Item<'q> {
            Expr(&'q Expr, String),
            Column(usize),
        }
        let mut items = Vec::new();
        for item in &s.projection {
            match item {
                SelectItem::UnnamedExpr(e) => items.push(Item::Expr(e, output_name(e))),
                SelectItem::ExprWithAlias { expr, alias } => items.push(Item::Expr(expr, alias.value.clone())),
                SelectItem::Wildcard(_) => items.extend((0..rel.cols.len()).map(Item::Column)),
                SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::ObjectName(name), _) => {
                    let q = object_name_key(name);
                    let before = items.len();
                    items.extend(
                        rel.cols
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| c.qual.as_deref() == Some(q.as_str()))
                            .map(|(i, _)| Item::Column(i)),
                    );
                    if items.len() == before {
                        return Err(EngineError::UnknownTable(q));
                    }
                }
                other => return unsupported(format!("select item `{other}`")),
            }
        }
        let out_names: Vec<String> = items
            .iter()
            .map(|it| match it {
                Item::Expr(_, n) => n.clone(),
                Item::Column(i) => rel.cols[*i].display.clone(),
            })
            .collect();

        let group_exprs: Vec<&Expr> = match &s.group_by {
            GroupByExpr::Expressions(exprs, mods) => {
                if !mods.is_empty() {
                    return unsupported("GROUP BY modifiers");
                }
                let pairs: Vec<(Option<&Expr>, Option<String>)> = items
                    .iter()
                    .map(|it| match it {
                        Item::Expr(e, n) => (Some(*e), Some(n.clone())),
                        Item::Column(i) => (None, Some(rel.cols[*i].display.clone())),
                    })
                    .collect();
                let mut resolved = Vec::with_capacity(exprs.len());
                for e in exprs {
                    resolved.push(resolve_group_expr(e, &rel, &pairs)?);
                }
                resolved
            }
            GroupByExpr::All(_) => return unsupported("GROUP BY ALL"),
        };

        let aggregate = !group_exprs.is_empty()
            || items
                .iter()
                .any(|it| matches!(it, Item::Expr(e, _) if contains_aggregate(e)))
            || s.having.as_ref().is_some_and(contains_aggregate)
            || order_by.iter().any(|o| contains_aggregate(&o.expr));

        let mut units: Vec<Unit> = if aggregate {
            if group_exprs.is_empty() {
                vec![Unit {
                    row: None,
                    group: Some((0..rel.rows.len()).collect()),
                }]
            } else {
                let mut index: HashMap<Vec<Value>, usize> = HashMap::new();
                let mut groups: Vec<Vec<usize>> = Vec::new();
                for (i, row) in rel.rows.iter().enumerate() {
                    let scope = Scope {
                        rel: &rel,
                        row: Some(row),
                        group: None,
                        outer,
                    };
                    let key = group_exprs
                        .iter()
                        .map(|e| self.eval(e, &scope, env))
                        .collect::<Result<Vec<_>, _>>()?;
                    match index.get(&key) {
                        Some(&g) => groups[g].push(i),
                        None => {
                            index.insert(key, groups.len());
                            groups.push(vec![i]);
                        }
                    }
                }
                groups
                    .into_iter()
                    .map(|g| Unit {
                        row: None,
                        group: Some(g),
                    })
                    .collect()
            }
        } else {
            if s.having.is_some() {
                return unsupported("HAVING without aggregation");
            }
            (0..rel.rows.len())
                .map(|i| Unit {
                    row: Some(i),
                    group: None,
                })
                .collect()
        };
        for u in &mut units {
            if let Some(g) = &u.group {
                u.row = g.first().copied();
            }
        }

        if let Some(having) = &s.having {
            let mut kept = Vec::with_capacity(units.len());
            for u in units {
                let scope = unit_scope(&rel, &u, outer);
                if truthy(&self.eval(having, &scope, env)?) {
                    kept.push(u);
                }
            }
            units = kept;
        }

        let mut produced: Vec<(Vec<Value>, Row)> = Vec::with_capacity(units.len());
        let mut seen: HashSet<Row> = HashSet::new();
        for u in &units {
            let scope = unit_scope(&rel, u, outer);
            let mut out = Vec::with_capacity(items.len());
            for it in &items {
                out.push(match it {
                    Item::Expr(e, _) => self.eval(e, &scope, env)?,
                    Item::Column(i) => scope.row.map(|r| r[*i].clone()).unwrap_or(Value::Null),
                });
            }
            let out: Row = Arc::from(out);
            if distinct && !seen.insert(Arc::clone(&out)) {
                continue;
            }
            let mut keys = Vec::with_capacity(order_by.len());
            for ob in order_by {
                keys.push(self.order_key(&ob.expr, &out, &out_names, &scope, env)?);
            }
            produced.push((keys, out));
        }
        if !order_by.is_empty() {
            sort_keyed(&mut produced, order_by)?;
        }
        Ok(Relation::with_names(
            &out_names,
            produced.into_iter().map(|(_, r)| r).collect(),
            None,
        ))
    }

    fn order_key(
        &self,
        e: &Expr,
        out: &Row,
        out_names: &[String],
        scope: &Scope,
        env: &Env,
    ) -> Result<Value, EngineError> {
        match e {
            Expr::Value(v) if matches!(v.value, ast::Value::Number(..)) => {
                Ok(out[ordinal(&v.value, out.len())?].clone())
            }
            Expr::Identifier(id) => {
                let key = id.value.to_lowercase();
                match out_names.iter().position(|n| n.to_lowercase() == key) {
                    Some(i) => Ok(out[i].clone()),
                    None => self.eval(e, scope, env),
                }
            }
            _ => self.eval(e, scope, env),
        }
    }

    fn table_with_joins(
        &self,
        twj: &TableWithJoins,
        env: &Env,
        outer: Option<&Scope>,
    ) -> Result<Relation, EngineError> {
        let mut left = self.table_factor(&twj.relation, env, outer)?;
        for join in &twj.joins {
            let right = self.table_factor(&join.relation, env, outer)?;
            let (kind, constraint) = match &join.join_operator {
                JoinOperator::Join(c) | JoinOperator::Inner(c) => (JoinKind::Inner, c),
                JoinOperator::Left(c) | JoinOperator::LeftOuter(c) => (JoinKind::Left, c),
                JoinOperator::Right(c) | JoinOperator::RightOuter(c) => (JoinKind::Right, c),
                JoinOperator::FullOuter(c) => (JoinKind::Full, c),
                JoinOperator::CrossJoin(c) => (JoinKind::Inner, c),
                other => return unsupported(format!("join operator {other:?}")),
            };
            left = self.join(left, right, kind, constraint, env, outer)?;
        }
        Ok(left)
    }

    fn table_factor(&self, tf: &TableFactor, env: &Env, outer: Option<&Scope>) -> Result<Relation, EngineError> {
        match tf {
            TableFactor::Table { name, alias, args, .. } => {
                if args.is_some() {
                    return unsupported("table-valued functions");
                }
                let key = object_name_key(name);
                let qual = alias
                    .as_ref()
                    .map(|a| a.name.value.to_lowercase())
                    .unwrap_or_else(|| key.clone());
                let rel = match env.lookup(&key) {
                    Some(rel) => rel.requalified(&qual),
                    None => match self.source.base_table(&key)? {
                        Some((names, rows)) => Relation::with_names(&names, rows, Some(&qual)),
                        None => return Err(EngineError::UnknownTable(key)),
                    },
                };
                match alias {
                    Some(a) if !a.columns.is_empty() => rename_columns(rel, a),
                    _ => Ok(rel),
                }
            }
            TableFactor::Derived {
                lateral,
                subquery,
                alias,
                ..
            } => {
                let rel = if *lateral {
                    return unsupported("LATERAL");
                } else {
                    self.query(subquery, env, outer)?
                };
                match alias {
                    Some(a) => {
                        let rel = rename_columns(rel, a)?;
                        Ok(rel.requalified(&a.name.value.to_lowercase()))
                    }
                    None => Ok(rel),
                }
            }
            TableFactor::NestedJoin {
                table_with_joins,
                alias,
            } => {
                let rel = self.table_with_joins(table_with_joins, env, outer)?;
                match alias {
                    Some(a) => Ok(rename_columns(rel, a)?.requalified(&a.name.value.to_lowercase())),
                    None => Ok(rel),
                }
            }
            other => unsupported(format!("table factor `{other}`")),
        }
    }

    fn join(
        &self,
        left: Relation,
        right: Relation,
        kind: JoinKind,
        constraint: &JoinConstraint,
        env: &Env,
        outer: Option<&Scope>,
    ) -> Result<Relation, EngineError> {
        let mut cols = left.cols.clone();
        cols.extend(right.cols.iter().cloned());
        let combined_meta = Relation { cols, rows: Vec::new() };
        let on: Option<Expr> = match constraint {
            JoinConstraint::On(e) => Some(e.clone()),
            JoinConstraint::None => None,
            JoinConstraint::Using(names) => {
                let mut pred: Option<Expr> = None;
                for name in names {
                    let col = object_name_key(name);
                    let lq = left
                        .cols
                        .iter()
                        .find(|c| c.key == col)
                        .and_then(|c| c.qual.clone())
                        .ok_or_else(|| EngineError::UnknownColumn(col.clone()))?;
                    let rq = right
                        .cols
                        .iter()
                        .find(|c| c.key == col)
                        .and_then(|c| c.qual.clone())
                        .ok_or_else(|| EngineError::UnknownColumn(col.clone()))?;
                    let eq = Expr::BinaryOp {
                        left: Box::new(Expr::CompoundIdentifier(vec![
                            ast::Ident::new(lq),
                            ast::Ident::new(&col),
                        ])),
                        op: BinaryOperator::Eq,
                        right: Box::new(Expr::CompoundIdentifier(vec![
                            ast::Ident::new(rq),
                            ast::Ident::new(&col),
                        ])),
                    };
                    pred = Some(match pred {
                        None => eq,
                        Some(p) => Expr::BinaryOp {
                            left: Box::new(p),
                            op: BinaryOperator::And,
                            right: Box::new(eq),
                        },
                    });
                }
                pred
            }
            JoinConstraint::Natural => return unsupported("NATURAL JOIN"),
        };

        // Candidate pairs: hash on equality conjuncts between the two sides.
        let mut keys_l = Vec::new();
        let mut keys_r = Vec::new();
        if let Some(on) = &on {
            for conj in conjuncts(on) {
                if let Expr::BinaryOp {
                    left: a,
                    op: BinaryOperator::Eq,
                    right: b,
                } = conj
                {
                    if side_of(a, &left, &right) == Some(Side::Left) && side_of(b, &left, &right) == Some(Side::Right) {
                        keys_l.push(a.as_ref());
                        keys_r.push(b.as_ref());
                    } else if side_of(a, &left, &right) == Some(Side::Right)
                        && side_of(b, &left, &right) == Some(Side::Left)
                    {
                        keys_l.push(b.as_ref());
                        keys_r.push(a.as_ref());
                    }
                }
            }
        }
        let candidates: Vec<Vec<usize>> = if keys_l.is_empty() {
            vec![(0..right.rows.len()).collect(); left.rows.len()]
        } else {
            let mut table: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
            for (j, row) in right.rows.iter().enumerate() {
                let scope = Scope {
                    rel: &right,
                    row: Some(row),
                    group: None,
                    outer,
                };
                let key = keys_r
                    .iter()
                    .map(|e| self.eval(e, &scope, env).map(normalize_key))
                    .collect::<Result<Vec<_>, _>>()?;
                if key.iter().any(Value::is_null) {
                    continue;
                }
                table.entry(key).or_default().push(j);
            }
            let mut out = Vec::with_capacity(left.rows.len());
            for row in &left.rows {
                let scope = Scope {
                    rel: &left,
                    row: Some(row),
                    group: None,
                    outer,
                };
                let key = keys_l
                    .iter()
                    .map(|e| self.eval(e, &scope, env).map(normalize_key))
                    .collect::<Result<Vec<_>, _>>()?;
                out.push(table.get(&key).cloned().unwrap_or_default());
            }
            out
        };

        let lw = left.cols.len();
        let rw = right.cols.len();
        let mut rows = Vec::new();
        let mut right_matched = vec![false; right.rows.len()];
        for (i, lrow) in left.rows.iter().enumerate() {
            let mut matched = false;
            for &j in &candidates[i] {
                let combined: Row = lrow.iter().chain(right.rows[j].iter()).cloned().collect();
                let ok = match &on {
                    None => true,
                    Some(pred) => {
                        let scope = Scope {
                            rel: &combined_meta,
                            row: Some(&combined),
                            group: None,
                            outer,
                        };
                        truthy(&self.eval(pred, &scope, env)?)
                    }
                };
                if ok {
                    matched = true;
                    right_matched[j] = true;
                    rows.push(combined);
                }
            }
            if !matched && matches!(kind, JoinKind::Left | JoinKind::Full) {
                rows.push(
                    lrow.iter()
                        .cloned()
                        .chain(std::iter::repeat_n(Value::Null, rw))
                        .collect(),
                );
            }
        }
        if matches!(kind, JoinKind::Right | JoinKind::Full) {
            for (j, rrow) in right.rows.iter().enumerate() {
                if !right_matched[j] {
                    rows.push(
                        std::iter::repeat_n(Value::Null, lw)
                            .chain(rrow.iter().cloned())
                            .collect(),
                    );
                }
            }
        }
        Ok(Relation {
            cols: combined_meta.cols,
            rows,
        })
    }

    fn subquery(&self, q: &Query, scope: &Scope, env: &Env) -> Result<Arc<Relation>, EngineError> {
        let key = q as *const Query as usize;
        if !self.correlated.borrow().contains(&key) {
            if let Some(rel) = self.subquery_cache.borrow().get(&key) {
                return Ok(Arc::clone(rel));
            }
            match self.query(q, env, None) {
                Ok(rel) => {
                    let rel = Arc::new(rel);
                    self.subquery_cache.borrow_mut().insert(key, Arc::clone(&rel));
                    return Ok(rel);
                }
                Err(EngineError::UnknownColumn(_)) => {
                    self.correlated.borrow_mut().insert(key);
                }
                Err(e) => return Err(e),
            }
        }
        self.query(q, env, Some(scope)).map(Arc::new)
    }

    fn resolve(&self, scope: &Scope, qual: Option<&str>, key: &str) -> Result<Value, EngineError> {
        let mut cur = Some(scope);
        while let Some(s) = cur {
            if let Some(i) = s.rel.find(qual, key) {
                return Ok(s.row.map(|r| r[i].clone()).unwrap_or(Value::Null));
            }
            cur = s.outer;
        }
        Err(EngineError::UnknownColumn(match qual {
            Some(q) => format!("{q}.{key}"),
            None => key.to_string(),
        }))
    }

    fn eval(&self, e: &Expr, sc: &Scope, env: &Env) -> Result<Value, EngineError> {
        match e {
            Expr::Identifier(id) => self.resolve(sc, None, &id.value.to_lowercase()),
            Expr::CompoundIdentifier(parts) => {
                let n = parts.len();
                if n < 2 {
                    return self.resolve(sc, None, &parts[0].value.to_lowercase());
                }
                self.resolve(
                    sc,
                    Some(&parts[n - 2].value.to_lowercase()),
                    &parts[n - 1].value.to_lowercase(),
                )
            }
            Expr::Value(v) => literal(&v.value),
            Expr::Nested(inner) => self.eval(inner, sc, env),
            Expr::IsNull(inner) => Ok(Value::Bool(self.eval(inner, sc, env)?.is_null())),
            Expr::IsNotNull(inner) => Ok(Value::Bool(!self.eval(inner, sc, env)?.is_null())),
            Expr::IsTrue(inner) => Ok(Value::Bool(self.eval(inner, sc, env)? == Value::Bool(true))),
            Expr::IsFalse(inner) => Ok(Value::Bool(self.eval(inner, sc, env)? == Value::Bool(false))),
            Expr::UnaryOp { op, expr } => {
                let v = self.eval(expr, sc, env)?;
                match (op, v) {
                    (_, Value::Null) => Ok(Value::Null),
                    (UnaryOperator::Plus, v @ Value::Number(_)) => Ok(v),
                    (UnaryOperator::Minus, Value::Number(d)) => Ok(Value::Number(-d)),
                    (UnaryOperator::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    (op, v) => fail(format!("cannot apply {op} to `{v}`")),
                }
            }
            Expr::BinaryOp { left, op, right } => self.binary(left, op, right, sc, env),
            Expr::Between {
                expr,
                negated,
                low,
                high,
            } => {
                let v = self.eval(expr, sc, env)?;
                let lo = self.eval(low, sc, env)?;
                let hi = self.eval(high, sc, env)?;
                let ge = v.sql_cmp(&lo).map(|o| o != Ordering::Less);
                let le = v.sql_cmp(&hi).map(|o| o != Ordering::Greater);
                let r = and3(ge, le);
                Ok(bool3(if *negated { r.map(|b| !b) } else { r }))
            }
            Expr::InList { expr, list, negated } => {
                let v = self.eval(expr, sc, env)?;
                let mut items = Vec::with_capacity(list.len());
                for item in list {
                    items.push(self.eval(item, sc, env)?);
                }
                Ok(bool3(in_set(&v, items.iter(), *negated)))
            }
            Expr::InSubquery {
                expr,
                subquery,
                negated,
            } => {
                let v = self.eval(expr, sc, env)?;
                let rel = self.subquery(subquery, sc, env)?;
                if rel.cols.len() != 1 {
                    return fail("subquery in IN must return exactly one column");
                }
                Ok(bool3(in_set(&v, rel.rows.iter().map(|r| &r[0]), *negated)))
            }
            Expr::Exists { subquery, negated } => {
                let rel = self.subquery(subquery, sc, env)?;
                Ok(Value::Bool(rel.rows.is_empty() == *negated))
            }
            Expr::Subquery(q) => {
                let rel = self.subquery(q, sc, env)?;
                if rel.cols.len() != 1 {
                    return fail("scalar subquery must return exactly one column");
                }
                match rel.rows.len() {
                    0 => Ok(Value::Null),
                    1 => Ok(rel.rows[0][0].clone()),
                    _ => fail("more than one row returned by a subquery used as an expression"),
                }
            }
            Expr::Like {
                negated,
                any,
                expr,
                pattern,
                escape_char,
            }
            | Expr::ILike {
                negated,
                any,
                expr,
                pattern,
                escape_char,
            } => {
                if *any || escape_char.is_some() {
                    return unsupported("LIKE ANY / ESCAPE");
                }
                let ci = matches!(e, Expr::ILike { .. });
                let v = self.eval(expr, sc, env)?;
                let p = self.eval(pattern, sc, env)?;
                if v.is_null() || p.is_null() {
                    return Ok(Value::Null);
                }
                let (mut text, mut pat) = (v.to_string(), p.to_string());
                if ci {
                    text = text.to_lowercase();
                    pat = pat.to_lowercase();
                }
                Ok(Value::Bool(like_match(&text, &pat) != *negated))
            }
            Expr::Case {
                operand,
                conditions,
                else_result,
                ..
            } => {
                let op = match operand {
                    Some(o) => Some(self.eval(o, sc, env)?),
                    None => None,
                };
                for cw in conditions {
                    let hit = match &op {
                        Some(o) => o.sql_cmp(&self.eval(&cw.condition, sc, env)?) == Some(Ordering::Equal),
                        None => truthy(&self.eval(&cw.condition, sc, env)?),
                    };
                    if hit {
                        return self.eval(&cw.result, sc, env);
                    }
                }
                match else_result {
                    Some(e) => self.eval(e, sc, env),
                    None => Ok(Value::Null),
                }
            }
            Expr::Cast {
                kind,
                expr,
                data_type,
                format,
            } => {
                if format.is_some() {
                    return unsupported("CAST ... FORMAT");
                }
                let v = self.eval(expr, sc, env)?;
                match cast(v, &data_type.to_string()) {
                    Ok(v) => Ok(v),
                    Err(_) if !matches!(kind, CastKind::Cast | CastKind::DoubleColon) => Ok(Value::Null),
                    Err(e) => Err(e),
                }
            }
            Expr::Function(f) => self.function(f, sc, env),
            other => unsupported(format!("expression `{other}`")),
        }
    }

    fn binary(&self, l: &Expr, op: &BinaryOperator, r: &Expr, sc: &Scope, env: &Env) -> Result<Value, EngineError> {
        match op {
            BinaryOperator::And => {
                let a = as_bool3(&self.eval(l, sc, env)?)?;
                if a == Some(false) {
                    return Ok(Value::Bool(false));
                }
                let b = as_bool3(&self.eval(r, sc, env)?)?;
                return Ok(bool3(and3(a, b)));
            }
            BinaryOperator::Or => {
                let a = as_bool3(&self.eval(l, sc, env)?)?;
                if a == Some(true) {
                    return Ok(Value::Bool(true));
                }
                let b = as_bool3(&self.eval(r, sc, env)?)?;
                return Ok(bool3(match (a, b) {
                    (Some(true), _) | (_, Some(true)) => Some(true),
                    (Some(false), Some(false)) => Some(false),
                    _ => None,
                }));
            }
            _ => {}
        }
        let a = self.eval(l, sc, env)?;
        let b = self.eval(r, sc, env)?;
        let cmp = |pred: fn(Ordering) -> bool| Ok(bool3(a.sql_cmp(&b).map(pred)));
        match op {
            BinaryOperator::Eq => cmp(|o| o == Ordering::Equal),
            BinaryOperator::NotEq => cmp(|o| o != Ordering::Equal),
            BinaryOperator::Lt => cmp(|o| o == Ordering::Less),
            BinaryOperator::LtEq => cmp(|o| o != Ordering::Greater),
            BinaryOperator::Gt => cmp(|o| o == Ordering::Greater),
            BinaryOperator::GtEq => cmp(|o| o != Ordering::Less),
            BinaryOperator::StringConcat => {
                if a.is_null() || b.is_null() {
                    Ok(Value::Null)
                } else {
                    Ok(Value::Text(format!("{a}{b}")))
                }
            }
            BinaryOperator::Plus
            | BinaryOperator::Minus
            | BinaryOperator::Multiply
            | BinaryOperator::Divide
            | BinaryOperator::Modulo => {
                if a.is_null() || b.is_null() {
                    return Ok(Value::Null);
                }
                let (Some(x), Some(y)) = (a.as_number(), b.as_number()) else {
                    return fail(format!("operator {op} needs numbers, got `{a}` and `{b}`"));
                };
                let res = match op {
                    BinaryOperator::Plus => x.checked_add(y),
                    BinaryOperator::Minus => x.checked_sub(y),
                    BinaryOperator::Multiply => x.checked_mul(y),
                    BinaryOperator::Divide => {
                        if y.is_zero() {
                            return fail("division by zero");
                        }
                        x.checked_div(y).map(|d| d.normalize())
                    }
                    _ => {
                        if y.is_zero() {
                            return fail("division by zero");
                        }
                        x.checked_rem(y)
                    }
                };
                res.map(Value::Number)
                    .ok_or_else(|| EngineError::Failed("numeric overflow".into()))
            }
            other => unsupported(format!("operator {other}")),
        }
    }

    fn function(&self, f: &ast::Function, sc: &Scope, env: &Env) -> Result<Value, EngineError> {
        let name = object_name_key(&f.name);
        if f.over.is_some() {
            return unsupported("window functions");
        }
        if f.filter.is_some() || !f.within_group.is_empty() {
            return unsupported("aggregate FILTER / WITHIN GROUP");
        }
        let (args, distinct) = function_args(f)?;
        if is_aggregate_name(&name) {
            let Some(group) = sc.group else {
                return fail(format!(
                    "aggregate function {} is not allowed here",
                    name.to_uppercase()
                ));
            };
            return self.aggregate(&name, &args, distinct, group, sc, env);
        }
        if distinct {
            return unsupported(format!("DISTINCT in {name}"));
        }
        let mut vals = Vec::with_capacity(args.len());
        for a in &args {
            match a {
                FunctionArgExpr::Expr(e) => vals.push(self.eval(e, sc, env)?),
                _ => return unsupported(format!("wildcard argument to {name}")),
            }
        }
        scalar_function(&name, vals)
    }

    fn aggregate(
        &self,
        name: &str,
        args: &[&FunctionArgExpr],
        distinct: bool,
        group: &[usize],
        sc: &Scope,
        env: &Env,
    ) -> Result<Value, EngineError> {
        if name == "count" && matches!(args, [FunctionArgExpr::Wildcard]) {
            return Ok(Value::int(group.len() as i64));
        }
        let [FunctionArgExpr::Expr(arg)] = args else {
            return fail(format!("{} takes exactly one argument", name.to_uppercase()));
        };
        let mut values = Vec::with_capacity(group.len());
        let mut seen = HashSet::new();
        for &i in group {
            let row_scope = Scope {
                rel: sc.rel,
                row: Some(&sc.rel.rows[i]),
                group: None,
                outer: sc.outer,
            };
            let v = self.eval(arg, &row_scope, env)?;
            if v.is_null() {
                continue;
            }
            if distinct && !seen.insert(normalize_key(v.clone())) {
                continue;
            }
            values.push(v);
        }
        match name {
            "count" => Ok(Value::int(values.len() as i64)),
            "sum" | "avg" => {
                if values.is_empty() {
                    return Ok(Value::Null);
                }
                let mut total = Decimal::ZERO;
                for v in &values {
                    let Some(d) = v.as_number() else {
                        return fail(format!("{} needs numbers, got `{v}`", name.to_uppercase()));
                    };
                    total = total
                        .checked_add(d)
                        .ok_or_else(|| EngineError::Failed("numeric overflow".into()))?;
                }
                if name == "sum" {
                    Ok(Value::Number(total))
                } else {
                    let avg = total
                        .checked_div(Decimal::from(values.len() as u64))
                        .ok_or_else(|| EngineError::Failed("numeric overflow".into()))?;
                    Ok(Value::Number(avg.normalize()))
                }
            }
            "min" | "max" => {
                let mut best: Option<Value> = None;
                for v in values {
                    best = Some(match best {
                        None => v,
                        Some(b) => {
                            let o = v.sort_cmp(&b);
                            if (name == "min" && o == Ordering::Less) || (name == "max" && o == Ordering::Greater) {
                                v
                            } else {
                                b
                            }
                        }
                    });
                }
                Ok(best.unwrap_or(Value::Null))
            }
            _ => unreachable!("checked by is_aggregate_name"),
        }
    }
}

#[derive(Clone, Copy)]
enum JoinKind {
    Inner,
    Left,
    Right,
    Full,
}

#[derive(Debug, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

fn side_of(e: &Expr, left: &Relation, right: &Relation) -> Option<Side> {
    let (qual, key) = match e {
        Expr::Identifier(id) => (None, id.value.to_lowercase()),
        Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
            let n = parts.len();
            (
                Some(parts[n - 2].value.to_lowercase()),
                parts[n - 1].value.to_lowercase(),
            )
        }
        Expr::Nested(inner) => return side_of(inner, left, right),
        _ => return None,
    };
    let in_l = left.find(qual.as_deref(), &key).is_some();
    let in_r = right.find(qual.as_deref(), &key).is_some();
    match (in_l, in_r) {
        (true, false) => Some(Side::Left),
        (false, true) => Some(Side::Right),
        _ => None,
    }
}

fn conjuncts(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            let mut v = conjuncts(left);
            v.extend(conjuncts(right));
            v
        }
        Expr::Nested(inner) => conjuncts(inner),
        other => vec![other],
    }
}

/// Hash-join keys compare numbers by value and numeric text as numbers.
fn normalize_key(v: Value) -> Value {
    match v {
        Value::Number(d) => Value::Number(d.normalize()),
        Value::Text(ref s) => match Decimal::from_str_exact(s.trim()) {
            Ok(d) => Value::Number(d.normalize()),
            Err(_) => v,
        },
        other => other,
    }
}

fn unit_scope<'a>(rel: &'a Relation, u: &'a Unit, outer: Option<&'a Scope<'a>>) -> Scope<'a> {
    Scope {
        rel,
        row: u.row.map(|i| &rel.rows[i]),
        group: u.group.as_deref(),
        outer,
    }
}

/// Maps a GROUP BY entry to the expression it groups on: ordinals and
/// output aliases refer to projection items, anything else is taken as is.
fn resolve_group_expr<'q>(
    e: &'q Expr,
    rel: &Relation,
    items: &[(Option<&'q Expr>, Option<String>)],
) -> Result<&'q Expr, EngineError> {
    match e {
        Expr::Value(v) if matches!(v.value, ast::Value::Number(..)) => {
            let idx = ordinal(&v.value, items.len())?;
            items[idx]
                .0
                .ok_or_else(|| EngineError::Unsupported("GROUP BY ordinal of a wildcard column".into()))
        }
        Expr::Identifier(id) => {
            let key = id.value.to_lowercase();
            if rel.find(None, &key).is_some() {
                return Ok(e);
            }
            match items
                .iter()
                .find(|(_, n)| n.as_ref().is_some_and(|n| n.to_lowercase() == key))
            {
                Some((Some(expr), _)) => Ok(expr),
                _ => Ok(e),
            }
        }
        _ => Ok(e),
    }
}

fn ordinal(v: &ast::Value, len: usize) -> Result<usize, EngineError> {
    if let ast::Value::Number(s, _) = v {
        if let Ok(n) = s.parse::<usize>() {
            if n >= 1 && n <= len {
                return Ok(n - 1);
            }
        }
        return fail(format!("position {s} is not in the select list"));
    }
    fail("expected a column position")
}

fn sort_keyed(rows: &mut [(Vec<Value>, Row)], order_by: &[OrderByExpr]) -> Result<(), EngineError> {
    let mut dirs = Vec::with_capacity(order_by.len());
    for ob in order_by {
        let desc = match &ob.options.sort {
            None | Some(OrderBySort::Asc) => false,
            Some(OrderBySort::Desc) => true,
            Some(OrderBySort::Using(_)) => return unsupported("ORDER BY USING"),
        };
        let nulls_first = ob.options.nulls_first.unwrap_or(desc);
        dirs.push((desc, nulls_first));
    }
    rows.sort_by(|(a, _), (b, _)| {
        for (i, &(desc, nulls_first)) in dirs.iter().enumerate() {
            let (x, y) = (&a[i], &b[i]);
            let o = match (x.is_null(), y.is_null()) {
                (true, true) => Ordering::Equal,
                (true, false) => {
                    if nulls_first {
                        Ordering::Less
                    } else {
                        Ordering::Greater
                    }
                }
                (false, true) => {
                    if nulls_first {
                        Ordering::Greater
                    } else {
                        Ordering::Less
                    }
                }
                _ => {
                    let o = x.sort_cmp(y);
                    if desc {
                        o.reverse()
                    } else {
                        o
                    }
                }
            };
            if o != Ordering::Equal {
                return o;
            }
        }
        Ordering::Equal
    });
    Ok(())
}

fn dedupe(rows: Vec<Row>) -> Vec<Row> {
    let mut seen = HashSet::new();
    rows.into_iter().filter(|r| seen.insert(Arc::clone(r))).collect()
}

fn cross(left: &Relation, right: &Relation) -> Relation {
    let mut cols = left.cols.clone();
    cols.extend(right.cols.iter().cloned());
    let mut rows = Vec::with_capacity(left.rows.len() * right.rows.len());
    for l in &left.rows {
        for r in &right.rows {
            rows.push(l.iter().chain(r.iter()).cloned().collect());
        }
    }
    Relation { cols, rows }
}

fn rename_columns(mut rel: Relation, alias: &ast::TableAlias) -> Result<Relation, EngineError> {
    if alias.columns.is_empty() {
        return Ok(rel);
    }
    if alias.columns.len() > rel.cols.len() {
        return fail(format!(
            "`{}` has {} columns but {} aliases were given",
            alias.name.value,
            rel.cols.len(),
            alias.columns.len()
        ));
    }
    for (c, a) in rel.cols.iter_mut().zip(&alias.columns) {
        c.key = a.name.value.to_lowercase();
        c.display = a.name.value.clone();
    }
    Ok(rel)
}

/// Default output column name for an unaliased projection expression.
pub(crate) fn output_name(e: &Expr) -> String {
    match e {
        Expr::Identifier(id) => id.value.clone(),
        Expr::CompoundIdentifier(parts) => parts.last().map(|p| p.value.clone()).unwrap_or_default(),
        Expr::Function(f) => object_name_key(&f.name),
        Expr::Nested(inner) | Expr::Cast { expr: inner, .. } => output_name(inner),
        other => other.to_string(),
    }
}

fn is_aggregate_name(name: &str) -> bool {
    matches!(name, "count" | "sum" | "avg" | "min" | "max")
}

fn function_args(f: &ast::Function) -> Result<(Vec<&FunctionArgExpr>, bool), EngineError> {
    match &f.args {
        FunctionArguments::None => Ok((Vec::new(), false)),
        FunctionArguments::Subquery(_) => unsupported("subquery as function argument"),
        FunctionArguments::List(list) => {
            if !list.clauses.is_empty() {
                return unsupported("clauses inside a function argument list");
            }
            let distinct = matches!(list.duplicate_treatment, Some(ast::DuplicateTreatment::Distinct));
            let mut args = Vec::with_capacity(list.args.len());
            for a in &list.args {
                match a {
                    FunctionArg::Unnamed(arg) => args.push(arg),
                    _ => return unsupported("named function arguments"),
                }
            }
            Ok((args, distinct))
        }
    }
}

/// True when the expression contains an aggregate call outside any subquery.
pub(crate) fn contains_aggregate(e: &Expr) -> bool {
    match e {
        Expr::Function(f) => {
            if is_aggregate_name(&object_name_key(&f.name)) && f.over.is_none() {
                return true;
            }
            match &f.args {
                FunctionArguments::List(list) => list.args.iter().any(|a| match a {
                    FunctionArg::Unnamed(FunctionArgExpr::Expr(e)) => contains_aggregate(e),
                    _ => false,
                }),
                _ => false,
            }
        }
        Expr::BinaryOp { left, right, .. } => contains_aggregate(left) || contains_aggregate(right),
        Expr::UnaryOp { expr, .. }
        | Expr::Nested(expr)
        | Expr::Cast { expr, .. }
        | Expr::IsNull(expr)
        | Expr::IsNotNull(expr)
        | Expr::IsTrue(expr)
        | Expr::IsFalse(expr)
        | Expr::InSubquery { expr, .. } => contains_aggregate(expr),
        Expr::Between { expr, low, high, .. } => {
            contains_aggregate(expr) || contains_aggregate(low) || contains_aggregate(high)
        }
        Expr::InList { expr, list, .. } => contains_aggregate(expr) || list.iter().any(contains_aggregate),
        Expr::Like { expr, pattern, .. } | Expr::ILike { expr, pattern, .. } => {
            contains_aggregate(expr) || contains_aggregate(pattern)
        }
        Expr::Case {
            operand,
            conditions,
            else_result,
            ..
        } => {
            operand.as_deref().is_some_and(contains_aggregate)
                || conditions
                    .iter()
                    .any(|c| contains_aggregate(&c.condition) || contains_aggregate(&c.result))
                || else_result.as_deref().is_some_and(contains_aggregate)
        }
        _ => false,
    }
}

fn literal(v: &ast::Value) -> Result<Value, EngineError> {
    match v {
        ast::Value::Number(s, _) => Decimal::from_str_exact(s)
            .or_else(|_| Decimal::from_scientific(s))
            .map(Value::Number)
            .or_else(|_| fail(format!("numeric literal `{s}` out of range"))),
        ast::Value::SingleQuotedString(s)
        | ast::Value::EscapedStringLiteral(s)
        | ast::Value::NationalStringLiteral(s)
        | ast::Value::TripleSingleQuotedString(s) => Ok(Value::Text(s.clone())),
        ast::Value::Boolean(b) => Ok(Value::Bool(*b)),
        ast::Value::Null => Ok(Value::Null),
        other => unsupported(format!("literal `{other}`")),
    }
}

fn truthy(v: &Value) -> bool {
    matches!(v, Value::Bool(true))
}

fn as_bool3(v: &Value) -> Result<Option<bool>, EngineError> {
    match v {
        Value::Null => Ok(None),
        Value::Bool(b) => Ok(Some(*b)),
        other => fail(format!("argument of AND/OR must be boolean, got `{other}`")),
    }
}

fn and3(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(false), _) | (_, Some(false)) => Some(false),
        (Some(true), Some(true)) => Some(true),
        _ => None,
    }
}

fn bool3(b: Option<bool>) -> Value {
    b.map(Value::Bool).unwrap_or(Value::Null)
}

fn in_set<'v>(v: &Value, items: impl Iterator<Item = &'v Value>, negated: bool) -> Option<bool> {
    if v.is_null() {
        return None;
    }
    let mut saw_null = false;
    for item in items {
        match v.sql_cmp(item) {
            Some(Ordering::Equal) => return Some(!negated),
            None => saw_null = true,
            _ => {}
        }
    }
    if saw_null {
        None
    } else {
        Some(negated)
    }
}

/// SQL LIKE with `%` and `_` wildcards.
pub(crate) fn like_match(text: &str, pattern: &str) -> bool {
    let t: Vec<char> = text.chars().collect();
    let p: Vec<char> = pattern.chars().collect();
    // dp[j]: pattern prefix of length j matches the text prefix consumed so far.
    let mut dp = vec![false; p.len() + 1];
    dp[0] = true;
    for j in 1..=p.len() {
        dp[j] = dp[j - 1] && p[j - 1] == '%';
    }
    for &c in &t {
        let mut next = vec![false; p.len() + 1];
        for j in 1..=p.len() {
            next[j] = match p[j - 1] {
                '%' => next[j - 1] || dp[j],
                '_' => dp[j - 1],
                pc => dp[j - 1] && pc == c,
            };
        }
        dp = next;
    }
    dp[p.len()]
}

fn cast(v: Value, type_name: &str) -> Result<Value, EngineError> {
    if v.is_null() {
        return Ok(Value::Null);
    }
    let t = type_name.to_lowercase();
    let is = |prefixes: &[&str]| prefixes.iter().any(|p| t.starts_with(p));
    if is(&["int", "bigint", "smallint", "tinyint"]) {
        let d = v
            .as_number()
            .ok_or_else(|| EngineError::Failed(format!("invalid input for integer: `{v}`")))?;
        Ok(Value::Number(
            d.round_dp_with_strategy(0, RoundingStrategy::MidpointAwayFromZero),
        ))
    } else if is(&["decimal", "numeric", "dec", "float", "real", "double", "number"]) {
        v.as_number()
            .map(Value::Number)
            .ok_or_else(|| EngineError::Failed(format!("invalid input for numeric: `{v}`")))
    } else if is(&["text", "varchar", "char", "string", "character", "nvarchar"]) {
        Ok(Value::Text(v.to_string()))
    } else if is(&["bool"]) {
        match v {
            Value::Bool(b) => Ok(Value::Bool(b)),
            other => super::value::ScalarType::Boolean
                .parse_field(&other.to_string())
                .map_err(EngineError::Failed),
        }
    } else {
        unsupported(format!("cast to {type_name}"))
    }
}

fn scalar_function(name: &str, mut args: Vec<Value>) -> Result<Value, EngineError> {
    let arity = |n: std::ops::RangeInclusive<usize>, args: &[Value]| -> Result<(), EngineError> {
        if n.contains(&args.len()) {
            Ok(())
        } else {
            fail(format!("{} called with {} arguments", name.to_uppercase(), args.len()))
        }
    };
    let num = |v: &Value| -> Result<Decimal, EngineError> {
        v.as_number()
            .ok_or_else(|| EngineError::Failed(format!("{} needs a number, got `{v}`", name.to_uppercase())))
    };
    match name {
        "coalesce" => Ok(args.into_iter().find(|v| !v.is_null()).unwrap_or(Value::Null)),
        "nullif" => {
            arity(2..=2, &args)?;
            if args[0].sql_cmp(&args[1]) == Some(Ordering::Equal) {
                Ok(Value::Null)
            } else {
                Ok(args.swap_remove(0))
            }
        }
        "greatest" | "least" => {
            let mut best: Option<Value> = None;
            for v in args.into_iter().filter(|v| !v.is_null()) {
                best = Some(match best {
                    None => v,
                    Some(b) => {
                        let o = v.sort_cmp(&b);
                        if (name == "greatest" && o == Ordering::Greater) || (name == "least" && o == Ordering::Less) {
                            v
                        } else {
                            b
                        }
                    }
                });
            }
            Ok(best.unwrap_or(Value::Null))
        }
        "concat" => Ok(Value::Text(
            args.iter().filter(|v| !v.is_null()).map(|v| v.to_string()).collect(),
        )),
        _ if args.iter().any(Value::is_null) => Ok(Value::Null),
        "round" => {
            arity(1..=2, &args)?;
            let d = num(&args[0])?;
            let dp = if args.len() == 2 { num(&args[1])? } else { Decimal::ZERO };
            let dp = u32::try_from(dp.mantissa()).ok().filter(|_| dp.scale() == 0);
            let Some(dp) = dp else {
                return fail("ROUND precision must be a non-negative integer");
            };
            let mut r = d.round_dp_with_strategy(dp, RoundingStrategy::MidpointAwayFromZero);
            r.rescale(dp);
            Ok(Value::Number(r))
        }
        "abs" => {
            arity(1..=1, &args)?;
            Ok(Value::Number(num(&args[0])?.abs()))
        }
        "ceil" | "ceiling" => {
            arity(1..=1, &args)?;
            Ok(Value::Number(num(&args[0])?.ceil()))
        }
        "floor" => {
            arity(1..=1, &args)?;
            Ok(Value::Number(num(&args[0])?.floor()))
        }
        "upper" => {
            arity(1..=1, &args)?;
            Ok(Value::Text(args[0].to_string().to_uppercase()))
        }
        "lower" => {
            arity(1..=1, &args)?;
            Ok(Value::Text(args[0].to_string().to_lowercase()))
        }
        "length" | "char_length" => {
            arity(1..=1, &args)?;
            Ok(Value::int(args[0].to_string().chars().count() as i64))
        }
        other => unsupported(format!("function {}", other.to_uppercase())),
    }
}
