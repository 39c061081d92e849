//! Post-hoc hallucination flags for a generated answer.
//!
//! Five checks are run over one pipeline run:
//!
//! * `s1` the fraction of response numbers grounded in the staged data or the query,
//! * `s2` whether the query's entities are reflected in the response,
//! * `s3` whether the filter words of the query reached the SQL filters,
//! * `s4` whether the response copies ten or more consecutive words of the prompt,
//! * `s5` whether directional language in the query is answered consistently
//!   (`-1` when the query has none).

mod entities;
mod numbers;

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use entities::{
    extract_entities, Direction, DirectionLexicon, DirectionalTerm, EntitySpan, ExtractedEntities, Gazetteer,
    DEFAULT_GAZETTEER, DEFAULT_LEXICON,
};
pub use numbers::{extract_numbers, ExtractedNumbers, NumberMention};

use crate::catalog::TableConfiguration;
use crate::retriever::SqlPlan;
use crate::store::sql::filter_columns;
use crate::store::{StagedTable, Value};
use crate::text::{find_token_sequence, word_tokens, words};

pub const REGURGITATION_WINDOW: usize = 10;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("gazetteer has no terms")]
    EmptyGazetteer,
    #[error("malformed {asset} line {line}")]
    MalformedAsset { asset: String, line: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One piece of evidence behind a flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub claim: String,
    pub item: String,
    pub matched: bool,
}

impl EvidenceItem {
    fn new(claim: impl Into<String>, item: impl Into<String>, matched: bool) -> Self {
        Self {
            claim: claim.into(),
            item: item.into(),
            matched,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub s1: Vec<EvidenceItem>,
    pub s2: Vec<EvidenceItem>,
    pub s3: Vec<EvidenceItem>,
    pub s4: Vec<EvidenceItem>,
    pub s5: Vec<EvidenceItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub s1: f64,
    pub s2: u8,
    pub s3: u8,
    pub s4: u8,
    pub s5: i8,
    pub evidence: Evidence,
}

impl ScoreVector {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.s1,
            f64::from(self.s2),
            f64::from(self.s3),
            f64::from(self.s4),
            f64::from(self.s5),
        ]
    }
}

impl fmt::Display for ScoreVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{},{}]", self.s1, self.s2, self.s3, self.s4, self.s5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    /// Relative tolerance for number grounding; `None` means exact.
    pub relative_tolerance: Option<Decimal>,
    /// Require the response entity set to equal the query entity set.
    pub strict_entities: bool,
    pub window: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            relative_tolerance: None,
            strict_entities: false,
            window: REGURGITATION_WINDOW,
        }
    }
}

/// Everything one pipeline run hands to the scorer.
#[derive(Debug, Clone)]
pub struct ScoreInput<'a> {
    pub query: &'a str,
    pub plan: Option<&'a SqlPlan>,
    pub staged: Option<&'a StagedTable>,
    pub final_prompt: &'a str,
    /// Byte range of the rendered table block inside `final_prompt`.
    pub table_span: Option<Range<usize>>,
    pub response: &'a str,
    pub configs: &'a [TableConfiguration],
}

/// Numbers available to ground a response: numeric cells, numbers inside
/// text cells and numbers in the query, all as absolute normalized values.
pub fn grounding_set(staged: Option<&StagedTable>, query: &str) -> BTreeSet<Decimal> {
    let mut set = BTreeSet::new();
    if let Some(staged) = staged {
        for cell in staged.cells() {
            match cell {
                Value::Number(d) => {
                    set.insert(d.abs().normalize());
                }
                Value::Text(t) => set.extend(extract_numbers(t).values.iter().map(|m| m.value.abs())),
                _ => {}
            }
        }
    }
    set.extend(extract_numbers(query).values.iter().map(|m| m.value.abs()));
    set
}

fn grounded(value: Decimal, set: &BTreeSet<Decimal>, tolerance: Option<Decimal>) -> bool {
    let v = value.abs();
    if set.contains(&v) {
        return true;
    }
    tolerance.is_some_and(|t| set.iter().any(|g| (v - *g).abs() <= t * *g))
}

/// Grounded fraction of the response numbers; 1 when there are none.
pub fn number_check(
    response: &str,
    grounding: &BTreeSet<Decimal>,
    tolerance: Option<Decimal>,
) -> (f64, Vec<EvidenceItem>) {
    let found = extract_numbers(response);
    if found.is_empty() {
        return (1.0, vec![]);
    }
    let mut hits = 0usize;
    let evidence: Vec<EvidenceItem> = found
        .values
        .iter()
        .map(|m| {
            let ok = grounded(m.value, grounding, tolerance);
            hits += usize::from(ok);
            let claim = if ok {
                "number found in staged data or query"
            } else {
                "number not found in staged data or query"
            };
            EvidenceItem::new(claim, m.raw.clone(), ok)
        })
        .collect();
    (hits as f64 / found.len() as f64, evidence)
}

/// Containment of query entities in response entities, or equality when
/// `strict` is set.
pub fn entity_check(query: &ExtractedEntities, response: &ExtractedEntities, strict: bool) -> (u8, Vec<EvidenceItem>) {
    let mut evidence: Vec<EvidenceItem> = query
        .entities
        .iter()
        .map(|e| {
            let ok = response.entities.contains(e);
            let claim = if ok {
                "query entity present in response"
            } else {
                "query entity missing from response"
            };
            EvidenceItem::new(claim, e.clone(), ok)
        })
        .collect();
    if strict {
        evidence.extend(
            response
                .entities
                .difference(&query.entities)
                .map(|e| EvidenceItem::new("response entity absent from query", e.clone(), false)),
        );
    }
    (u8::from(evidence.iter().all(|e| e.matched)), evidence)
}

/// Every query keyword mapped by an in-scope table's keyword map must have
/// its column in a WHERE, GROUP BY or HAVING clause of the plan.
pub fn query_check(query: &str, plan: Option<&SqlPlan>, configs: &[TableConfiguration]) -> (u8, Vec<EvidenceItem>) {
    let Some(plan) = plan else {
        return (1, vec![]);
    };
    let in_scope: BTreeSet<String> = plan.target_tables.iter().map(|t| t.to_lowercase()).collect();
    let toks = word_tokens(query);
    let mut required: BTreeSet<(String, String)> = BTreeSet::new();
    for cfg in configs
        .iter()
        .filter(|c| in_scope.contains(&c.table_name.to_lowercase()))
    {
        for (kw, col) in &cfg.filter_keyword_map {
            if !find_token_sequence(&toks, &words(kw)).is_empty() {
                required.insert((kw.to_lowercase(), col.to_lowercase()));
            }
        }
    }
    let filtered = filter_columns(plan.parsed());
    let evidence: Vec<EvidenceItem> = required
        .into_iter()
        .map(|(kw, col)| {
            let ok = filtered.contains(&col);
            let claim = if ok {
                format!("column `{col}` filtered in SQL")
            } else {
                format!("column `{col}` not filtered in SQL")
            };
            EvidenceItem::new(claim, kw, ok)
        })
        .collect();
    (u8::from(evidence.iter().all(|e| e.matched)), evidence)
}

/// Word windows of the prompt, skipping windows wholly inside `excluded`.
fn prompt_windows(prompt: &str, excluded: Option<&Range<usize>>, n: usize) -> BTreeSet<Vec<String>> {
    let toks = word_tokens(prompt);
    if n == 0 || toks.len() < n {
        return BTreeSet::new();
    }
    toks.windows(n)
        .filter(|w| !excluded.is_some_and(|r| w[0].start >= r.start && w[n - 1].end <= r.end))
        .map(|w| w.iter().map(|t| t.text.clone()).collect())
        .collect()
}

/// 0 when any `n`-word window of the response appears in the prompt
/// outside the table block.
pub fn regurgitation_check(
    final_prompt: &str,
    table_span: Option<&Range<usize>>,
    response: &str,
    n: usize,
) -> (u8, Vec<EvidenceItem>) {
    let windows = prompt_windows(final_prompt, table_span, n);
    let resp = words(response);
    if n == 0 || resp.len() < n {
        return (1, vec![]);
    }
    let mut seen = BTreeSet::new();
    let evidence: Vec<EvidenceItem> = resp
        .windows(n)
        .filter(|w| windows.contains(*w))
        .filter_map(|w| {
            let text = w.join(" ");
            seen.insert(text.clone())
                .then(|| EvidenceItem::new("response copies prompt text", text, false))
        })
        .collect();
    (u8::from(evidence.is_empty()), evidence)
}

/// Directional consistency: -1 when the query has no directional term,
/// 1 when every queried direction is answered without contradiction,
/// 0 otherwise.
pub fn modifier_check(query: &str, response: &str, lexicon: &DirectionLexicon) -> (i8, Vec<EvidenceItem>) {
    let asked = lexicon.find(query);
    if asked.is_empty() {
        return (-1, vec![]);
    }
    let said = lexicon.find(response);
    let mut wanted: BTreeSet<Direction> = asked.iter().map(|t| t.direction).collect();
    if wanted.contains(&Direction::Increase) && wanted.contains(&Direction::Decrease) {
        // "increase or decrease" asks about change in either direction.
        wanted = BTreeSet::from([Direction::Change]);
    }
    let affirmed = |d: Direction| {
        said.iter()
            .find(|t| !t.negated && (d == Direction::Change || t.direction == d))
    };
    let mut evidence = Vec::new();
    for d in wanted {
        let label = format!("{d:?}").to_lowercase();
        match affirmed(d) {
            Some(t) => evidence.push(EvidenceItem::new(
                format!("{label} asked and stated"),
                t.term.clone(),
                true,
            )),
            None => evidence.push(EvidenceItem::new(
                format!("{label} asked but not stated"),
                label.clone(),
                false,
            )),
        }
        if d != Direction::Change {
            for t in said.iter().filter(|t| t.negated && t.direction == d) {
                evidence.push(EvidenceItem::new(
                    format!("{label} asked but negated"),
                    t.term.clone(),
                    false,
                ));
            }
        }
    }
    (i8::from(evidence.iter().all(|e| e.matched)), evidence)
}

/// The scorer with its extraction assets.
#[derive(Debug, Clone, Default)]
pub struct Scorer {
    pub gazetteer: Gazetteer,
    pub lexicon: DirectionLexicon,
    pub config: ScorerConfig,
}

impl Scorer {
    pub fn new(gazetteer: Gazetteer, lexicon: DirectionLexicon, config: ScorerConfig) -> Self {
        Self {
            gazetteer,
            lexicon,
            config,
        }
    }

    /// Loads the assets from files, falling back to the bundled ones for
    /// paths that are not given.
    pub fn load(gazetteer: Option<&Path>, lexicon: Option<&Path>, config: ScorerConfig) -> Result<Self, ScorerError> {
        let gazetteer = gazetteer.map(Gazetteer::load).transpose()?.unwrap_or_default();
        let lexicon = lexicon.map(DirectionLexicon::load).transpose()?.unwrap_or_default();
        Ok(Self::new(gazetteer, lexicon, config))
    }

    pub fn entities(&self, text: &str) -> ExtractedEntities {
        extract_entities(text, &self.gazetteer)
    }

    pub fn score(&self, input: &ScoreInput<'_>) -> ScoreVector {
        let grounding = grounding_set(input.staged, input.query);
        let (s1, e1) = number_check(input.response, &grounding, self.config.relative_tolerance);
        let (s2, e2) = entity_check(
            &self.entities(input.query),
            &self.entities(input.response),
            self.config.strict_entities,
        );
        let (s3, e3) = query_check(input.query, input.plan, input.configs);
        let (s4, e4) = regurgitation_check(
            input.final_prompt,
            input.table_span.as_ref(),
            input.response,
            self.config.window,
        );
        let (s5, e5) = modifier_check(input.query, input.response, &self.lexicon);
        ScoreVector {
            s1,
            s2,
            s3,
            s4,
            s5,
            evidence: Evidence {
                s1: e1,
                s2: e2,
                s3: e3,
                s4: e4,
                s5: e5,
            },
        }
    }
}
