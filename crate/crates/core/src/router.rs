//! Query routing: intention classification, prototype matching, sub-query
//! rewriting and candidate-table selection through the route prompt.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::MinimalUserProfile;
use crate::catalog::{Catalog, TableConfiguration};
use crate::gateway::{
    cosine_similarity, EmbeddingVector, GatewayError, GenerationParams, LlmGateway, PromptRole, PromptText,
};
use crate::text::{canonicalize, word_tokens, WordToken};

/// Maximum number of prototypes attached to a routed query.
pub const TOP_K: usize = 5;

/// Virtual data source marking prototypes answered without SQL.
pub const FAQ_SOURCE: &str = "faq";

pub(crate) const CANDIDATE_TABLES_LABEL: &str = "Candidate tables:";

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("empty query")]
    EmptyQuery,
    #[error("query does not match any supported question category")]
    UnclassifiableQuery,
    #[error("none of the routed tables are accessible")]
    NoAccessibleTables,
    #[error("malformed route output: {0}")]
    MalformedRouteOutput(String),
    #[error("prototype file line {line}: {message}")]
    MalformedPrototype { line: usize, message: String },
    #[error("cannot read prototypes {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntentionCategory {
    Percent,
    Change,
    Rank,
    Level,
    Rank2,
    Multi,
    Faq,
}

impl IntentionCategory {
    pub const ALL: [IntentionCategory; 7] = [
        Self::Percent,
        Self::Change,
        Self::Rank,
        Self::Level,
        Self::Rank2,
        Self::Multi,
        Self::Faq,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Percent => "Percent",
            Self::Change => "Change",
            Self::Rank => "Rank",
            Self::Level => "Level",
            Self::Rank2 => "Rank2",
            Self::Multi => "Multi",
            Self::Faq => "FAQ",
        }
    }
}

impl fmt::Display for IntentionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.code(), self.label())
    }
}

#[derive(Serialize, Deserialize)]
struct IntentionRepr {
    code: u8,
    label: String,
}

impl Serialize for IntentionCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        IntentionRepr {
            code: self.code(),
            label: self.label().to_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntentionCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = IntentionRepr::deserialize(d)?;
        Self::from_code(repr.code).ok_or_else(|| serde::de::Error::custom(format!("intention code {}", repr.code)))
    }
}

const PERCENT_WORDS: &[&str] = &[
    "percent",
    "percentage",
    "percentages",
    "share",
    "proportion",
    "fraction",
    "ratio",
];
const CHANGE_WORDS: &[&str] = &[
    "reduction",
    "reductions",
    "reduce",
    "reduced",
    "reduces",
    "reducing",
    "change",
    "changes",
    "changed",
    "increase",
    "increased",
    "increases",
    "increasing",
    "decrease",
    "decreased",
    "decreases",
    "decreasing",
    "grew",
    "grow",
    "growth",
    "decline",
    "declined",
    "trend",
    "compared",
    "compare",
    "rose",
    "fell",
    "drop",
    "dropped",
    "improved",
    "improvement",
    "yoy",
];
const RANK_WORDS: &[&str] = &[
    "highest", "lowest", "most", "least", "largest", "smallest", "biggest", "top", "bottom", "maximum", "minimum",
    "best", "worst", "rank", "ranking", "ranked",
];
const LEVEL_WORDS: &[&str] = &["level", "levels", "total", "amount", "much", "many"];
const METRIC_WORDS: &[&str] = &[
    "emission",
    "emissions",
    "water",
    "electricity",
    "energy",
    "renewable",
    "consumption",
    "scope",
    "carbon",
    "footprint",
    "usage",
    "kwh",
    "co2",
    "offices",
    "office",
];
const MONTH_WORDS: &[&str] = &[
    "january",
    "february",
    "march",
    "april",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
    "jan",
    "feb",
    "mar",
    "apr",
    "jun",
    "jul",
    "aug",
    "sep",
    "sept",
    "oct",
    "nov",
    "dec",
    "quarter",
    "month",
    "q1",
    "q2",
    "q3",
    "q4",
];
const FAQ_PATTERNS: &[&[&str]] = &[
    &["what", "is", "included", "in"],
    &["what", "are", "included", "in"],
    &["what", "is", "meant", "by"],
    &["what", "counts", "as"],
    &["definition", "of"],
    &["define"],
    &["explain"],
    &["what", "does", "*", "include"],
    &["what", "does", "*", "mean"],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Signal {
    Percent,
    Change,
    Rank,
}

fn signals(raw: &str, toks: &[WordToken]) -> BTreeSet<Signal> {
    let mut out = BTreeSet::new();
    if raw.contains('%') || toks.iter().any(|t| PERCENT_WORDS.contains(&t.text.as_str())) {
        out.insert(Signal::Percent);
    }
    if toks.iter().any(|t| CHANGE_WORDS.contains(&t.text.as_str())) {
        out.insert(Signal::Change);
    }
    if toks.iter().any(|t| RANK_WORDS.contains(&t.text.as_str())) {
        out.insert(Signal::Rank);
    }
    out
}

fn is_signal_word(t: &str) -> bool {
    PERCENT_WORDS.contains(&t) || CHANGE_WORDS.contains(&t) || RANK_WORDS.contains(&t)
}

fn matches_faq(toks: &[WordToken]) -> bool {
    let words: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
    FAQ_PATTERNS.iter().any(|pat| {
        (0..words.len()).any(|start| {
            let mut i = start;
            let mut p = 0;
            while p < pat.len() {
                if pat[p] == "*" {
                    let next = pat[p + 1];
                    match words[i..].iter().take(6).position(|w| *w == next) {
                        Some(off) if off > 0 => {
                            i += off;
                            p += 1;
                        }
                        _ => return false,
                    }
                    continue;
                }
                if words.get(i) != Some(&pat[p]) {
                    return false;
                }
                i += 1;
                p += 1;
            }
            true
        })
    })
}

fn has_time_scope(toks: &[WordToken]) -> bool {
    toks.iter().any(|t| {
        MONTH_WORDS.contains(&t.text.as_str())
            || (t.text.len() == 4 && t.text.parse::<u32>().is_ok_and(|y| (1900..2100).contains(&y)))
    })
}

fn is_level(toks: &[WordToken]) -> bool {
    toks.iter()
        .any(|t| LEVEL_WORDS.contains(&t.text.as_str()) || METRIC_WORDS.contains(&t.text.as_str()))
}

/// A clause of the query with its byte span.
#[derive(Debug, Clone)]
struct Clause<'a> {
    text: &'a str,
    signals: BTreeSet<Signal>,
}

/// Splits on `;` and on `and`, `as well as`, `while` between clauses, then
/// merges back any clause without a signal so that phrases such as
/// "between 2021 and 2022" stay intact.
fn clauses(query: &str) -> Vec<Clause<'_>> {
    let toks = word_tokens(query);
    let mut cuts = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        let joiner = match t.text.as_str() {
            "and" | "while" => Some((t.start, t.end)),
            "as" if toks.get(i + 1).is_some_and(|n| n.text == "well")
                && toks.get(i + 2).is_some_and(|n| n.text == "as") =>
            {
                Some((t.start, toks[i + 2].end))
            }
            _ => None,
        };
        if let Some(span) = joiner {
            cuts.push(span);
        }
    }
    for (i, ch) in query.char_indices() {
        if ch == ';' {
            cuts.push((i, i + 1));
        }
    }
    cuts.sort();
    let mut pieces = Vec::new();
    let mut start = 0;
    for (s, e) in cuts {
        if s < start {
            continue;
        }
        pieces.push(&query[start..s]);
        start = e;
    }
    pieces.push(&query[start..]);

    let mut out: Vec<Clause<'_>> = Vec::new();
    let mut span_start: Option<usize> = None;
    let offset = |p: &str| p.as_ptr() as usize - query.as_ptr() as usize;
    for piece in pieces {
        let sig = signals(piece, &word_tokens(piece));
        let s = *span_start.get_or_insert(offset(piece));
        let end = offset(piece) + piece.len();
        if sig.is_empty() && !out.is_empty() {
            // Merge into the previous clause.
            let prev = out.pop().unwrap();
            let prev_start = offset(prev.text);
            out.push(Clause {
                text: &query[prev_start..end],
                signals: prev.signals,
            });
        } else {
            out.push(Clause {
                text: &query[s..end],
                signals: sig,
            });
        }
        span_start = None;
    }
    out.retain(|c| !c.text.trim().is_empty());
    out
}

/// Deterministic rule classifier.
///
/// Definition phrasing gives FAQ. Otherwise the strong signals are percent,
/// change and rank words; two or more signal-bearing clauses, or two
/// distinct signals in one clause, give Multi. A lone rank signal is Rank2
/// when the query carries a time scope (month, quarter or year). Without
/// strong signals, level words or metric vocabulary give Level.
pub fn classify_intention(query: &str) -> Result<IntentionCategory, RouterError> {
    if query.trim().is_empty() {
        return Err(RouterError::EmptyQuery);
    }
    let toks = word_tokens(query);
    if matches_faq(&toks) {
        return Ok(IntentionCategory::Faq);
    }
    let all = signals(query, &toks);
    let parts = clauses(query);
    let signalled = parts.iter().filter(|c| !c.signals.is_empty()).count();
    if signalled >= 2 || all.len() >= 2 {
        return Ok(IntentionCategory::Multi);
    }
    match all.iter().next() {
        Some(Signal::Percent) => Ok(IntentionCategory::Percent),
        Some(Signal::Change) => Ok(IntentionCategory::Change),
        Some(Signal::Rank) if has_time_scope(&toks) => Ok(IntentionCategory::Rank2),
        Some(Signal::Rank) => Ok(IntentionCategory::Rank),
        None if is_level(&toks) => Ok(IntentionCategory::Level),
        None => Err(RouterError::UnclassifiableQuery),
    }
}

/// Rewrites a query into sub-queries: one per signal-bearing clause for
/// Multi, otherwise the whitespace-normalized query.
///
/// Later clauses that open with a signal word inherit the question head of
/// the first clause ("Which countries reduced X and increased Y" gives
/// "Which countries increased Y").
pub fn split_subqueries(query: &str, intention: IntentionCategory) -> Vec<String> {
    let tidy = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let question = query.trim_end().ends_with('?');
    if intention != IntentionCategory::Multi {
        return vec![tidy(query)];
    }
    let parts = clauses(query);
    if parts.len() < 2 {
        return vec![tidy(query)];
    }
    let first_toks = word_tokens(parts[0].text);
    let head: Option<String> = first_toks
        .iter()
        .position(|t| is_signal_word(&t.text))
        .filter(|&i| i > 0)
        .map(|i| tidy(&parts[0].text[..first_toks[i].start]));
    parts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut text = tidy(c.text.trim_end_matches(['?', '.', ',', ' ']));
            if i > 0 {
                let starts_with_signal = word_tokens(&text).first().is_some_and(|t| is_signal_word(&t.text));
                if let (true, Some(h)) = (starts_with_signal, &head) {
                    text = format!("{h} {text}");
                }
            }
            if question {
                text.push('?');
            }
            text
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeQuestionQuery {
    pub question_text: String,
    pub data_source_names: Vec<String>,
    pub example_answer: String,
    #[serde(skip)]
    pub embedding: Option<EmbeddingVector>,
}

impl PrototypeQuestionQuery {
    pub fn is_faq(&self) -> bool {
        self.data_source_names.iter().any(|s| s == FAQ_SOURCE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeMatch {
    pub question_text: String,
    pub data_source_names: Vec<String>,
    pub example_answer: String,
    pub similarity: f64,
}

/// Prototype questions with cached embeddings.
#[derive(Debug, Clone, Default)]
pub struct PrototypeStore {
    prototypes: Vec<PrototypeQuestionQuery>,
}

impl PrototypeStore {
    /// Parses `question<TAB>source,source<TAB>example answer` lines; `#`
    /// comments and blank lines are skipped and `\n`, `\t`, `\\` escapes
    /// are decoded in the answer.
    pub fn parse_records(text: &str) -> Result<Vec<PrototypeQuestionQuery>, RouterError> {
        let mut out = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.splitn(3, '\t').collect();
            if fields.len() != 3 {
                return Err(RouterError::MalformedPrototype {
                    line,
                    message: "expected question, sources and answer separated by tabs".into(),
                });
            }
            let sources: Vec<String> = fields[1]
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            if fields[0].trim().is_empty() || sources.is_empty() {
                return Err(RouterError::MalformedPrototype {
                    line,
                    message: "question and data sources must be non-empty".into(),
                });
            }
            out.push(PrototypeQuestionQuery {
                question_text: fields[0].trim().to_string(),
                data_source_names: sources,
                example_answer: unescape(fields[2]),
                embedding: None,
            });
        }
        Ok(out)
    }

    pub fn to_file_string(records: &[PrototypeQuestionQuery]) -> String {
        records
            .iter()
            .map(|p| {
                format!(
                    "{}\t{}\t{}\n",
                    p.question_text,
                    p.data_source_names.join(","),
                    escape(&p.example_answer)
                )
            })
            .collect()
    }

    /// Embeds every prototype question through the gateway.
    pub fn build(gateway: &LlmGateway, mut records: Vec<PrototypeQuestionQuery>) -> Result<Self, RouterError> {
        for r in &mut records {
            r.embedding = Some(gateway.embed(&r.question_text)?);
        }
        Ok(Self { prototypes: records })
    }

    pub fn load(gateway: &LlmGateway, path: &Path) -> Result<Self, RouterError> {
        let text = std::fs::read_to_string(path).map_err(|source| RouterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::build(gateway, Self::parse_records(&text)?)
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn prototypes(&self) -> &[PrototypeQuestionQuery] {
        &self.prototypes
    }

    /// The `k` most similar prototypes, similarity descending, ties by
    /// question text.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Vec<PrototypeMatch> {
        let mut scored: Vec<(f64, &PrototypeQuestionQuery)> = self
            .prototypes
            .iter()
            .map(|p| (p.embedding.as_ref().map_or(0.0, |e| cosine_similarity(query, e)), p))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.1.question_text.cmp(&b.1.question_text))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(s, p)| PrototypeMatch {
                question_text: p.question_text.clone(),
                data_source_names: p.data_source_names.clone(),
                example_answer: p.example_answer.clone(),
                similarity: s,
            })
            .collect()
    }
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\t', "\\t")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedQuery {
    pub original: String,
    pub rewritten_subqueries: Vec<String>,
    pub intention: IntentionCategory,
    pub matched_prototypes: Vec<PrototypeMatch>,
    pub candidate_tables: Vec<String>,
}

impl RoutedQuery {
    /// The best-matching prototype backed by data tables, used as the
    /// example for SQL generation.
    pub fn sql_example(&self) -> Option<&PrototypeMatch> {
        self.matched_prototypes
            .iter()
            .find(|p| !p.data_source_names.iter().any(|s| s == FAQ_SOURCE))
    }

    pub fn faq_match(&self) -> Option<&PrototypeMatch> {
        self.matched_prototypes
            .iter()
            .find(|p| p.data_source_names.iter().any(|s| s == FAQ_SOURCE))
    }
}

/// Output of the route prompt after parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteOutput {
    pub intention: Option<IntentionCategory>,
    pub tables: Vec<String>,
}

/// Parses route-prompt output: an optional `Intent: <code>` line and a
/// bracketed list of quoted table names, e.g. `["t1", 't2']`.
pub fn parse_route_output(text: &str) -> Result<RouteOutput, RouterError> {
    let malformed = |m: &str| RouterError::MalformedRouteOutput(m.to_string());
    let intention = text.lines().find_map(|l| {
        let rest = l.trim().strip_prefix("Intent:")?;
        let code: u8 = rest.trim().split(|c: char| !c.is_ascii_digit()).next()?.parse().ok()?;
        IntentionCategory::from_code(code)
    });
    let open = text.find('[').ok_or_else(|| malformed("no list literal"))?;
    let close = text[open..]
        .find(']')
        .map(|i| open + i)
        .ok_or_else(|| malformed("unterminated list literal"))?;
    let inner = text[open + 1..close].trim();
    let mut tables = Vec::new();
    if !inner.is_empty() {
        for item in inner.split(',') {
            let item = item.trim();
            let unquoted = item
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .or_else(|| item.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')))
                .ok_or_else(|| malformed(&format!("unquoted item `{item}`")))?;
            let name = unquoted.trim().to_lowercase();
            if name.is_empty() {
                return Err(malformed("empty table name"));
            }
            if !tables.contains(&name) {
                tables.push(name);
            }
        }
    }
    Ok(RouteOutput { intention, tables })
}

fn list_literal(names: &[String]) -> String {
    let quoted: Vec<String> = names.iter().map(|n| format!("\"{n}\"")).collect();
    format!("[{}]", quoted.join(", "))
}

pub struct QueryRouter {
    prototypes: PrototypeStore,
}

impl QueryRouter {
    pub fn new(prototypes: PrototypeStore) -> Self {
        Self { prototypes }
    }

    pub fn prototypes(&self) -> &PrototypeStore {
        &self.prototypes
    }

    /// Classifies, matches the top prototypes and rewrites the query.
    ///
    /// Candidate tables are the sources of the best prototype for each
    /// sub-query, in sub-query order. An empty prototype store yields one
    /// canonicalized sub-query and no candidates.
    pub fn rewrite_and_extend(&self, gateway: &LlmGateway, query: &str) -> Result<RoutedQuery, RouterError> {
        let intention = classify_intention(query)?;
        if self.prototypes.is_empty() {
            return Ok(RoutedQuery {
                original: query.to_string(),
                rewritten_subqueries: vec![canonicalize(query)],
                intention,
                matched_prototypes: Vec::new(),
                candidate_tables: Vec::new(),
            });
        }
        let embedding = gateway.embed(query)?;
        let matched = self.prototypes.top_k(&embedding, TOP_K);
        let subqueries = split_subqueries(query, intention);
        let mut candidates: Vec<String> = Vec::new();
        for sq in &subqueries {
            let best = self.prototypes.top_k(&gateway.embed(sq)?, TOP_K);
            let best = best
                .iter()
                .find(|m| (intention == IntentionCategory::Faq) == m.data_source_names.iter().any(|s| s == FAQ_SOURCE));
            for s in best.map(|b| b.data_source_names.as_slice()).unwrap_or_default() {
                if s != FAQ_SOURCE && !candidates.contains(s) {
                    candidates.push(s.clone());
                }
            }
        }
        Ok(RoutedQuery {
            original: query.to_string(),
            rewritten_subqueries: subqueries,
            intention,
            matched_prototypes: matched,
            candidate_tables: candidates,
        })
    }

    pub fn route_prompt(&self, routed: &RoutedQuery) -> String {
        let mut out = String::from(
            "Classify the user question into one of the categories 0 Percent, 1 Change, 2 Rank, 3 Level, \
             4 Rank2, 5 Multi, 6 FAQ and list the data tables needed to answer it.\n\
             Reply with a line `Intent: <code>` and a bracketed list of quoted table names.\n\n",
        );
        out.push_str(&format!("Question: {}\n", routed.original));
        for (i, sq) in routed.rewritten_subqueries.iter().enumerate() {
            out.push_str(&format!("Sub-query {}: {}\n", i + 1, sq));
        }
        out.push_str("Similar prior questions:\n");
        for m in &routed.matched_prototypes {
            out.push_str(&format!(
                "- {} -> {} ({:.4})\n",
                m.question_text,
                list_literal(&m.data_source_names),
                m.similarity
            ));
        }
        out.push_str(&format!(
            "{CANDIDATE_TABLES_LABEL} {}\n",
            list_literal(&routed.candidate_tables)
        ));
        out
    }

    /// Runs the route prompt (one retry on malformed output), keeps only
    /// tables in the profile and the catalog, and attaches their
    /// configurations in the returned order.
    ///
    /// With a live provider the prompt's intent replaces the classifier's;
    /// the mock provider never overrides it.
    pub fn route_tables(
        &self,
        gateway: &LlmGateway,
        ledger_key: &str,
        routed: &mut RoutedQuery,
        mup: &MinimalUserProfile,
        catalog: &Catalog,
    ) -> Result<Vec<TableConfiguration>, RouterError> {
        let prompt = PromptText::new(PromptRole::Route, self.route_prompt(routed))?;
        let params = GenerationParams::default();
        let mut attempt = 0;
        let output = loop {
            attempt += 1;
            let record = gateway.complete(ledger_key, &prompt, &params)?;
            match parse_route_output(&record.output) {
                Ok(out) => break out,
                Err(e) if attempt >= 2 => return Err(e),
                Err(_) => continue,
            }
        };
        if gateway.completion_provider_id() != "mock" {
            if let Some(intent) = output.intention {
                routed.intention = intent;
            }
        }
        routed.candidate_tables = output.tables;
        if routed.intention == IntentionCategory::Faq {
            return Ok(Vec::new());
        }
        let configs: Vec<TableConfiguration> = routed
            .candidate_tables
            .iter()
            .filter(|t| mup.enforce(t).is_permit())
            .filter_map(|t| catalog.get(t).cloned())
            .collect();
        if configs.is_empty() {
            return Err(RouterError::NoAccessibleTables);
        }
        Ok(configs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use IntentionCategory::*;

    #[test]
    fn reference_routing_examples() {
        let cases = [
            ("What % of our offices are at 100% renewable electricity?", Percent),
            ("What is the annual reduction of emissions globally?", Change),
            ("Which country has the highest Emissions type 1 emissions?", Rank),
            ("What is scope 1 emission levels for offices in Argentina?", Level),
            ("Which city had the highest water consumption for Dec 2022?", Rank2),
            (
                "Which countries reduced scope 3 emissions consistently in the last 2 years and increased renewable electricity?",
                Multi,
            ),
            ("What is included in business travel?", Faq),
        ];
        for (q, want) in cases {
            assert_eq!(classify_intention(q).unwrap(), want, "{q}");
        }
    }

    #[test]
    fn codes_are_a_bijection() {
        for (i, c) in IntentionCategory::ALL.iter().enumerate() {
            assert_eq!(c.code() as usize, i);
            assert_eq!(IntentionCategory::from_code(i as u8), Some(*c));
        }
        assert_eq!(IntentionCategory::from_code(7), None);
    }

    #[test]
    fn unrelated_text_is_unclassifiable() {
        assert!(matches!(
            classify_intention("Tell me a joke"),
            Err(RouterError::UnclassifiableQuery)
        ));
        assert!(matches!(classify_intention("   "), Err(RouterError::EmptyQuery)));
    }

    #[test]
    fn multi_splits_with_inherited_head() {
        let q = "Which countries reduced scope 3 emissions consistently in the last 2 years and increased renewable electricity?";
        assert_eq!(
            split_subqueries(q, Multi),
            vec![
                "Which countries reduced scope 3 emissions consistently in the last 2 years?",
                "Which countries increased renewable electricity?",
            ]
        );
    }

    #[test]
    fn conjunction_without_signal_does_not_split() {
        let q = "Which office had the highest water use between 2021 and 2022?";
        assert_eq!(clauses(q).len(), 1);
        assert_eq!(classify_intention(q).unwrap(), Rank2);
    }

    #[test]
    fn route_output_parsing() {
        let out = parse_route_output("Intent: 2\n[\"t1\", 't2']").unwrap();
        assert_eq!(out.intention, Some(Rank));
        assert_eq!(out.tables, vec!["t1", "t2"]);
        assert_eq!(parse_route_output("[]").unwrap().tables, Vec::<String>::new());
        assert!(parse_route_output("t1, t2").is_err());
        assert!(parse_route_output("[t1]").is_err());
    }

    #[test]
    fn prototype_records_round_trip() {
        let text = "Q one?\ta, b\tSELECT 1\\nFROM a\n# c\nQ two?\tfaq\tIt covers flights.\n";
        let recs = PrototypeStore::parse_records(text).unwrap();
        assert_eq!(recs[0].data_source_names, vec!["a", "b"]);
        assert_eq!(recs[0].example_answer, "SELECT 1\nFROM a");
        assert!(recs[1].is_faq());
        assert_eq!(
            PrototypeStore::parse_records(&PrototypeStore::to_file_string(&recs)).unwrap(),
            recs
        );
        assert!(matches!(
            PrototypeStore::parse_records("only one field"),
            Err(RouterError::MalformedPrototype { line: 1, .. })
        ));
    }
}
