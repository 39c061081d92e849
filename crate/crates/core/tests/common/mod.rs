//! Oracles and scenario drivers shared by the integration tests and the
//! acceptance harness. Each driver returns a summary on success and a list
//! of violations on failure.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use rust_decimal::Decimal;

use tablerag_core::answer::{render_table_block, AnswerConfig, AnswerKind, AnswerPrompt};
use tablerag_core::auth::AccessPolicy;
use tablerag_core::catalog::TableConfiguration;
use tablerag_core::gateway::{EmbeddingVector, HashedTokenEmbedder, LlmGateway, MockProvider, PromptRole};
use tablerag_core::pipeline::{QueryTrace, SessionIds, SessionManager, QUERY_BUDGET};
use tablerag_core::retriever::{execute_plan, validate_sql, PlanSource, RetrieverError};
use tablerag_core::router::{PrototypeQuestionQuery, PrototypeStore};
use tablerag_core::scorer::{ScoreInput, ScoreVector, Scorer};
use tablerag_core::store::synth::{generate, month_column, SyntheticCorpus, SyntheticCorpusSpec, METRICS, YEARS};
use tablerag_core::store::{ColumnDef, ReadContext, ScalarType, StagedTable, Unrestricted, Value};
use tablerag_core::suite::{Suite, SUITE_SEED};
use tablerag_core::{Clock, SystemClock, TickClock};

pub type Outcome = Result<String, Vec<String>>;

// ---------------------------------------------------------------- reference score vectors

pub struct QuadResult {
    pub label: &'static str,
    pub expected: [f64; 5],
    pub got: ScoreVector,
}

struct Quad {
    label: &'static str,
    question: &'static str,
    sql: &'static str,
    names: &'static [&'static str],
    columns: Vec<(&'static str, ScalarType)>,
    rows: Vec<Vec<Value>>,
    keywords: &'static [(&'static str, &'static str)],
    response: &'static str,
    expected: [f64; 5],
}

fn text(s: &str) -> Value {
    Value::Text(s.into())
}

fn num(s: &str) -> Value {
    Value::Number(s.parse().unwrap())
}

fn quads() -> Vec<Quad> {
    vec![
        Quad {
            label: "financial revenue growth",
            question: "What was the revenue growth for the Northeast region in last quarter compared to the previous quarter?",
            sql: "SELECT region, SUM(revenue) AS revenue FROM financials WHERE region = 'Northeast' AND (quarter = 'Last' OR quarter = 'Previous') GROUP BY quarter",
            names: &["financials", "region", "revenue", "quarter"],
            columns: vec![("region", ScalarType::Text), ("revenue", ScalarType::Decimal)],
            rows: vec![vec![text("Northeast"), num("1250000")], vec![text("Northeast"), num("1100000")]],
            keywords: &[("northeast", "region"), ("last quarter", "quarter"), ("previous quarter", "quarter")],
            response: "Revenue in the Northeast region grew to 1250000 last quarter, compared with 1100000 in the previous quarter.",
            expected: [1.0, 1.0, 1.0, 1.0, 1.0],
        },
        Quad {
            label: "healthcare admissions",
            question: "How many new patients were admitted to the oncology department this month and how does this compare to last month?",
            sql: "SELECT department, COUNT (patient-id) AS new-patients FROM hospital-admissions WHERE department = 'Oncology' AND (month = 'This' OR month = 'Last') GROUP BY month",
            names: &["hospital-admissions", "department", "patient-id", "new-patients", "month"],
            columns: vec![("department", ScalarType::Text), ("new-patients", ScalarType::Integer)],
            rows: vec![vec![text("Oncology"), num("42")], vec![text("Oncology"), num("35")]],
            keywords: &[("oncology", "department"), ("this month", "month"), ("last month", "month")],
            // 58213 is a fabricated patient ID: four of five numbers are grounded.
            response: "The oncology department admitted 42 new patients this month, compared with 35 last month. Going from 35 to 42 admissions, the first new case was patient ID 58213.",
            expected: [0.8, 1.0, 1.0, 1.0, 1.0],
        },
        Quad {
            label: "social media click-through",
            question: "What was the click-through rate (CTR) for the digital marketing campaign on social media platforms in January?",
            sql: "SELECT platform, AVG (click-through-rate) AS CTR FROM marketing-data WHERE campaign = 'Digital Marketing' AND platform = 'Social Media' AND month= 'January'",
            names: &["marketing-data", "platform", "click-through-rate", "ctr", "campaign", "month"],
            columns: vec![("platform", ScalarType::Text), ("CTR", ScalarType::Decimal)],
            rows: vec![vec![text("Social Media"), num("3.2")]],
            keywords: &[("digital marketing", "campaign"), ("social media", "platform"), ("january", "month")],
            // The staged CTR is 3.2; the response fabricates 4.7.
            response: "The digital marketing campaign reached a click-through rate of 4.7% on social media platforms in January.",
            expected: [0.0, 1.0, 1.0, 1.0, -1.0],
        },
    ]
}

/// Scores the three constructed question, SQL, data and response quads.
pub fn reference_quads() -> Result<Vec<QuadResult>, String> {
    let mut scorer = Scorer::default();
    for (term, class) in [
        ("northeast", "region"),
        ("oncology", "department"),
        ("digital marketing", "campaign"),
        ("social media", "platform"),
    ] {
        scorer.gazetteer.insert(term, class, term);
    }
    let guardrails = AnswerConfig::default();
    let mut out = Vec::new();
    for q in quads() {
        let known: HashSet<String> = q.names.iter().map(|n| n.to_string()).collect();
        let plan = validate_sql(q.sql, &known, PlanSource::Fixture).map_err(|e| format!("{}: {e}", q.label))?;
        let table = plan.target_tables.iter().next().cloned().ok_or("plan without table")?;
        let columns: Vec<ColumnDef> = q.columns.iter().map(|(n, t)| ColumnDef::new(*n, *t)).collect();
        let staged = StagedTable {
            staging_id: format!("stage_{}", q.label.replace(' ', "_")),
            row_count: q.rows.len(),
            columns: columns.clone(),
            rows: q.rows,
            source_sql: plan.statements.clone(),
            origin: "sql".into(),
        };
        let prompt = AnswerPrompt {
            original_question: q.question.into(),
            questions: vec![q.question.into()],
            table_block: render_table_block(&staged),
            guardrails: guardrails.guardrails.clone(),
            example_qa: guardrails.example.clone(),
            style_directives: guardrails.style_directives.clone(),
        };
        let (final_prompt, span) = prompt.render_with_span();
        let config = TableConfiguration {
            table_name: table,
            description: String::new(),
            relevant_fields: columns,
            sample_field_values: BTreeMap::new(),
            filter_keyword_map: q.keywords.iter().map(|(k, c)| (k.to_string(), c.to_string())).collect(),
        };
        let got = scorer.score(&ScoreInput {
            query: q.question,
            plan: Some(&plan),
            staged: Some(&staged),
            final_prompt: &final_prompt,
            table_span: Some(span),
            response: q.response,
            configs: std::slice::from_ref(&config),
        });
        out.push(QuadResult {
            label: q.label,
            expected: q.expected,
            got,
        });
    }
    Ok(out)
}

// ------------------------------------------------------------ s4 oracle

fn plain_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Brute-force regurgitation flag: 0 when some `n` consecutive response
/// words occur as a substring of the space-joined prompt words.
pub fn s4_oracle(prompt: &str, response: &str, n: usize) -> u8 {
    let haystack = format!(" {} ", plain_words(prompt).join(" "));
    let resp = plain_words(response);
    if resp.len() < n {
        return 1;
    }
    for w in resp.windows(n) {
        if haystack.contains(&format!(" {} ", w.join(" "))) {
            return 0;
        }
    }
    1
}

const VOCAB: &[&str] = &[
    "the",
    "offices",
    "emissions",
    "water",
    "rose",
    "fell",
    "in",
    "of",
    "Europe",
    "scope",
    "data",
    "table",
    "report",
    "energy",
    "per",
    "year",
    "and",
    "a",
    "city",
    "total",
    "share",
    "USA",
    "renewable",
    "electricity",
    "use",
    "2023",
];

pub fn random_text(rng: &mut ChaCha8Rng, words: usize) -> Vec<String> {
    (0..words).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect()
}

pub fn join_random(rng: &mut ChaCha8Rng, words: &[String]) -> String {
    let mut out = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push_str([" ", " ", " ", ", ", ". ", "\n", " - "].choose(rng).unwrap());
        }
        out.push_str(w);
    }
    out
}

/// A prompt and response of at most `max_words` words each; about half the
/// responses splice in a run of prompt words.
pub fn random_pair(rng: &mut ChaCha8Rng, max_words: usize) -> (String, String) {
    let (pn, rn) = (rng.random_range(0..=max_words), rng.random_range(0..=max_words));
    let p = random_text(rng, pn);
    let mut r = random_text(rng, rn);
    if !p.is_empty() && rng.random_bool(0.5) {
        let len = rng.random_range(1..=p.len().min(15));
        let start = rng.random_range(0..=p.len() - len);
        let at = rng.random_range(0..=r.len());
        let splice: Vec<String> = p[start..start + len].to_vec();
        r.splice(at..at, splice);
        r.truncate(max_words);
    }
    (join_random(rng, &p), join_random(rng, &r))
}

pub fn s4_equivalence(seed: u64, pairs: usize, max_words: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    let mut flagged = 0;
    for _ in 0..pairs {
        let (p, r) = random_pair(&mut rng, max_words);
        let got = tablerag_core::scorer::regurgitation_check(&p, None, &r, 10).0;
        let want = s4_oracle(&p, &r, 10);
        flagged += usize::from(want == 0);
        if got != want {
            bad.push(format!("s4 {got} vs oracle {want} for prompt {p:?} response {r:?}"));
        }
    }
    if bad.is_empty() {
        Ok(format!("{pairs} pairs agree ({flagged} flagged)"))
    } else {
        Err(bad)
    }
}

// --------------------------------------------------------- top-k oracle

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
    }
}

/// Every prototype scored against the query, sorted by similarity then
/// question text.
pub fn topk_oracle(protos: &[(String, EmbeddingVector)], query: &EmbeddingVector, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = protos
        .iter()
        .map(|(q, e)| (q.clone(), brute_cosine(query.values(), e.values())))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn test_gateway() -> LlmGateway {
    LlmGateway::new(
        Arc::new(MockProvider::new(Default::default())),
        Arc::new(HashedTokenEmbedder::default()),
        Arc::new(TickClock::new(std::time::Duration::from_millis(1), 0)),
    )
}

pub fn topk_equivalence(seed: u64, stores: usize, max_prototypes: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gateway = test_gateway();
    let mut bad = Vec::new();
    let mut comparisons = 0;
    for _ in 0..stores {
        let n = rng.random_range(1..=max_prototypes);
        let mut questions = BTreeSet::new();
        while questions.len() < n {
            let len = rng.random_range(1..=12);
            questions.insert(random_text(&mut rng, len).join(" "));
        }
        let records: Vec<PrototypeQuestionQuery> = questions
            .iter()
            .map(|q| PrototypeQuestionQuery {
                question_text: q.clone(),
                data_source_names: vec!["t".into()],
                example_answer: String::new(),
                embedding: None,
            })
            .collect();
        let store = PrototypeStore::build(&gateway, records).map_err(|e| vec![e.to_string()])?;
        let protos: Vec<(String, EmbeddingVector)> = store
            .prototypes()
            .iter()
            .map(|p| (p.question_text.clone(), p.embedding.clone().expect("embedded")))
            .collect();
        let len = rng.random_range(1..=12);
        let query = gateway
            .embed(&random_text(&mut rng, len).join(" "))
            .map_err(|e| vec![e.to_string()])?;
        for k in [1, 3, 5, n, n + 2] {
            comparisons += 1;
            let got: Vec<(String, f64)> = store
                .top_k(&query, k)
                .into_iter()
                .map(|m| (m.question_text, m.similarity))
                .collect();
            let want = topk_oracle(&protos, &query, k);
            if got != want {
                bad.push(format!("k={k} n={n}: {got:?} vs {want:?}"));
            }
        }
    }
    if bad.is_empty() {
        Ok(format!("{comparisons} top-k lists agree over {stores} stores"))
    } else {
        Err(bad)
    }
}

// ------------------------------------------------------ fault injection

fn trace_input<'a>(
    trace: &'a QueryTrace,
    configs: &'a [TableConfiguration],
    prompt: &'a (String, std::ops::Range<usize>),
    response: &'a str,
) -> ScoreInput<'a> {
    ScoreInput {
        query: &trace.query,
        plan: trace.plan.as_ref(),
        staged: trace.staged.as_ref(),
        final_prompt: &prompt.0,
        table_span: Some(prompt.1.clone()),
        response,
        configs,
    }
}

/// Every number spelled in the staged cells or the query, by an
/// independent regex scan.
fn visible_numbers(trace: &QueryTrace) -> BTreeSet<Decimal> {
    let re = Regex::new(r"\d+(?:\.\d+)?").unwrap();
    let mut texts = vec![trace.query.clone()];
    if let Some(s) = &trace.staged {
        texts.extend(s.cells().map(|c| c.to_string()));
    }
    texts
        .iter()
        .flat_map(|t| {
            re.find_iter(t)
                .map(|m| m.as_str().parse::<Decimal>().unwrap().normalize())
                .collect::<Vec<_>>()
        })
        .collect()
}

fn insert_sentence(rng: &mut ChaCha8Rng, response: &str, sentence: &str) -> String {
    let parts: Vec<&str> = response.split_inclusive(". ").collect();
    let at = rng.random_range(0..=parts.len());
    let mut out = String::new();
    for (i, p) in parts.iter().enumerate() {
        if i == at {
            out.push_str(sentence);
            out.push(' ');
        }
        out.push_str(p);
    }
    if at == parts.len() {
        out.push(' ');
        out.push_str(sentence);
    }
    out
}

/// Injects a fabricated number and, separately, a verbatim guardrail
/// sentence into grounded suite answers over several corpus seeds.
pub fn fault_injection(seeds: &[u64], per_answer: usize) -> Outcome {
    let scorer = Scorer::default();
    let mut bad = Vec::new();
    let mut pairs = 0;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = generate(SyntheticCorpusSpec {
            seed,
            ..SyntheticCorpusSpec::default()
        });
        let suite = Suite::build(&corpus).map_err(|e| vec![e.to_string()])?;
        let traces = suite.run(&corpus, seed).map_err(|e| vec![e.to_string()])?;
        for trace in traces.iter().filter(|t| t.answer.kind == AnswerKind::Answer) {
            let prompt = trace
                .answer
                .prompt_used
                .as_ref()
                .expect("answers keep their prompt")
                .render_with_span();
            let configs: Vec<TableConfiguration> = trace
                .plan
                .iter()
                .flat_map(|p| p.target_tables.iter())
                .filter_map(|t| corpus.catalog.get(t).cloned())
                .collect();
            let visible = visible_numbers(trace);
            let guardrails: Vec<&String> = trace
                .answer
                .prompt_used
                .as_ref()
                .unwrap()
                .guardrails
                .iter()
                .filter(|g| plain_words(g).len() >= 10)
                .collect();
            for _ in 0..per_answer {
                pairs += 1;
                let fabricated = loop {
                    let v = Decimal::new(rng.random_range(1_000..100_000_000), rng.random_range(0..3));
                    if !visible.contains(&v.normalize()) {
                        break v;
                    }
                };
                let injected = insert_sentence(
                    &mut rng,
                    &trace.answer.text,
                    &format!("The audited figure is {fabricated}."),
                );
                let s = scorer.score(&trace_input(trace, &configs, &prompt, &injected));
                if s.s1 >= 1.0 {
                    bad.push(format!(
                        "seed {seed}: s1 stayed 1 after injecting {fabricated} into {injected:?}"
                    ));
                }
                let guardrail = guardrails.choose(&mut rng).expect("a long guardrail");
                let copied = insert_sentence(&mut rng, &trace.answer.text, guardrail);
                let s = scorer.score(&trace_input(trace, &configs, &prompt, &copied));
                if s.s4 != 0 {
                    bad.push(format!("seed {seed}: s4 stayed 1 after copying {guardrail:?}"));
                }
            }
        }
    }
    if bad.is_empty() {
        Ok(format!("{pairs} pairs, every number and guardrail injection flagged"))
    } else {
        Err(bad)
    }
}

// --------------------------------------------------------- conservation

fn dec(v: &Value) -> Decimal {
    match v {
        Value::Number(d) => *d,
        other => panic!("expected a number, got {other:?}"),
    }
}

fn sql_totals(corpus: &SyntheticCorpus, sql: &str) -> BTreeMap<String, Decimal> {
    let store = tablerag_core::suite::corpus_store(corpus);
    let rs = store
        .execute_sql(
            sql,
            ReadContext {
                session: "oracle",
                guard: &Unrestricted,
            },
        )
        .unwrap_or_else(|e| panic!("{sql}: {e}"));
    rs.rows.iter().map(|r| (r[0].to_string(), dec(&r[1]))).collect()
}

/// Row, city and country sums recomputed from the raw rows and compared
/// with executed SQL, the manifest and the planted rank answers.
pub fn conservation(corpus: &SyntheticCorpus, suite: &Suite) -> Outcome {
    let mut bad = Vec::new();
    let mut checks = 0usize;
    for m in METRICS {
        let table = corpus
            .tables
            .iter()
            .find(|t| t.name() == m.table)
            .expect("metric table");
        let col = |name: &str| table.column_index(name).unwrap_or_else(|| panic!("{name}"));
        let (city_i, country_i) = (col("city"), col("country"));
        for y in YEARS {
            let total_i = col(&format!("total_{y}"));
            let months: Vec<usize> = (1..=12).map(|mo| col(&month_column(y, mo))).collect();
            let mut city: BTreeMap<String, Decimal> = BTreeMap::new();
            let mut country: BTreeMap<String, Decimal> = BTreeMap::new();
            let mut city_country: BTreeMap<String, String> = BTreeMap::new();
            for row in table.rows() {
                checks += 1;
                let monthly: Decimal = months.iter().map(|&i| dec(&row[i])).sum();
                if monthly != dec(&row[total_i]) {
                    bad.push(format!(
                        "{} office {}: months sum to {monthly}, total_{y} is {}",
                        m.table, row[0], row[total_i]
                    ));
                }
                *city.entry(row[city_i].to_string()).or_default() += dec(&row[total_i]);
                *country.entry(row[country_i].to_string()).or_default() += dec(&row[total_i]);
                city_country.insert(row[city_i].to_string(), row[country_i].to_string());
            }
            let mut rolled: BTreeMap<String, Decimal> = BTreeMap::new();
            for (c, v) in &city {
                *rolled.entry(city_country[c].clone()).or_default() += *v;
            }
            checks += 4;
            if rolled != country {
                bad.push(format!("{} {y}: city sums do not roll up to country sums", m.table));
            }
            let sql_city = sql_totals(
                corpus,
                &format!("SELECT city, SUM(total_{y}) FROM {} GROUP BY city", m.table),
            );
            let sql_country = sql_totals(
                corpus,
                &format!("SELECT country, SUM(total_{y}) FROM {} GROUP BY country", m.table),
            );
            if sql_city != city || sql_country != country {
                bad.push(format!("{} {y}: executed SQL totals differ from row sums", m.table));
            }
            let manifest = &corpus.manifest.metrics[m.table];
            if manifest.city_totals.get(&y) != Some(&city) || manifest.country_totals.get(&y) != Some(&country) {
                bad.push(format!("{} {y}: manifest totals differ from row sums", m.table));
            }
        }
    }
    let store = tablerag_core::suite::corpus_store(corpus);
    let mut planted = 0;
    for case in suite.cases.iter().filter(|c| c.planted.is_some()) {
        planted += 1;
        let rs = store
            .execute_sql(
                case.sql.as_deref().unwrap(),
                ReadContext {
                    session: "oracle",
                    guard: &Unrestricted,
                },
            )
            .map_err(|e| vec![e.to_string()])?;
        let got = rs.rows.first().map(|r| r[0].to_string());
        if got.as_deref() != case.planted.as_deref() {
            bad.push(format!("{}: got {got:?}, planted {:?}", case.query, case.planted));
        }
    }
    if bad.is_empty() {
        Ok(format!("{checks} sum checks exact, {planted} planted ranks recovered"))
    } else {
        Err(bad)
    }
}

// --------------------------------------------------------- MUP isolation

fn random_policy(rng: &mut ChaCha8Rng, users: usize, tables: &[String]) -> String {
    let mut out = String::new();
    for u in 0..users {
        let grants: Vec<String> = tables
            .iter()
            .filter(|_| rng.random_bool(0.4))
            .map(|t| format!("\"{t}\""))
            .collect();
        out.push_str(&format!(
            "[[user]]\nuser_id = \"user{u}\"\nexplicit_grants = [{}]\n",
            grants.join(", ")
        ));
        if rng.random_bool(0.3) {
            out.push_str("region = \"Europe\"\n");
        }
        out.push('\n');
    }
    out.push_str(
        "[[region_rule]]\nregion = \"Europe\"\ntables = [\"water_*\"]\nconstraint = \"country IN ('UK', 'Germany', 'France', 'Spain')\"\n",
    );
    out
}

/// Random grants per session, random suite questions plus direct reads of
/// random tables; no permitted audit entry may name an ungranted table.
pub fn mup_isolation(seed: u64, sessions: usize, queries_per_session: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = generate(SyntheticCorpusSpec::default());
    let suite = Suite::build(&corpus).map_err(|e| vec![e.to_string()])?;
    let tables: Vec<String> = corpus.catalog.names().into_iter().collect();
    let clock: Arc<dyn Clock> = Arc::new(TickClock::new(std::time::Duration::from_millis(1), 0));
    let mut pipeline = suite
        .pipeline(&corpus, Arc::new(suite.mock_provider()), clock)
        .map_err(|e| vec![e.to_string()])?;
    pipeline.policy =
        AccessPolicy::parse(&random_policy(&mut rng, sessions, &tables)).map_err(|e| vec![e.to_string()])?;
    let manager = SessionManager::new(Arc::new(pipeline), SessionIds::seeded(seed));
    let store = Arc::clone(&manager.pipeline().store);
    let known = store.known_names();
    let data_cases: Vec<_> = suite.cases.iter().filter(|c| c.sql.is_some()).collect();
    let mut granted: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut bad = Vec::new();
    let (mut answered, mut denied) = (0, 0);
    for u in 0..sessions {
        let (id, mup) = manager
            .create_session(&format!("user{u}"))
            .map_err(|e| vec![e.to_string()])?;
        granted.insert(id.clone(), mup.granted_tables.clone());
        for _ in 0..queries_per_session {
            let case = data_cases.choose(&mut rng).unwrap();
            let trace = manager.query(&id, &case.query).map_err(|e| vec![e.to_string()])?;
            match trace.answer.kind {
                AnswerKind::Answer => answered += 1,
                AnswerKind::AccessError => denied += 1,
                _ => {}
            }
            if let Some(staged) = &trace.staged {
                let plan_tables = trace.plan.as_ref().map(|p| p.target_tables.clone()).unwrap_or_default();
                if staged.origin == "sql" && !plan_tables.iter().all(|t| mup.granted_tables.contains(t)) {
                    bad.push(format!("session {id} staged rows from {plan_tables:?}"));
                }
            }
        }
        let table = tables.choose(&mut rng).unwrap();
        let plan = validate_sql(
            &format!("SELECT COUNT(*) AS n FROM {table}"),
            &known,
            PlanSource::Fixture,
        )
        .map_err(|e| vec![e.to_string()])?;
        match execute_plan(&plan, &store, &mup, &id) {
            Ok(_) if !mup.granted_tables.contains(table) => bad.push(format!("session {id} read ungranted {table}")),
            Err(RetrieverError::AccessDenied { .. }) if mup.granted_tables.contains(table) => {
                bad.push(format!("session {id} was denied granted {table}"))
            }
            _ => {}
        }
    }
    let audit = store.audit_log();
    let mut reads = 0;
    for entry in &audit {
        let Some(grants) = granted.get(&entry.session) else {
            bad.push(format!("audit entry for unknown session {}", entry.session));
            continue;
        };
        if entry.permitted {
            reads += 1;
            if !grants.contains(&entry.table) {
                bad.push(format!(
                    "session {} read ungranted table {}",
                    entry.session, entry.table
                ));
            }
        }
    }
    if bad.is_empty() {
        Ok(format!(
            "{sessions} sessions, {reads} audited reads, 0 ungranted ({answered} answered, {denied} denied)"
        ))
    } else {
        Err(bad)
    }
}

// ------------------------------------------------------- call accounting

/// Runs the suite against the wall clock and checks completion counts per
/// path and the non-provider overhead of every query.
pub fn call_accounting(corpus: &SyntheticCorpus, suite: &Suite) -> Outcome {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let pipeline = suite
        .pipeline(corpus, Arc::new(suite.mock_provider()), clock)
        .map_err(|e| vec![e.to_string()])?;
    let manager = SessionManager::new(Arc::new(pipeline), SessionIds::from_entropy());
    let mut ids = BTreeMap::new();
    let mut bad = Vec::new();
    let (mut standard, mut faq) = (0, 0);
    let mut worst = std::time::Duration::ZERO;
    for case in &suite.cases {
        if !ids.contains_key(&case.user) {
            let (id, _) = manager.create_session(&case.user).map_err(|e| vec![e.to_string()])?;
            ids.insert(case.user.clone(), id);
        }
        let t = manager
            .query(&ids[&case.user], &case.query)
            .map_err(|e| vec![e.to_string()])?;
        worst = worst.max(t.budget.overhead);
        if t.budget.overhead > std::time::Duration::from_secs(1) {
            bad.push(format!("{}: overhead {:?}", case.query, t.budget.overhead));
        }
        if t.budget.budget != QUERY_BUDGET {
            bad.push(format!("{}: budget not recorded", case.query));
        }
        if t.answer.kind != AnswerKind::Answer {
            continue;
        }
        let is_faq = t.staged.as_ref().is_some_and(|s| s.origin == "faq");
        let per_role = [PromptRole::Route, PromptRole::SqlGen, PromptRole::Answer].map(|r| t.calls_for(r));
        let want = if is_faq { [1, 0, 1] } else { [1, 1, 1] };
        let total = if is_faq { 2 } else { 3 };
        if per_role != want || t.llm_calls != total || t.calls.len() != total {
            bad.push(format!("{}: {} calls {per_role:?}", case.query, t.llm_calls));
        }
        if is_faq {
            faq += 1;
        } else {
            standard += 1;
        }
    }
    if bad.is_empty() {
        Ok(format!(
            "{standard} standard queries at 3 calls, {faq} FAQ at 2, max overhead {:.1} ms",
            worst.as_secs_f64() * 1000.0
        ))
    } else {
        Err(bad)
    }
}

// ----------------------------------------------------------- determinism

pub fn suite_transcript(seed: u64) -> Result<String, String> {
    let corpus = generate(SyntheticCorpusSpec::default());
    let suite = Suite::build(&corpus).map_err(|e| e.to_string())?;
    let traces = suite.run(&corpus, seed).map_err(|e| e.to_string())?;
    Ok(tablerag_core::suite::transcript(&traces))
}

pub fn determinism() -> Outcome {
    let a = suite_transcript(SUITE_SEED).map_err(|e| vec![e])?;
    let b = suite_transcript(SUITE_SEED).map_err(|e| vec![e])?;
    if a.lines().count() != 60 {
        return Err(vec![format!("expected 60 traces, got {}", a.lines().count())]);
    }
    if a == b {
        Ok(format!("two runs, {} identical bytes", a.len()))
    } else {
        let line = a.lines().zip(b.lines()).position(|(x, y)| x != y).unwrap_or(0);
        Err(vec![format!("transcripts differ first at trace {}", line + 1)])
    }
}
