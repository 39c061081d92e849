//! The 60-query synthetic suite and the offline demo bundle.
//!
//! Every case names a user, a question, the tables the route step should
//! return and the SQL the generation step should produce. Building the
//! suite runs that SQL under the user's profile against the corpus, so the
//! expected outcome (answer, access error, no data, irrelevant) and the
//! canned answer text are derived from the data rather than written by hand.
//! The canned answers only state values present in the staged rows.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::answer::{AnswerConfig, AnswerKind, DEFAULT_GUARDRAILS};
use crate::auth::{AccessPolicy, AuthError, MinimalUserProfile};
use crate::clock::{Clock, TickClock};
use crate::gateway::{CompletionProvider, FixtureMap, HashedTokenEmbedder, LlmGateway, MockProvider, PromptRole};
use crate::pipeline::{Pipeline, PipelineError, QueryTrace, SessionIds, SessionManager};
use crate::retriever::{execute_plan, validate_sql, PlanSource, RetrieverError};
use crate::router::{
    classify_intention, split_subqueries, PrototypeQuestionQuery, PrototypeStore, QueryRouter, RouterError, FAQ_SOURCE,
};
use crate::scorer::{Scorer, DEFAULT_GAZETTEER, DEFAULT_LEXICON};
use crate::store::synth::{continents, metric, SyntheticCorpus, SyntheticCorpusSpec, CITIES, METRICS};
use crate::store::{ResultSet, StoreError, TabularStore};
use crate::text::canonicalize;

pub const SUITE_SEED: u64 = 1;
/// Unix time reported by the suite clock.
pub const SUITE_EPOCH: u64 = 1_700_000_000;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("case `{query}`: {detail}")]
    InvalidCase { query: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteCase {
    pub user: String,
    pub query: String,
    pub tables: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
    pub expected_kind: AnswerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// The first result value a correct plan must return, when the corpus
    /// plants one (the unique maximum of a rank question).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted: Option<String>,
}

pub struct Suite {
    pub cases: Vec<SuiteCase>,
    pub prototypes: Vec<PrototypeQuestionQuery>,
    pub fixtures: FixtureMap,
    pub policy: String,
}

const REGION_TABLES: &str =
    r#"["emissions_*", "water_consumption", "electricity_consumption", "renewable_energy", "office_registry"]"#;

/// The suite's access policy. Regional managers see every metric table
/// with rows limited to the countries of their continent.
pub fn policy_toml() -> String {
    let mut out = String::new();
    for (user, field) in [
        ("analyst", r#"roles = ["sustainability_analyst"]"#),
        ("na_manager", r#"region = "North America""#),
        ("eu_manager", r#"region = "Europe""#),
        ("sa_manager", r#"region = "South America""#),
        ("asia_manager", r#"region = "Asia""#),
        ("facilities", r#"roles = ["facilities"]"#),
        ("guest", ""),
    ] {
        out.push_str(&format!("[[user]]\nuser_id = \"{user}\"\n"));
        if !field.is_empty() {
            out.push_str(field);
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str("[[role_rule]]\nrole = \"sustainability_analyst\"\ntables = [\"*\"]\n\n");
    out.push_str(
        "[[role_rule]]\nrole = \"facilities\"\ntables = [\"water_consumption\", \"electricity_consumption\", \"office_registry\"]\n\n",
    );
    for continent in continents() {
        let mut countries: Vec<&str> = Vec::new();
        for c in CITIES.iter().filter(|c| c.continent == continent) {
            if !countries.contains(&c.country) {
                countries.push(c.country);
            }
        }
        let list: Vec<String> = countries.iter().map(|c| format!("'{c}'")).collect();
        out.push_str(&format!(
            "[[region_rule]]\nregion = \"{continent}\"\ntables = {REGION_TABLES}\nconstraint = \"country IN ({})\"\n\n",
            list.join(", ")
        ));
    }
    out
}

fn faq_prototypes() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "What is included in business travel?",
            "Business travel covers flights, rail journeys, rental cars and hotel nights booked for work. It is reported under scope 3 emissions.",
        ),
        (
            "What is meant by scope 2 emissions?",
            "Scope 2 emissions are indirect emissions from the electricity, heat, steam and cooling our offices buy.",
        ),
        (
            "What does renewable electricity include?",
            "Renewable electricity includes onsite solar, wind and hydro purchase agreements and renewable certificates matched to office consumption.",
        ),
        (
            "What counts as employee commuting?",
            "Employee commuting counts trips staff make between home and the office by car, transit or bike. It is part of scope 3 emissions.",
        ),
        (
            "Explain scope 1 emissions",
            "Scope 1 emissions are direct emissions from fuel burned on site, company vehicles, refrigerant leaks and industrial processes.",
        ),
    ]
}

fn sql_prototypes() -> Vec<(&'static str, Vec<&'static str>, &'static str)> {
    vec![
        (
            "What is the scope 1 emissions level for offices in France in 2022?",
            vec!["emissions_scope1"],
            "SELECT country, SUM(total_2022) AS total_2022 FROM emissions_scope1 WHERE country = 'France' GROUP BY country",
        ),
        (
            "Which country has the highest water consumption?",
            vec!["water_consumption"],
            "SELECT country, SUM(total_2023) AS total_2023 FROM water_consumption GROUP BY country ORDER BY total_2023 DESC LIMIT 1",
        ),
        (
            "How did electricity consumption change between 2021 and 2022 in Japan?",
            vec!["electricity_consumption"],
            "SELECT country, SUM(total_2021) AS total_2021, SUM(total_2022) AS total_2022 FROM electricity_consumption WHERE country = 'Japan' GROUP BY country",
        ),
        (
            "What share of offices in Oceania run fully on renewable electricity?",
            vec!["renewable_energy"],
            "SELECT COUNT(*) AS offices, SUM(CASE WHEN renewable_share_2023 = 100 THEN 1 ELSE 0 END) AS full_renewable FROM renewable_energy WHERE continent = 'Oceania'",
        ),
        (
            "Which countries reduced scope 2 emissions and increased renewable electricity?",
            vec!["emissions_scope2", "renewable_energy"],
            "SELECT s.country FROM (SELECT country, SUM(total_2022) AS a, SUM(total_2023) AS b FROM emissions_scope2 GROUP BY country) AS s JOIN (SELECT country, SUM(total_2022) AS a, SUM(total_2023) AS b FROM renewable_energy GROUP BY country) AS r ON s.country = r.country WHERE s.b < s.a AND r.b > r.a",
        ),
        (
            "How many offices are there in each country?",
            vec!["office_registry"],
            "SELECT country, COUNT(*) AS offices FROM office_registry GROUP BY country ORDER BY country",
        ),
        (
            "What is the scope 3 emissions level by continent in 2021?",
            vec!["emissions_scope3"],
            "SELECT continent, SUM(total_2021) AS total_2021 FROM emissions_scope3 GROUP BY continent ORDER BY continent",
        ),
    ]
}

type Respond = Box<dyn Fn(&ResultSet) -> String>;

struct Draft {
    user: &'static str,
    query: String,
    tables: Vec<String>,
    sql: Option<String>,
    respond: Option<Respond>,
    planted: Option<String>,
}

fn cell(rs: &ResultSet, row: usize, col: &str) -> String {
    let i = rs
        .columns
        .iter()
        .position(|c| c.name.eq_ignore_ascii_case(col))
        .unwrap_or_else(|| panic!("suite SQL returns column {col}"));
    rs.rows[row][i].to_string()
}

fn number(rs: &ResultSet, row: usize, col: &str) -> rust_decimal::Decimal {
    cell(rs, row, col).parse().expect("numeric column")
}

fn join_names(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn draft(user: &'static str, query: String, tables: &[&str], sql: String, respond: Respond) -> Draft {
    Draft {
        user,
        query,
        tables: tables.iter().map(|t| t.to_string()).collect(),
        sql: Some(sql),
        respond: Some(respond),
        planted: None,
    }
}

fn level(user: &'static str, table: &'static str, country: &'static str, year: u32) -> Draft {
    let m = metric(table).expect("metric table");
    let (label, unit) = (m.label, m.unit);
    draft(
        user,
        format!("What is the {label} level for offices in {country} in {year}?"),
        &[table],
        format!(
            "SELECT country, SUM(total_{year}) AS total_{year} FROM {table} WHERE country = '{country}' GROUP BY country"
        ),
        Box::new(move |rs| {
            format!(
                "Offices in {country} reported {label} of {} {unit} in {year}.",
                cell(rs, 0, &format!("total_{year}"))
            )
        }),
    )
}

fn rank(table: &'static str, year: Option<u32>) -> Draft {
    let m = metric(table).expect("metric table");
    let (label, unit) = (m.label, m.unit);
    let y = year.unwrap_or(2023);
    let query = match year {
        Some(y) => format!("Which country had the highest {label} in {y}?"),
        None => format!("Which country has the highest {label}?"),
    };
    draft(
        "analyst",
        query,
        &[table],
        format!(
            "SELECT country, SUM(total_{y}) AS total_{y} FROM {table} GROUP BY country ORDER BY total_{y} DESC LIMIT 1"
        ),
        Box::new(move |rs| {
            format!(
                "{} had the highest {label}, with {} {unit} in {y}.",
                cell(rs, 0, "country"),
                cell(rs, 0, &format!("total_{y}"))
            )
        }),
    )
}

fn regional_rank(user: &'static str, table: &'static str, continent: &'static str) -> Draft {
    let m = metric(table).expect("metric table");
    let (label, unit) = (m.label, m.unit);
    draft(
        user,
        format!("Which country in {continent} has the highest {label}?"),
        &[table],
        format!(
            "SELECT country, SUM(total_2023) AS total_2023 FROM {table} WHERE continent = '{continent}' GROUP BY country ORDER BY total_2023 DESC LIMIT 1"
        ),
        Box::new(move |rs| {
            format!(
                "Within {continent}, {} has the highest {label} at {} {unit} in 2023.",
                cell(rs, 0, "country"),
                cell(rs, 0, "total_2023")
            )
        }),
    )
}

fn change(table: &'static str, country: &'static str) -> Draft {
    let m = metric(table).expect("metric table");
    let (label, unit) = (m.label, m.unit);
    draft(
        "analyst",
        format!("How did {label} change between 2022 and 2023 in {country}?"),
        &[table],
        format!(
            "SELECT country, SUM(total_2022) AS total_2022, SUM(total_2023) AS total_2023 FROM {table} WHERE country = '{country}' GROUP BY country"
        ),
        Box::new(move |rs| {
            let (a, b) = (number(rs, 0, "total_2022"), number(rs, 0, "total_2023"));
            let verb = if b < a { "fell" } else { "rose" };
            format!(
                "In {country}, {label} {verb} from {} {unit} in 2022 to {} {unit} in 2023.",
                cell(rs, 0, "total_2022"),
                cell(rs, 0, "total_2023")
            )
        }),
    )
}

fn global_reduction(query: &str, table: &'static str, subject: &'static str) -> Draft {
    let unit = metric(table).expect("metric table").unit;
    draft(
        "analyst",
        query.to_string(),
        &[table],
        format!(
            "SELECT SUM(total_2021) AS total_2021, SUM(total_2022) AS total_2022, SUM(total_2021) - SUM(total_2022) AS reduction FROM {table}"
        ),
        Box::new(move |rs| {
            let verb = if number(rs, 0, "reduction").is_sign_negative() { "rose" } else { "fell" };
            format!(
                "Across all offices, {subject} {verb} by {} {unit}, from {} {unit} in 2021 to {} {unit} in 2022.",
                number(rs, 0, "reduction").abs(),
                cell(rs, 0, "total_2021"),
                cell(rs, 0, "total_2022")
            )
        }),
    )
}

fn percent(continent: &'static str) -> Draft {
    let full = "SUM(CASE WHEN renewable_share_2023 = 100 THEN 1 ELSE 0 END)";
    draft(
        "analyst",
        format!("What percentage of offices in {continent} are at 100% renewable electricity?"),
        &["renewable_energy"],
        format!(
            "SELECT COUNT(*) AS offices, {full} AS full_renewable, ROUND(100.0 * {full} / COUNT(*), 1) AS percent_full FROM renewable_energy WHERE continent = '{continent}'"
        ),
        Box::new(move |rs| {
            format!(
                "In {continent}, {} of {} offices ({}%) ran on 100% renewable electricity in 2023.",
                cell(rs, 0, "full_renewable"),
                cell(rs, 0, "offices"),
                cell(rs, 0, "percent_full")
            )
        }),
    )
}

/// Entities grouped by `group`, where metric `a` fell and metric `b` moved
/// in direction `b_up` between 2022 and 2023.
fn multi(
    query: &str,
    group: &'static str,
    a: &'static str,
    b: &'static str,
    b_up: bool,
    summary: &'static str,
) -> Draft {
    let sub = |t: &str| {
        format!("(SELECT {group}, SUM(total_2022) AS y2022, SUM(total_2023) AS y2023 FROM {t} GROUP BY {group})")
    };
    let cmp = if b_up { ">" } else { "<" };
    draft(
        "analyst",
        query.to_string(),
        &[a, b],
        format!(
            "SELECT x.{group} FROM {} AS x JOIN {} AS y ON x.{group} = y.{group} WHERE x.y2023 < x.y2022 AND y.y2023 {cmp} y.y2022 ORDER BY x.{group}",
            sub(a),
            sub(b)
        ),
        Box::new(move |rs| {
            let names: Vec<String> = (0..rs.rows.len()).map(|r| cell(rs, r, group)).collect();
            format!("{summary}: {}.", join_names(&names))
        }),
    )
}

fn no_data(table: &'static str, city: &'static str) -> Draft {
    let label = metric(table).expect("metric table").label;
    draft(
        "analyst",
        format!("What is the {label} level for offices in {city}?"),
        &[table],
        format!("SELECT city, SUM(total_2023) AS total_2023 FROM {table} WHERE city = '{city}' GROUP BY city"),
        Box::new(|_| String::new()),
    )
}

fn drafts(corpus: &SyntheticCorpus) -> Vec<Draft> {
    let mut d = Vec::new();
    for (table, a, b) in [
        ("emissions_scope1", ("Argentina", 2023), ("Germany", 2022)),
        ("emissions_scope2", ("USA", 2023), ("India", 2021)),
        ("emissions_scope3", ("Brazil", 2023), ("Japan", 2022)),
        ("water_consumption", ("Australia", 2023), ("Kenya", 2022)),
        ("electricity_consumption", ("France", 2023), ("Canada", 2021)),
        ("renewable_energy", ("UK", 2023), ("Spain", 2022)),
    ] {
        d.push(level("analyst", table, a.0, a.1));
        d.push(level("analyst", table, b.0, b.1));
    }
    for m in METRICS {
        let mut r = rank(m.table, None);
        r.planted = Some(corpus.manifest.metrics[m.table].planted_max_country.clone());
        d.push(r);
    }
    let mut city = draft(
        "analyst",
        "Which city had the highest water consumption for Dec 2022?".into(),
        &["water_consumption"],
        "SELECT city, SUM(m2022_12) AS m2022_12 FROM water_consumption GROUP BY city ORDER BY m2022_12 DESC LIMIT 1"
            .into(),
        Box::new(|rs| {
            format!(
                "{} had the highest water consumption in December 2022, at {} m3.",
                cell(rs, 0, "city"),
                cell(rs, 0, "m2022_12")
            )
        }),
    );
    city.planted = corpus.manifest.metrics["water_consumption"]
        .planted_max_city_dec_2022
        .clone();
    d.push(city);
    for (table, year) in [
        ("emissions_scope1", 2022),
        ("emissions_scope2", 2021),
        ("emissions_scope3", 2022),
        ("electricity_consumption", 2021),
        ("renewable_energy", 2022),
    ] {
        d.push(rank(table, Some(year)));
    }
    for (table, country) in [
        ("emissions_scope1", "Japan"),
        ("emissions_scope2", "Germany"),
        ("emissions_scope3", "USA"),
        ("water_consumption", "Brazil"),
        ("electricity_consumption", "India"),
        ("renewable_energy", "France"),
    ] {
        d.push(change(table, country));
    }
    d.push(global_reduction(
        "What was the annual reduction of emissions globally in 2022?",
        "emissions_scope1",
        "emissions",
    ));
    d.push(global_reduction(
        "What was the annual reduction of scope 2 emissions globally in 2022?",
        "emissions_scope2",
        "scope 2 emissions",
    ));
    d.push(global_reduction(
        "What was the annual reduction of scope 3 emissions globally in 2022?",
        "emissions_scope3",
        "scope 3 emissions",
    ));
    for continent in continents() {
        d.push(percent(continent));
    }
    d.push(multi(
        "Which countries reduced scope 3 emissions in 2023 and increased renewable electricity?",
        "country",
        "emissions_scope3",
        "renewable_energy",
        true,
        "These countries reduced scope 3 emissions while renewable electricity increased in 2023",
    ));
    d.push(multi(
        "Which continents reduced scope 2 emissions in 2023 and increased renewable electricity?",
        "continent",
        "emissions_scope2",
        "renewable_energy",
        true,
        "These continents reduced scope 2 emissions while renewable electricity increased in 2023",
    ));
    d.push(multi(
        "Which countries reduced scope 1 emissions and reduced electricity consumption in 2023?",
        "country",
        "emissions_scope1",
        "electricity_consumption",
        false,
        "Both scope 1 emissions and electricity consumption were reduced in 2023 in",
    ));
    for (q, _) in faq_prototypes() {
        d.push(Draft {
            user: "analyst",
            query: q.to_string(),
            tables: vec![],
            sql: None,
            respond: None,
            planted: None,
        });
    }
    d.push(level("na_manager", "water_consumption", "Canada", 2023));
    d.push(level("na_manager", "emissions_scope2", "Mexico", 2022));
    d.push(regional_rank("na_manager", "electricity_consumption", "North America"));
    d.push(level("eu_manager", "emissions_scope3", "France", 2021));
    d.push(regional_rank("eu_manager", "water_consumption", "Europe"));
    d.push(level("sa_manager", "renewable_energy", "Chile", 2023));
    d.push(level("na_manager", "emissions_scope1", "Argentina", 2022));
    d.push(level("eu_manager", "electricity_consumption", "USA", 2023));
    d.push(level("guest", "water_consumption", "Kenya", 2023));
    let mut denied = rank("emissions_scope3", Some(2021));
    denied.user = "facilities";
    d.push(denied);
    d.push(no_data("emissions_scope2", "Reykjavik"));
    d.push(no_data("water_consumption", "Atlantis"));
    d.push(Draft {
        user: "analyst",
        query: "Tell me a joke about penguins.".into(),
        tables: vec![],
        sql: None,
        respond: None,
        planted: None,
    });
    d
}

/// Loads the corpus tables into a fresh store.
pub fn corpus_store(corpus: &SyntheticCorpus) -> TabularStore {
    let store = TabularStore::new();
    for t in &corpus.tables {
        store.insert_table(t.clone());
    }
    store
}

fn prototype_records() -> Vec<PrototypeQuestionQuery> {
    let mut out: Vec<PrototypeQuestionQuery> = sql_prototypes()
        .into_iter()
        .map(|(q, sources, sql)| PrototypeQuestionQuery {
            question_text: q.into(),
            data_source_names: sources.into_iter().map(String::from).collect(),
            example_answer: sql.into(),
            embedding: None,
        })
        .collect();
    out.extend(faq_prototypes().into_iter().map(|(q, a)| PrototypeQuestionQuery {
        question_text: q.into(),
        data_source_names: vec![FAQ_SOURCE.into()],
        example_answer: a.into(),
        embedding: None,
    }));
    out
}

fn list_literal(names: &[String]) -> String {
    let quoted: Vec<String> = names.iter().map(|n| format!("\"{n}\"")).collect();
    format!("[{}]", quoted.join(", "))
}

impl Suite {
    /// Builds the cases, fixtures and policy for a corpus.
    pub fn build(corpus: &SyntheticCorpus) -> Result<Suite, SuiteError> {
        let policy_text = policy_toml();
        let policy = AccessPolicy::parse(&policy_text)?;
        let store = corpus_store(corpus);
        let names = corpus.catalog.names();
        let known = store.known_names();
        let prototypes = prototype_records();
        let faq_answers: BTreeMap<&str, &str> = faq_prototypes().into_iter().collect();
        let open = policy.login("analyst", &names, SUITE_EPOCH)?;
        let mut fixtures = FixtureMap::default();
        let mut cases = Vec::new();
        for d in drafts(corpus) {
            let invalid = |detail: String| SuiteError::InvalidCase {
                query: d.query.clone(),
                detail,
            };
            let mup: MinimalUserProfile = policy.login(d.user, &names, SUITE_EPOCH)?;
            let intention = match classify_intention(&d.query) {
                Ok(i) => Some(i),
                Err(RouterError::UnclassifiableQuery) => None,
                Err(e) => return Err(e.into()),
            };
            let mut case = SuiteCase {
                user: d.user.into(),
                query: d.query.clone(),
                tables: d.tables.clone(),
                sql: d.sql.clone(),
                expected_kind: AnswerKind::Irrelevant,
                response: None,
                planted: d.planted.clone(),
            };
            let Some(intention) = intention else {
                cases.push(case);
                continue;
            };
            fixtures.insert_needle(
                PromptRole::Route,
                &format!("Question: {}", d.query),
                format!("Intent: {}\n{}", intention.code(), list_literal(&d.tables)),
            );
            let answer_needle = format!("User question (as asked): {}", d.query);
            if let Some(answer) = faq_answers.get(d.query.as_str()) {
                case.expected_kind = AnswerKind::Answer;
                case.response = Some(answer.to_string());
                fixtures.insert_needle(PromptRole::Answer, &answer_needle, *answer);
                cases.push(case);
                continue;
            }
            let sql = d.sql.as_ref().ok_or_else(|| invalid("no SQL".into()))?;
            let subs = split_subqueries(&d.query, intention);
            let needle: Vec<String> = subs
                .iter()
                .enumerate()
                .map(|(i, s)| format!("Sub-query {}: {}", i + 1, s.trim()))
                .collect();
            fixtures.insert_needle(PromptRole::SqlGen, &canonicalize(&needle.join("\n")), sql.clone());
            let plan = validate_sql(sql, &known, PlanSource::Fixture).map_err(|e| invalid(e.to_string()))?;
            let respond = d.respond.as_ref().ok_or_else(|| invalid("no responder".into()))?;
            // Answer over the unrestricted view, so other users can replay the question.
            match execute_plan(&plan, &store, &open, "suite-build") {
                Ok((rs, _)) if !rs.rows.is_empty() => {
                    fixtures.insert_needle(PromptRole::Answer, &answer_needle, respond(&rs));
                }
                Ok(_) => {}
                Err(e) => return Err(invalid(e.to_string())),
            }
            if !d.tables.iter().any(|t| mup.enforce(t).is_permit()) {
                case.expected_kind = AnswerKind::AccessError;
                cases.push(case);
                continue;
            }
            match execute_plan(&plan, &store, &mup, "suite-build") {
                Err(RetrieverError::AccessDenied { .. }) => case.expected_kind = AnswerKind::AccessError,
                Err(e) => return Err(invalid(e.to_string())),
                Ok((rs, _)) if rs.rows.is_empty() => case.expected_kind = AnswerKind::NoData,
                Ok((rs, _)) => {
                    let text = respond(&rs);
                    fixtures.insert_needle(PromptRole::Answer, &answer_needle, text.clone());
                    case.expected_kind = AnswerKind::Answer;
                    case.response = Some(text);
                }
            }
            cases.push(case);
        }
        Ok(Suite {
            cases,
            prototypes,
            fixtures,
            policy: policy_text,
        })
    }

    /// Users in order of first appearance.
    pub fn users(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cases {
            if !out.contains(&c.user) {
                out.push(c.user.clone());
            }
        }
        out
    }

    /// A pipeline over the corpus with the suite's policy and prototypes.
    pub fn pipeline(
        &self,
        corpus: &SyntheticCorpus,
        completion: Arc<dyn CompletionProvider>,
        clock: Arc<dyn Clock>,
    ) -> Result<Pipeline, SuiteError> {
        let gateway = Arc::new(LlmGateway::new(
            completion,
            Arc::new(HashedTokenEmbedder::default()),
            Arc::clone(&clock),
        ));
        let prototypes = PrototypeStore::build(&gateway, self.prototypes.clone())?;
        Ok(Pipeline {
            gateway,
            store: Arc::new(corpus_store(corpus)),
            catalog: corpus.catalog.clone(),
            policy: AccessPolicy::parse(&self.policy)?,
            router: QueryRouter::new(prototypes),
            answer_config: AnswerConfig::default(),
            scorer: Scorer::default(),
            clock,
        })
    }

    /// The suite's mock provider.
    pub fn mock_provider(&self) -> MockProvider {
        MockProvider::new(self.fixtures.clone())
    }

    /// Runs every case through a fresh replayable pipeline: mock provider,
    /// tick clock and seeded session ids. One session per user.
    pub fn run(&self, corpus: &SyntheticCorpus, seed: u64) -> Result<Vec<QueryTrace>, SuiteError> {
        let clock: Arc<dyn Clock> = Arc::new(TickClock::new(Duration::from_millis(1), SUITE_EPOCH));
        let pipeline = self.pipeline(corpus, Arc::new(self.mock_provider()), clock)?;
        let sessions = SessionManager::new(Arc::new(pipeline), SessionIds::seeded(seed));
        let mut ids = BTreeMap::new();
        for user in self.users() {
            let (id, _) = sessions.create_session(&user)?;
            ids.insert(user, id);
        }
        self.cases
            .iter()
            .map(|c| Ok(sessions.query(&ids[&c.user], &c.query)?))
            .collect()
    }
}

/// One JSON document per trace, newline separated.
pub fn transcript(traces: &[QueryTrace]) -> String {
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(t).expect("trace serializes"));
        out.push('\n');
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), SuiteError> {
    std::fs::write(path, text).map_err(|source| SuiteError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub const DEMO_CONFIG: &str = r#"provider = "mock"

[mock]
fixtures_path = "fixtures.tsv"

[store]
data_dir = "data"

[auth]
policy_path = "policy.toml"

[router]
prototypes_path = "prototypes.tsv"

[retriever]
catalog_path = "data/catalog.json"

[answer]
guardrails_path = "guardrails.toml"

[scorer]
gazetteer_path = "gazetteer.tsv"
lexicon_path = "lexicon.tsv"

[server]
bind = "127.0.0.1:8080"
"#;

/// Writes a self-contained offline deployment: the corpus under `data/`,
/// policy, prototypes, fixtures, guardrails, scorer assets, `config.toml`
/// and `queries.tsv` listing the suite's user and question pairs.
pub fn write_demo(dir: &Path, spec: SyntheticCorpusSpec) -> Result<Suite, SuiteError> {
    let corpus = crate::store::synth::generate(spec);
    let data = dir.join("data");
    std::fs::create_dir_all(&data).map_err(|source| SuiteError::Io {
        path: data.display().to_string(),
        source,
    })?;
    corpus.write_to_dir(&data)?;
    let suite = Suite::build(&corpus)?;
    write(&dir.join("policy.toml"), &suite.policy)?;
    write(
        &dir.join("prototypes.tsv"),
        &PrototypeStore::to_file_string(&suite.prototypes),
    )?;
    write(&dir.join("fixtures.tsv"), &suite.fixtures.to_file_string())?;
    write(&dir.join("guardrails.toml"), DEFAULT_GUARDRAILS)?;
    write(&dir.join("gazetteer.tsv"), DEFAULT_GAZETTEER)?;
    write(&dir.join("lexicon.tsv"), DEFAULT_LEXICON)?;
    write(&dir.join("config.toml"), DEMO_CONFIG)?;
    let queries: String = suite
        .cases
        .iter()
        .map(|c| format!("{}\t{}\n", c.user, c.query))
        .collect();
    write(&dir.join("queries.tsv"), &queries)?;
    Ok(suite)
}
