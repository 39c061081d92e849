//! Session management and the end-to-end query flow: route, generate SQL,
//! run it, compose the answer and score it.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::answer::{
    classify_error_path, compose_answer, AnswerConfig, AnswerError, AnswerKind, AnswerRecord, ErrorSignal,
};
use crate::auth::{AccessPolicy, AuthError, MinimalUserProfile};
use crate::catalog::{Catalog, CatalogError, TableConfiguration};
use crate::clock::Clock;
use crate::gateway::{duration_micros, CompletionRecord, GatewayError, LlmGateway, PromptRole};
use crate::retriever::{self, build_sql_prompt, generate_sql, RetrieverError, SqlPlan};
use crate::router::{IntentionCategory, QueryRouter, RoutedQuery, RouterError};
use crate::scorer::{ScoreInput, ScoreVector, Scorer};
use crate::store::{ColumnDef, ResultSet, ScalarType, StagedTable, TabularStore, Value};

/// End-to-end budget per query. Provider latency dominates it, so it is
/// recorded and reported rather than enforced.
pub const QUERY_BUDGET: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("no trace {query_no} in session `{session}`")]
    UnknownTrace { session: String, query_no: usize },
    #[error("empty query")]
    EmptyQuery,
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Router(RouterError),
    #[error(transparent)]
    Retriever(RetrieverError),
    #[error(transparent)]
    Answer(AnswerError),
}

impl From<RouterError> for PipelineError {
    fn from(e: RouterError) -> Self {
        match e {
            RouterError::Gateway(g) => Self::Gateway(g),
            RouterError::EmptyQuery => Self::EmptyQuery,
            other => Self::Router(other),
        }
    }
}

impl From<RetrieverError> for PipelineError {
    fn from(e: RetrieverError) -> Self {
        match e {
            RetrieverError::Gateway(g) => Self::Gateway(g),
            other => Self::Retriever(other),
        }
    }
}

impl From<AnswerError> for PipelineError {
    fn from(e: AnswerError) -> Self {
        match e {
            AnswerError::Gateway(g) => Self::Gateway(g),
            other => Self::Answer(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Route,
    SqlGen,
    RunQuery,
    Answer,
    Score,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Route,
        Stage::SqlGen,
        Stage::RunQuery,
        Stage::Answer,
        Stage::Score,
    ];
}

/// When a stage started (relative to the query start) and how long it ran.
/// Skipped stages have zero duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageTiming {
    #[serde(with = "duration_micros")]
    pub started_at: Duration,
    #[serde(with = "duration_micros")]
    pub duration: Duration,
}

impl StageTiming {
    pub fn finished_at(&self) -> Duration {
        self.started_at + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComposedPrompt {
    pub role: PromptRole,
    pub body: String,
}

/// Per-query budget bookkeeping, all in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BudgetReport {
    #[serde(with = "duration_micros")]
    pub total: Duration,
    #[serde(with = "duration_micros")]
    pub provider_latency: Duration,
    #[serde(with = "duration_micros")]
    pub overhead: Duration,
    #[serde(with = "duration_micros")]
    pub budget: Duration,
    pub within_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryTrace {
    pub query_no: u32,
    pub query: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub routed: Option<RoutedQuery>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<SqlPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub staged_ref: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub staged: Option<StagedTable>,
    pub answer: AnswerRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreVector>,
    /// Why the query ended in a fixed message, if it did.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<String>,
    pub stage_timings: BTreeMap<Stage, StageTiming>,
    pub llm_calls: usize,
    pub calls: Vec<CompletionRecord>,
    pub prompts: Vec<ComposedPrompt>,
    pub budget: BudgetReport,
}

impl QueryTrace {
    pub fn calls_for(&self, role: PromptRole) -> usize {
        self.calls.iter().filter(|c| c.role == role).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionState {
    pub session_id: String,
    pub mup: MinimalUserProfile,
    pub created_at: u64,
    pub queries: Vec<QueryTrace>,
}

/// Session identifiers: 128 random bits from a ChaCha stream, seeded from
/// the OS or from a fixed seed for replayable runs.
#[derive(Debug)]
pub struct SessionIds {
    rng: Mutex<ChaCha8Rng>,
}

impl SessionIds {
    pub fn from_entropy() -> Self {
        Self {
            rng: Mutex::new(ChaCha8Rng::from_os_rng()),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn next_id(&self) -> String {
        format!("{:032x}", self.rng.lock().unwrap().random::<u128>())
    }
}

/// Everything a query needs, shared by all sessions.
pub struct Pipeline {
    pub gateway: Arc<LlmGateway>,
    pub store: Arc<TabularStore>,
    pub catalog: Catalog,
    pub policy: AccessPolicy,
    pub router: QueryRouter,
    pub answer_config: AnswerConfig,
    pub scorer: Scorer,
    pub clock: Arc<dyn Clock>,
}

enum Outcome {
    Answered(AnswerRecord),
    Signal(ErrorSignal),
}

#[derive(Default)]
struct Progress {
    routed: Option<RoutedQuery>,
    plan: Option<SqlPlan>,
    staged: Option<Arc<StagedTable>>,
    configs: Vec<TableConfiguration>,
    prompts: Vec<ComposedPrompt>,
    timings: BTreeMap<Stage, StageTiming>,
}

impl Pipeline {
    /// Checks that every catalog table exists in the store with its
    /// declared fields.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.catalog.validate_against(&self.store)?;
        Ok(())
    }

    /// Builds the profile for a user.
    pub fn login(&self, user_id: &str) -> Result<MinimalUserProfile, PipelineError> {
        let names = self.catalog.names();
        let mup = self.policy.login(user_id, &names, self.clock.unix_seconds())?;
        mup.validate(&names)?;
        Ok(mup)
    }

    fn timed<T>(&self, origin: Duration, p: &mut Progress, stage: Stage, f: impl FnOnce(&mut Progress) -> T) -> T {
        let start = self.clock.elapsed();
        let out = f(p);
        let end = self.clock.elapsed();
        p.timings.insert(
            stage,
            StageTiming {
                started_at: start.saturating_sub(origin),
                duration: end.saturating_sub(start),
            },
        );
        out
    }

    /// Runs one query for a session. `ledger_key` scopes call accounting.
    pub fn run(
        &self,
        session_id: &str,
        mup: &MinimalUserProfile,
        query_no: u32,
        query: &str,
    ) -> Result<QueryTrace, PipelineError> {
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let key = format!("{session_id}#{query_no}");
        self.gateway.open_query(&key);
        let origin = self.clock.elapsed();
        let mut p = Progress::default();
        let outcome = self.stages(&key, session_id, mup, query_no, query, origin, &mut p);
        let calls = self.gateway.close_query(&key).unwrap_or_default();
        let outcome = outcome?;
        let (answer, signal) = match outcome {
            Outcome::Answered(a) => (a, None),
            Outcome::Signal(s) => {
                let mut rec = classify_error_path(&s, &self.answer_config)?;
                rec.staged_ref = p.staged.as_ref().map(|t| t.staging_id.clone());
                (rec, Some(format!("{s:?}")))
            }
        };
        let scores = self.timed(origin, &mut p, Stage::Score, |p| {
            (answer.kind == AnswerKind::Answer).then(|| self.score(query, p, &answer))
        });
        for stage in Stage::ALL {
            let at = p
                .timings
                .values()
                .map(StageTiming::finished_at)
                .max()
                .unwrap_or_default();
            p.timings.entry(stage).or_insert(StageTiming {
                started_at: at,
                duration: Duration::ZERO,
            });
        }
        let total = self.clock.elapsed().saturating_sub(origin);
        let provider_latency: Duration = calls.iter().map(|c| c.latency).sum();
        Ok(QueryTrace {
            query_no,
            query: query.to_string(),
            routed: p.routed,
            plan: p.plan,
            staged_ref: answer.staged_ref.clone(),
            staged: p.staged.as_deref().cloned(),
            answer,
            scores,
            signal,
            stage_timings: p.timings,
            llm_calls: calls.len(),
            calls,
            prompts: p.prompts,
            budget: BudgetReport {
                total,
                provider_latency,
                overhead: total.saturating_sub(provider_latency),
                budget: QUERY_BUDGET,
                within_budget: total <= QUERY_BUDGET,
            },
        })
    }

    fn score(&self, query: &str, p: &Progress, answer: &AnswerRecord) -> ScoreVector {
        let (prompt, span) = answer
            .prompt_used
            .as_ref()
            .map(|ap| ap.render_with_span())
            .map_or((String::new(), None), |(t, s)| (t, Some(s)));
        self.scorer.score(&ScoreInput {
            query,
            plan: p.plan.as_ref(),
            staged: p.staged.as_deref(),
            final_prompt: &prompt,
            table_span: span,
            response: &answer.text,
            configs: &p.configs,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn stages(
        &self,
        key: &str,
        session_id: &str,
        mup: &MinimalUserProfile,
        query_no: u32,
        query: &str,
        origin: Duration,
        p: &mut Progress,
    ) -> Result<Outcome, PipelineError> {
        let routed = self.timed(
            origin,
            p,
            Stage::Route,
            |p| -> Result<Option<RoutedQuery>, PipelineError> {
                let mut routed = match self.router.rewrite_and_extend(&self.gateway, query) {
                    Ok(r) => r,
                    Err(RouterError::UnclassifiableQuery) => return Ok(None),
                    Err(e) => return Err(e.into()),
                };
                p.prompts.push(ComposedPrompt {
                    role: PromptRole::Route,
                    body: self.router.route_prompt(&routed),
                });
                let res = self
                    .router
                    .route_tables(&self.gateway, key, &mut routed, mup, &self.catalog);
                p.routed = Some(routed.clone());
                match res {
                    Ok(configs) => {
                        p.configs = configs;
                        Ok(Some(routed))
                    }
                    Err(RouterError::NoAccessibleTables) => Ok(None),
                    Err(e) => Err(e.into()),
                }
            },
        )?;
        let Some(routed) = routed else {
            return Ok(Outcome::Signal(if p.routed.is_some() {
                ErrorSignal::NoAccessibleTables
            } else {
                ErrorSignal::UnclassifiableQuery
            }));
        };

        if routed.intention == IntentionCategory::Faq {
            let Some(faq) = routed.faq_match() else {
                return Ok(Outcome::Signal(ErrorSignal::EmptyResult));
            };
            let result = ResultSet {
                columns: vec![ColumnDef::new("answer", ScalarType::Text)],
                rows: vec![vec![Value::Text(faq.example_answer.clone())]],
            };
            p.staged = Some(retriever::stage_result(
                &self.store,
                session_id,
                query_no,
                result,
                vec![],
                "faq".into(),
            ));
        } else {
            let plan = self.timed(origin, p, Stage::SqlGen, |p| -> Result<SqlPlan, PipelineError> {
                let example = routed
                    .sql_example()
                    .map(|m| (m.question_text.as_str(), m.example_answer.as_str()));
                let prompt = build_sql_prompt(&routed.rewritten_subqueries, &p.configs, example)?;
                p.prompts.push(ComposedPrompt {
                    role: PromptRole::SqlGen,
                    body: prompt.body().to_string(),
                });
                Ok(generate_sql(&self.gateway, key, &prompt, &self.store)?)
            })?;
            p.plan = Some(plan.clone());
            let staged = self.timed(origin, p, Stage::RunQuery, |_| {
                retriever::run_query(&plan, &self.store, mup, session_id, query_no)
            });
            match staged {
                Ok(t) => p.staged = Some(t),
                Err(RetrieverError::AccessDenied { table, reason }) => {
                    return Ok(Outcome::Signal(ErrorSignal::AccessDenied(format!("{table}: {reason}"))));
                }
                Err(e) => return Err(e.into()),
            }
        }

        let staged = p.staged.clone().expect("staged above");
        let record = self.timed(origin, p, Stage::Answer, |_| {
            compose_answer(&self.gateway, key, &routed, &staged, &self.answer_config)
        })?;
        if let Some(ap) = &record.prompt_used {
            p.prompts.push(ComposedPrompt {
                role: PromptRole::Answer,
                body: ap.render(),
            });
        }
        if record.kind == AnswerKind::NoData {
            return Ok(Outcome::Signal(ErrorSignal::EmptyResult));
        }
        Ok(Outcome::Answered(record))
    }
}

/// Live sessions over one pipeline. Queries within a session run one at a
/// time; different sessions run concurrently.
pub struct SessionManager {
    pipeline: Arc<Pipeline>,
    ids: SessionIds,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<SessionState>>>>,
}

impl SessionManager {
    pub fn new(pipeline: Arc<Pipeline>, ids: SessionIds) -> Self {
        Self {
            pipeline,
            ids,
            sessions: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn pipeline(&self) -> &Arc<Pipeline> {
        &self.pipeline
    }

    /// Logs a user in and opens a session holding their profile.
    pub fn create_session(&self, user_id: &str) -> Result<(String, MinimalUserProfile), PipelineError> {
        let mup = self.pipeline.login(user_id)?;
        let mut sessions = self.sessions.lock().unwrap();
        let id = loop {
            let id = self.ids.next_id();
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let state = SessionState {
            session_id: id.clone(),
            mup: mup.clone(),
            created_at: self.pipeline.clock.unix_seconds(),
            queries: Vec::new(),
        };
        sessions.insert(id.clone(), Arc::new(Mutex::new(state)));
        Ok((id, mup))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>, PipelineError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| PipelineError::UnknownSession(id.to_string()))
    }

    pub fn query(&self, session_id: &str, query: &str) -> Result<QueryTrace, PipelineError> {
        let session = self.session(session_id)?;
        let mut state = session.lock().unwrap();
        let query_no = state.queries.len() as u32 + 1;
        let trace = self.pipeline.run(session_id, &state.mup, query_no, query)?;
        state.queries.push(trace.clone());
        Ok(trace)
    }

    /// Trace `query_no`, counted from 1.
    pub fn trace(&self, session_id: &str, query_no: usize) -> Result<QueryTrace, PipelineError> {
        let session = self.session(session_id)?;
        let state = session.lock().unwrap();
        query_no
            .checked_sub(1)
            .and_then(|i| state.queries.get(i))
            .cloned()
            .ok_or_else(|| PipelineError::UnknownTrace {
                session: session_id.to_string(),
                query_no,
            })
    }

    pub fn mup(&self, session_id: &str) -> Result<MinimalUserProfile, PipelineError> {
        Ok(self.session(session_id)?.lock().unwrap().mup.clone())
    }

    /// Closes a session and drops its staged tables.
    pub fn delete_session(&self, session_id: &str) -> Result<usize, PipelineError> {
        self.sessions
            .lock()
            .unwrap()
            .remove(session_id)
            .ok_or_else(|| PipelineError::UnknownSession(session_id.to_string()))?;
        Ok(self.pipeline.store.drop_staging(session_id))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }
}
