//! Uniform contract for completion and embedding providers.
//!
//! Every prompt in the pipeline goes through [`LlmGateway::complete`], which
//! enforces the call deadline and keeps a per-query ledger of
//! [`CompletionRecord`]s. The ledger is what `llm_calls` in a query trace is
//! read from.

mod embed;
mod mock;

pub use embed::{cosine_similarity, EmbeddingVector, HashedTokenEmbedder};
pub use mock::{FixtureError, FixtureMap, MockProvider};

use std::collections::HashMap;
use std::fmt;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Clock;
use crate::text::canonicalize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("deadline of {0:?} exceeded")]
    DeadlineExceeded(Duration),
    #[error("prompt body is empty")]
    EmptyPrompt,
    #[error("embedding input is empty")]
    EmptyInput,
    #[error("unknown query session `{0}`")]
    UnknownSession(String),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
}

/// Error reported by a provider implementation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("{0}")]
    Unavailable(String),
}

/// Which pipeline stage a prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    Auth,
    Route,
    SqlGen,
    Answer,
}

impl PromptRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptRole::Auth => "auth",
            PromptRole::Route => "route",
            PromptRole::SqlGen => "sql_gen",
            PromptRole::Answer => "answer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "auth" => Some(PromptRole::Auth),
            "route" => Some(PromptRole::Route),
            "sql_gen" => Some(PromptRole::SqlGen),
            "answer" => Some(PromptRole::Answer),
            _ => None,
        }
    }
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A prompt ready to be sent to a completion provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    role: PromptRole,
    body: String,
    token_estimate: usize,
}

impl PromptText {
    /// Rejects blank bodies with [`GatewayError::EmptyPrompt`].
    pub fn new(role: PromptRole, body: impl Into<String>) -> Result<Self, GatewayError> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let token_estimate = body.chars().count().div_ceil(4).max(1);
        Ok(Self {
            role,
            body,
            token_estimate,
        })
    }

    pub fn role(&self) -> PromptRole {
        self.role
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn token_estimate(&self) -> usize {
        self.token_estimate
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.body)
    }
}

/// SHA-256 of the canonicalized text, hex encoded.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(canonicalize(text).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    #[serde(with = "duration_secs")]
    pub deadline: Duration,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 0.0,
            max_output_tokens: 1024,
            deadline: Duration::from_secs(10),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {} outside [0,1]",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(GatewayError::InvalidParams(format!(
                "top_p {} outside [0,1]",
                self.top_p
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_output_tokens must be positive".into()));
        }
        if self.deadline.is_zero() {
            return Err(GatewayError::InvalidParams("deadline must be positive".into()));
        }
        Ok(())
    }
}

/// One completion attempt that reached a provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_fingerprint: String,
    pub role: PromptRole,
    pub output: String,
    #[serde(with = "duration_micros")]
    pub latency: Duration,
    pub provider_id: String,
    pub call_index_in_query: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub trait CompletionProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, prompt: &PromptText, params: &GenerationParams) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Embeds already-canonicalized, non-empty text.
    fn embed(&self, canonical_text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// Routes completions and embeddings to the configured providers and keeps
/// per-query call accounting.
pub struct LlmGateway {
    completion: Arc<dyn CompletionProvider>,
    embedding: Arc<dyn EmbeddingProvider>,
    clock: Arc<dyn Clock>,
    ledger: Mutex<HashMap<String, Vec<CompletionRecord>>>,
}

impl LlmGateway {
    pub fn new(
        completion: Arc<dyn CompletionProvider>,
        embedding: Arc<dyn EmbeddingProvider>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            completion,
            embedding,
            clock,
            ledger: Mutex::new(HashMap::new()),
        }
    }

    pub fn completion_provider_id(&self) -> &str {
        self.completion.id()
    }

    /// Starts accounting for a user query. Reopening a key resets it.
    pub fn open_query(&self, key: &str) {
        self.ledger.lock().unwrap().insert(key.to_string(), Vec::new());
    }

    /// Drops the ledger entry; returns the records it held.
    pub fn close_query(&self, key: &str) -> Option<Vec<CompletionRecord>> {
        self.ledger.lock().unwrap().remove(key)
    }

    pub fn call_count(&self, key: &str) -> Result<usize, GatewayError> {
        self.ledger
            .lock()
            .unwrap()
            .get(key)
            .map(Vec::len)
            .ok_or_else(|| GatewayError::UnknownSession(key.to_string()))
    }

    pub fn records(&self, key: &str) -> Result<Vec<CompletionRecord>, GatewayError> {
        self.ledger
            .lock()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownSession(key.to_string()))
    }

    /// Sends a prompt to the completion provider under the params deadline.
    ///
    /// A timed-out call returns [`GatewayError::DeadlineExceeded`] and never
    /// any partial output; the abandoned provider call finishes on its own
    /// thread and its result is discarded.
    pub fn complete(
        &self,
        key: &str,
        prompt: &PromptText,
        params: &GenerationParams,
    ) -> Result<CompletionRecord, GatewayError> {
        params.validate()?;
        if prompt.body().trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let call_index = {
            let ledger = self.ledger.lock().unwrap();
            let records = ledger
                .get(key)
                .ok_or_else(|| GatewayError::UnknownSession(key.to_string()))?;
            records.len() as u32
        };

        let started = self.clock.elapsed();
        let (tx, rx) = mpsc::channel();
        let provider = Arc::clone(&self.completion);
        let owned_prompt = prompt.clone();
        let owned_params = params.clone();
        std::thread::spawn(move || {
            let _ = tx.send(provider.complete(&owned_prompt, &owned_params));
        });
        let outcome = match rx.recv_timeout(params.deadline) {
            Ok(Ok(output)) => Ok(output),
            Ok(Err(ProviderError::Unavailable(msg))) => Err(GatewayError::ProviderUnavailable(msg)),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(GatewayError::DeadlineExceeded(params.deadline)),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(GatewayError::ProviderUnavailable("provider thread terminated".into()))
            }
        };
        let latency = self.clock.elapsed().saturating_sub(started);

        let record = CompletionRecord {
            prompt_fingerprint: prompt.fingerprint(),
            role: prompt.role(),
            output: outcome.as_ref().cloned().unwrap_or_default(),
            latency,
            provider_id: self.completion.id().to_string(),
            call_index_in_query: call_index,
            error: outcome.as_ref().err().map(ToString::to_string),
        };
        {
            let mut ledger = self.ledger.lock().unwrap();
            let records = ledger
                .get_mut(key)
                .ok_or_else(|| GatewayError::UnknownSession(key.to_string()))?;
            let mut record = record.clone();
            record.call_index_in_query = records.len() as u32;
            records.push(record);
        }
        outcome.map(|_| record)
    }

    /// Embeds text after canonicalization; identical canonical text always
    /// yields the identical vector.
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let canonical = canonicalize(text);
        if canonical.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let values = self
            .embedding
            .embed(&canonical)
            .map_err(|ProviderError::Unavailable(msg)| GatewayError::ProviderUnavailable(msg))?;
        EmbeddingVector::new(values, self.embedding.dimension()).map_err(GatewayError::ProviderUnavailable)
    }
}

pub(crate) mod duration_micros {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_micros(u64::deserialize(d)?))
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SystemClock;

    fn gateway(mock: MockProvider) -> LlmGateway {
        LlmGateway::new(
            Arc::new(mock),
            Arc::new(HashedTokenEmbedder::default()),
            Arc::new(SystemClock::new()),
        )
    }

    #[test]
    fn fixture_output_is_returned_and_recorded() {
        let prompt = PromptText::new(PromptRole::SqlGen, "Sub-query 1: total water use").unwrap();
        let mut fixtures = FixtureMap::default();
        fixtures.insert_exact(prompt.fingerprint(), "SELECT 1");
        let gw = gateway(MockProvider::new(fixtures));
        gw.open_query("q1");
        let rec = gw.complete("q1", &prompt, &GenerationParams::default()).unwrap();
        assert_eq!(rec.output, "SELECT 1");
        assert_eq!(rec.call_index_in_query, 0);
        assert_eq!(rec.provider_id, "mock");
        assert_eq!(rec.prompt_fingerprint, prompt.fingerprint());
        assert_eq!(gw.call_count("q1").unwrap(), 1);
    }

    #[test]
    fn empty_prompt_is_rejected() {
        assert_eq!(PromptText::new(PromptRole::Answer, ""), Err(GatewayError::EmptyPrompt));
        assert_eq!(
            PromptText::new(PromptRole::Answer, " \n\t"),
            Err(GatewayError::EmptyPrompt)
        );
    }

    #[test]
    fn token_estimate_is_positive() {
        let p = PromptText::new(PromptRole::Route, "x").unwrap();
        assert_eq!(p.token_estimate(), 1);
        let p = PromptText::new(PromptRole::Route, "abcdefghi").unwrap();
        assert_eq!(p.token_estimate(), 3);
    }

    #[test]
    fn deadline_is_enforced_without_partial_output() {
        let prompt = PromptText::new(PromptRole::Answer, "slow").unwrap();
        let mut fixtures = FixtureMap::default();
        fixtures.insert_exact(prompt.fingerprint(), "late answer");
        let gw = gateway(MockProvider::new(fixtures).with_delay(Duration::from_secs(1)));
        gw.open_query("q");
        let params = GenerationParams {
            deadline: Duration::from_millis(1),
            ..GenerationParams::default()
        };
        let err = gw.complete("q", &prompt, &params).unwrap_err();
        assert_eq!(err, GatewayError::DeadlineExceeded(Duration::from_millis(1)));
        let recs = gw.records("q").unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].output.is_empty());
        assert!(recs[0].error.is_some());
    }

    #[test]
    fn call_count_tracks_each_query_separately() {
        let gw = gateway(MockProvider::new(FixtureMap::default()));
        assert!(matches!(gw.call_count("nope"), Err(GatewayError::UnknownSession(_))));
        gw.open_query("a");
        gw.open_query("b");
        assert_eq!(gw.call_count("a").unwrap(), 0);
        let p = PromptText::new(PromptRole::SqlGen, "no fixture here").unwrap();
        // Misses still count: the provider was invoked.
        assert!(gw.complete("a", &p, &GenerationParams::default()).is_err());
        assert_eq!(gw.call_count("a").unwrap(), 1);
        assert_eq!(gw.call_count("b").unwrap(), 0);
    }

    #[test]
    fn unopened_query_is_unknown() {
        let gw = gateway(MockProvider::new(FixtureMap::default()));
        let p = PromptText::new(PromptRole::Route, "x").unwrap();
        assert!(matches!(
            gw.complete("missing", &p, &GenerationParams::default()),
            Err(GatewayError::UnknownSession(_))
        ));
    }

    #[test]
    fn params_validation() {
        let bad = GenerationParams {
            temperature: 1.5,
            ..GenerationParams::default()
        };
        assert!(bad.validate().is_err());
        let p = GenerationParams::default();
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.top_p, 0.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn embeddings_are_deterministic_and_whitespace_insensitive() {
        let gw = gateway(MockProvider::new(FixtureMap::default()));
        let a = gw.embed("abc").unwrap();
        let b = gw.embed("abc").unwrap();
        assert_eq!(a, b);
        let q = gw.embed("Which city used the most water?").unwrap();
        let padded = gw.embed("  Which   city used\tthe most water?\n").unwrap();
        assert_eq!(cosine_similarity(&q, &padded), 1.0);
        let other = gw.embed("renewable electricity share by office").unwrap();
        assert!(cosine_similarity(&q, &other) < 1.0);
        assert_eq!(gw.embed("   "), Err(GatewayError::EmptyInput));
    }
}
