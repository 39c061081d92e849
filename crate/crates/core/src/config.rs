//! Service configuration file and pipeline assembly from it.
//!
//! ```toml
//! provider = "mock"
//!
//! [mock]
//! fixtures_path = "fixtures.tsv"
//!
//! [store]
//! data_dir = "data"
//!
//! [auth]
//! policy_path = "policy.toml"
//!
//! [router]
//! prototypes_path = "prototypes.tsv"
//!
//! [retriever]
//! catalog_path = "data/catalog.json"
//!
//! [answer]
//! guardrails_path = "guardrails.toml"
//!
//! [scorer]
//! gazetteer_path = "gazetteer.tsv"
//! lexicon_path = "lexicon.tsv"
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{AnswerConfig, AnswerError};
use crate::auth::{AccessPolicy, AuthError};
use crate::catalog::{Catalog, CatalogError};
use crate::clock::Clock;
use crate::gateway::{CompletionProvider, FixtureError, FixtureMap, HashedTokenEmbedder, LlmGateway, MockProvider};
use crate::pipeline::Pipeline;
use crate::router::{PrototypeStore, QueryRouter, RouterError};
use crate::scorer::{Scorer, ScorerConfig, ScorerError};
use crate::store::{parse_schemas, StoreError, TabularStore};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    pub fixtures_path: Option<PathBuf>,
}

/// Settings for an OpenAI-style chat completions endpoint. The bearer token
/// is read from the environment variable named by `token_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSection {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
}

fn default_token_env() -> String {
    "TABLERAG_API_TOKEN".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    /// Directory with `schemas.json` and one CSV per table.
    pub data_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthSection {
    pub policy_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterSection {
    pub prototypes_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieverSection {
    pub catalog_path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerSection {
    pub guardrails_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScorerSection {
    pub gazetteer_path: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: ScorerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    /// Fixed seed for session ids; only for replayable test runs.
    pub session_seed: Option<u64>,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            session_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub provider: ProviderKind,
    #[serde(default)]
    pub mock: MockSection,
    pub http: Option<HttpSection>,
    pub store: StoreSection,
    pub auth: AuthSection,
    pub router: RouterSection,
    pub retriever: RetrieverSection,
    #[serde(default)]
    pub answer: AnswerSection,
    #[serde(default)]
    pub scorer: ScorerSection,
    #[serde(default)]
    pub server: ServerSection,
}

impl AppConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: AppConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if cfg.provider == ProviderKind::Http && cfg.http.is_none() {
            return Err(ConfigError::Invalid(
                "provider = \"http\" needs an [http] section".into(),
            ));
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.mock.fixtures_path.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.store.data_dir);
        resolve(&mut cfg.auth.policy_path);
        resolve(&mut cfg.router.prototypes_path);
        resolve(&mut cfg.retriever.catalog_path);
        if let Some(p) = cfg.answer.guardrails_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.scorer.gazetteer_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.scorer.lexicon_path.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The mock provider with the configured fixtures, if any.
    pub fn mock_provider(&self) -> Result<MockProvider, ConfigError> {
        let fixtures = match &self.mock.fixtures_path {
            Some(p) => FixtureMap::load(p)?,
            None => FixtureMap::default(),
        };
        Ok(MockProvider::new(fixtures))
    }

    /// Loads every asset and assembles the pipeline around `completion`.
    pub fn build_pipeline(
        &self,
        completion: Arc<dyn CompletionProvider>,
        clock: Arc<dyn Clock>,
    ) -> Result<Pipeline, ConfigError> {
        let store = Arc::new(load_store(&self.store.data_dir)?);
        let catalog = Catalog::load(&self.retriever.catalog_path)?;
        let policy = AccessPolicy::load(&self.auth.policy_path)?;
        let gateway = Arc::new(LlmGateway::new(
            completion,
            Arc::new(HashedTokenEmbedder::default()),
            Arc::clone(&clock),
        ));
        let prototypes = PrototypeStore::load(&gateway, &self.router.prototypes_path)?;
        let answer_config = match &self.answer.guardrails_path {
            Some(p) => AnswerConfig::load(p)?,
            None => AnswerConfig::default(),
        };
        let scorer = Scorer::load(
            self.scorer.gazetteer_path.as_deref(),
            self.scorer.lexicon_path.as_deref(),
            self.scorer.settings.clone(),
        )?;
        let pipeline = Pipeline {
            gateway,
            store,
            catalog,
            policy,
            router: QueryRouter::new(prototypes),
            answer_config,
            scorer,
            clock,
        };
        pipeline.catalog.validate_against(&pipeline.store)?;
        Ok(pipeline)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Ingests `schemas.json` and the CSV file of every table it lists.
pub fn load_store(dir: &Path) -> Result<TabularStore, ConfigError> {
    let schema_path = dir.join("schemas.json");
    let schemas = parse_schemas(&read(&schema_path)?)
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", schema_path.display())))?;
    let store = TabularStore::new();
    for (name, columns) in schemas {
        store.ingest_csv(&dir.join(format!("{name}.csv")), &name, &columns)?;
    }
    Ok(store)
}
