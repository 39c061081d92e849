//! Command implementations behind the `tablerag` binary.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use tablerag_core::answer::render_table_block;
use tablerag_core::catalog::{Catalog, CatalogError, TableConfiguration};
use tablerag_core::config::{AppConfig, ConfigError, ProviderKind};
use tablerag_core::gateway::CompletionProvider;
use tablerag_core::pipeline::{PipelineError, QueryTrace, SessionIds, SessionManager};
use tablerag_core::retriever::{validate_sql, PlanSource, RetrieverError};
use tablerag_core::scorer::{ScoreInput, ScoreVector, Scorer, ScorerConfig, ScorerError};
use tablerag_core::store::synth::{generate, SyntheticCorpusSpec};
use tablerag_core::store::{parse_schemas, ColumnDef, ScalarType, StagedTable, StoreError, TabularStore, Value};
use tablerag_core::suite::{write_demo, SuiteError};
use tablerag_core::{Clock, SystemClock};

use crate::api;
use crate::http_provider::{HttpCompletionProvider, HttpProviderError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Sql(#[from] RetrieverError),
    #[error(transparent)]
    Provider(#[from] HttpProviderError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Builds the configured completion provider. The HTTP provider owns a
/// blocking client, so this must run outside the async runtime.
pub fn provider(config: &AppConfig) -> Result<Arc<dyn CompletionProvider>, CliError> {
    Ok(match config.provider {
        ProviderKind::Mock => Arc::new(config.mock_provider()?),
        ProviderKind::Http => {
            let section = config
                .http
                .as_ref()
                .ok_or_else(|| CliError::Usage("provider = \"http\" needs an [http] section".into()))?;
            Arc::new(HttpCompletionProvider::from_section(section)?)
        }
    })
}

pub fn session_manager(config: &AppConfig, provider: Arc<dyn CompletionProvider>) -> Result<SessionManager, CliError> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let pipeline = config.build_pipeline(provider, clock)?;
    let ids = config
        .server
        .session_seed
        .map_or_else(SessionIds::from_entropy, SessionIds::seeded);
    Ok(SessionManager::new(Arc::new(pipeline), ids))
}

pub fn serve(config: &AppConfig, bind: Option<&str>) -> Result<(), CliError> {
    let manager = Arc::new(session_manager(config, provider(config)?)?);
    let addr: SocketAddr = bind
        .unwrap_or(&config.server.bind)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad bind address: {e}")))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io {
            path: "tokio runtime".into(),
            source,
        })?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| CliError::Io {
                path: addr.to_string(),
                source,
            })?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, api::router(manager))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|source| CliError::Io {
                path: addr.to_string(),
                source,
            })
    })
}

fn print_trace<W: Write>(out: &mut W, t: &QueryTrace) -> std::io::Result<()> {
    writeln!(out, "{}", t.answer.text)?;
    match &t.scores {
        Some(s) => writeln!(out, "[{:?}] scores {s} llm_calls {}", t.answer.kind, t.llm_calls),
        None => writeln!(out, "[{:?}] llm_calls {}", t.answer.kind, t.llm_calls),
    }
}

/// Line-oriented session: each line is a question; `:trace` prints the
/// last trace as JSON and `:quit` ends the session.
pub fn repl<R: BufRead, W: Write>(manager: &SessionManager, user: &str, input: R, mut out: W) -> Result<(), CliError> {
    let stdout = |e| CliError::Io {
        path: "output".into(),
        source: e,
    };
    let (session, mup) = manager.create_session(user)?;
    writeln!(
        out,
        "session {session} for {} ({} tables)",
        mup.user_id,
        mup.granted_tables.len()
    )
    .map_err(stdout)?;
    let mut last: Option<QueryTrace> = None;
    for line in input.lines() {
        let line = line.map_err(|e| CliError::Io {
            path: "input".into(),
            source: e,
        })?;
        let line = line.trim();
        match line {
            "" => continue,
            ":quit" => break,
            ":trace" => match &last {
                Some(t) => writeln!(out, "{}", t.to_json()).map_err(stdout)?,
                None => writeln!(out, "no query yet").map_err(stdout)?,
            },
            q => match manager.query(&session, q) {
                Ok(t) => {
                    print_trace(&mut out, &t).map_err(stdout)?;
                    last = Some(t);
                }
                Err(e) => writeln!(out, "error: {e}").map_err(stdout)?,
            },
        }
    }
    let dropped = manager.delete_session(&session)?;
    writeln!(out, "session closed, {dropped} staged tables dropped").map_err(stdout)?;
    Ok(())
}

/// Parses `col:type,col:type`.
pub fn parse_schema_arg(arg: &str) -> Result<Vec<ColumnDef>, CliError> {
    arg.split(',')
        .map(|part| {
            let (name, ty) = part
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("schema entry `{part}` is not name:type")))?;
            let ty: ScalarType = ty.parse().map_err(CliError::Usage)?;
            Ok(ColumnDef::new(name.trim(), ty))
        })
        .collect()
}

/// Narrowest type every non-empty field of a column parses as.
fn infer_column(fields: &[&str]) -> ScalarType {
    if fields.iter().all(|f| f.is_empty()) {
        return ScalarType::Text;
    }
    [ScalarType::Integer, ScalarType::Decimal, ScalarType::Boolean]
        .into_iter()
        .find(|ty| fields.iter().all(|f| ty.parse_field(f).is_ok()))
        .unwrap_or(ScalarType::Text)
}

/// Reads a CSV with a header row, inferring column types.
pub fn read_csv_inferred(path: &Path) -> Result<(Vec<ColumnDef>, Vec<Vec<String>>), CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        rows.push(record.iter().map(String::from).collect::<Vec<_>>());
    }
    let columns = header
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let fields: Vec<&str> = rows.iter().filter_map(|r| r.get(i)).map(String::as_str).collect();
            ColumnDef::new(name.clone(), infer_column(&fields))
        })
        .collect();
    Ok((columns, rows))
}

/// Adds or replaces a table in a data directory: validates the CSV,
/// rewrites it canonically, records its schema and adds a minimal catalog
/// entry when the table has none.
pub fn ingest(
    data_dir: &Path,
    csv_path: &Path,
    name: &str,
    schema: Option<Vec<ColumnDef>>,
    catalog_path: Option<&Path>,
) -> Result<Vec<ColumnDef>, CliError> {
    let name = name.to_lowercase();
    let schema = match schema {
        Some(s) => s,
        None => read_csv_inferred(csv_path)?.0,
    };
    let store = TabularStore::new();
    let file = std::fs::File::open(csv_path).map_err(io_err(csv_path))?;
    store.ingest_reader(file, &name, &schema)?;

    std::fs::create_dir_all(data_dir).map_err(io_err(data_dir))?;
    let out = data_dir.join(format!("{name}.csv"));
    let file = std::fs::File::create(&out).map_err(io_err(&out))?;
    store.export_csv(&name, std::io::BufWriter::new(file))?;

    let schema_path = data_dir.join("schemas.json");
    let mut schemas: BTreeMap<String, Vec<ColumnDef>> = if schema_path.exists() {
        parse_schemas(&read(&schema_path)?).map_err(|e| CliError::Usage(format!("{}: {e}", schema_path.display())))?
    } else {
        BTreeMap::new()
    };
    schemas.insert(name.clone(), schema.clone());
    let body = serde_json::to_string_pretty(&schemas).expect("schemas serialize");
    std::fs::write(&schema_path, body).map_err(io_err(&schema_path))?;

    if let Some(path) = catalog_path {
        let mut tables = if path.exists() {
            Catalog::load(path)?.tables
        } else {
            Vec::new()
        };
        if !tables.iter().any(|t| t.table_name == name) {
            tables.push(TableConfiguration {
                table_name: name.clone(),
                description: String::new(),
                relevant_fields: schema.clone(),
                sample_field_values: BTreeMap::new(),
                filter_keyword_map: BTreeMap::new(),
            });
            let catalog = Catalog::new(tables)?;
            std::fs::write(path, catalog.to_json()).map_err(io_err(path))?;
        }
    }
    Ok(schema)
}

/// Writes a synthetic corpus. With `data_only` only the tables, schemas,
/// catalog and manifest are written; otherwise a complete offline bundle.
pub fn generate_corpus(out: &Path, seed: u64, scale: f64, data_only: bool) -> Result<(), CliError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(CliError::Usage(format!("scale must be positive, got {scale}")));
    }
    let spec = SyntheticCorpusSpec::scaled(seed, scale);
    if data_only {
        generate(spec).write_to_dir(out)?;
    } else {
        write_demo(out, spec)?;
    }
    Ok(())
}

/// Inputs to the standalone scorer.
#[derive(Debug, Clone, Default)]
pub struct ScoreArgs {
    pub question: String,
    pub response: String,
    pub sql: Option<String>,
    pub data: Option<PathBuf>,
    pub prompt: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
}

/// Scores one response outside the pipeline.
pub fn score(args: &ScoreArgs, config: Option<&AppConfig>) -> Result<ScoreVector, CliError> {
    let scorer = match config {
        Some(c) => Scorer::load(
            c.scorer.gazetteer_path.as_deref(),
            c.scorer.lexicon_path.as_deref(),
            c.scorer.settings.clone(),
        )?,
        None => Scorer::load(None, None, ScorerConfig::default())?,
    };
    let catalog_path = args
        .catalog
        .clone()
        .or_else(|| config.map(|c| c.retriever.catalog_path.clone()));
    let configs = match catalog_path {
        Some(p) => Catalog::load(&p)?.tables,
        None => Vec::new(),
    };

    let staged = match &args.data {
        Some(path) => {
            let (columns, raw) = read_csv_inferred(path)?;
            let rows = raw
                .iter()
                .map(|r| {
                    columns
                        .iter()
                        .zip(r)
                        .map(|(c, f)| c.ty.parse_field(f).unwrap_or_else(|_| Value::Text(f.clone())))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>();
            Some(StagedTable {
                staging_id: "stage_cli_1".into(),
                columns,
                row_count: rows.len(),
                rows,
                source_sql: args.sql.iter().cloned().collect(),
                origin: "sql".into(),
            })
        }
        None => None,
    };

    let plan = match &args.sql {
        Some(sql) => {
            let mut known: HashSet<String> = HashSet::new();
            for t in &configs {
                known.insert(t.table_name.to_lowercase());
                known.extend(t.relevant_fields.iter().map(|f| f.name.to_lowercase()));
            }
            if let Some(s) = &staged {
                known.extend(s.columns.iter().map(|c| c.name.to_lowercase()));
            }
            Some(validate_sql(sql, &known, PlanSource::Fixture)?)
        }
        None => None,
    };

    let block = staged.as_ref().map(render_table_block);
    let final_prompt = match &args.prompt {
        Some(p) => read(p)?,
        None => block.clone().unwrap_or_default(),
    };
    let table_span = block
        .as_deref()
        .filter(|b| !b.is_empty())
        .and_then(|b| final_prompt.find(b).map(|start| start..start + b.len()));

    Ok(scorer.score(&ScoreInput {
        query: &args.question,
        plan: plan.as_ref(),
        staged: staged.as_ref(),
        final_prompt: &final_prompt,
        table_span,
        response: &args.response,
        configs: &configs,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_argument_parsing() {
        let cols = parse_schema_arg("city:text,kwh:decimal").unwrap();
        assert_eq!(
            cols,
            vec![
                ColumnDef::new("city", ScalarType::Text),
                ColumnDef::new("kwh", ScalarType::Decimal)
            ]
        );
        assert!(parse_schema_arg("city").is_err());
        assert!(parse_schema_arg("city:blob").is_err());
    }

    #[test]
    fn column_inference_picks_the_narrowest_type() {
        assert_eq!(infer_column(&["1", "2", ""]), ScalarType::Integer);
        assert_eq!(infer_column(&["1", "2.5"]), ScalarType::Decimal);
        assert_eq!(infer_column(&["yes", "no"]), ScalarType::Boolean);
        assert_eq!(infer_column(&["Paris", "3"]), ScalarType::Text);
    }
}
