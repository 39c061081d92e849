use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use tablerag_core::config::AppConfig;
use tablerag_server::cli::{self, CliError, ScoreArgs};

#[derive(Parser)]
#[command(name = "tablerag", version, about = "Answer questions over tabular data with an LLM")]
struct Args {
    /// Deployment configuration file.
    #[arg(long, global = true, default_value = "config.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Interactive session on stdin for one user.
    Repl {
        #[arg(long)]
        user: String,
    },
    /// Add or replace a table from a CSV file.
    Ingest {
        csv: PathBuf,
        #[arg(long)]
        name: String,
        /// `col:type,...`; inferred from the data when omitted.
        #[arg(long)]
        schema: Option<String>,
        /// Defaults to the configured data directory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Defaults to the configured catalog.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Write a synthetic sustainability corpus.
    GenerateCorpus {
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Only the tables, without policy, fixtures and config.
        #[arg(long)]
        data_only: bool,
    },
    /// Score one response against its question and data.
    Score {
        #[arg(long)]
        question: String,
        #[arg(long)]
        response: String,
        #[arg(long)]
        sql: Option<String>,
        /// CSV of the rows the answer was grounded on.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Final prompt text, for the regurgitation check.
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

fn load_optional(path: &Path) -> Result<Option<AppConfig>, CliError> {
    if path.exists() {
        Ok(Some(AppConfig::load(path)?))
    } else {
        Ok(None)
    }
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Serve { bind } => {
            let config = AppConfig::load(&args.config)?;
            cli::serve(&config, bind.as_deref())
        }
        Command::Repl { user } => {
            let config = AppConfig::load(&args.config)?;
            let manager = cli::session_manager(&config, cli::provider(&config)?)?;
            let stdin = std::io::stdin();
            cli::repl(&manager, &user, BufReader::new(stdin.lock()), std::io::stdout())
        }
        Command::Ingest {
            csv,
            name,
            schema,
            data_dir,
            catalog,
        } => {
            let config = load_optional(&args.config)?;
            let data_dir = data_dir
                .or_else(|| config.as_ref().map(|c| c.store.data_dir.clone()))
                .ok_or_else(|| CliError::Usage("no --data-dir and no config".into()))?;
            let catalog = catalog.or_else(|| config.as_ref().map(|c| c.retriever.catalog_path.clone()));
            let schema = schema.as_deref().map(cli::parse_schema_arg).transpose()?;
            let columns = cli::ingest(&data_dir, &csv, &name, schema, catalog.as_deref())?;
            for c in columns {
                println!("{}\t{}", c.name, c.ty);
            }
            Ok(())
        }
        Command::GenerateCorpus {
            scale,
            seed,
            out,
            data_only,
        } => {
            cli::generate_corpus(&out, seed, scale, data_only)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Score {
            question,
            response,
            sql,
            data,
            prompt,
            catalog,
        } => {
            let config = load_optional(&args.config)?;
            let score_args = ScoreArgs {
                question,
                response,
                sql,
                data,
                prompt,
                catalog,
            };
            let v = cli::score(&score_args, config.as_ref())?;
            println!("{v}");
            println!(
                "{}",
                serde_json::to_string_pretty(&v.evidence).expect("evidence serializes")
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
