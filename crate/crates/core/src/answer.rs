//! Answer composition: renders the staged table, assembles the answer
//! prompt with guardrails and maps upstream failures to fixed messages.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, GenerationParams, LlmGateway, PromptRole, PromptText};
use crate::router::RoutedQuery;
use crate::store::StagedTable;

pub const DEFAULT_GUARDRAILS: &str = include_str!("../assets/guardrails.toml");

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("invalid guardrail asset: {0}")]
    InvalidAsset(String),
    #[error("cannot read guardrail asset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unrecognized upstream signal: {0}")]
    UnrecognizedSignal(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleQa {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMessages {
    pub access_error: String,
    pub no_data: String,
    pub irrelevant: String,
}

/// The guardrail asset: instructions, style, example and error messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerConfig {
    pub version: String,
    pub style_directives: String,
    pub guardrails: Vec<String>,
    pub example: ExampleQa,
    pub messages: ErrorMessages,
}

impl AnswerConfig {
    pub fn parse(text: &str) -> Result<Self, AnswerError> {
        let cfg: AnswerConfig = toml::from_str(text).map_err(|e| AnswerError::InvalidAsset(e.to_string()))?;
        if cfg.guardrails.iter().all(|g| g.trim().is_empty()) {
            return Err(AnswerError::InvalidAsset("guardrails are empty".into()));
        }
        for m in [
            &cfg.messages.access_error,
            &cfg.messages.no_data,
            &cfg.messages.irrelevant,
        ] {
            if m.chars().any(|c| c.is_ascii_digit()) {
                return Err(AnswerError::InvalidAsset(format!("error message contains digits: {m}")));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AnswerError> {
        let text = std::fs::read_to_string(path).map_err(|source| AnswerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

impl Default for AnswerConfig {
    fn default() -> Self {
        Self::parse(DEFAULT_GUARDRAILS).expect("bundled guardrails are valid")
    }
}

fn escape_cell(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

fn render_line(cells: impl Iterator<Item = String>) -> String {
    let mut line = String::from("|");
    for c in cells {
        line.push(' ');
        line.push_str(&escape_cell(&c));
        line.push_str(" |");
    }
    line
}

/// Renders a staged table as `| a | b |` lines: a header line, then one
/// line per row. `|`, `\` and line breaks inside cells are escaped.
pub fn render_table_block(staged: &StagedTable) -> String {
    let mut lines = vec![render_line(staged.columns.iter().map(|c| c.name.clone()))];
    for row in &staged.rows {
        lines.push(render_line(row.iter().map(ToString::to_string)));
    }
    lines.join("\n")
}

/// Inverse of [`render_table_block`]: the header cells followed by the
/// data rows.
pub fn parse_table_block(block: &str) -> Option<Vec<Vec<String>>> {
    block.lines().map(parse_line).collect()
}

fn parse_line(line: &str) -> Option<Vec<String>> {
    let mut cells = Vec::new();
    let mut chars = line.strip_prefix('|')?.chars().peekable();
    let mut cur = String::new();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next()? {
                'n' => cur.push('\n'),
                'r' => cur.push('\r'),
                other => cur.push(other),
            },
            '|' => {
                cells.push(cur.strip_prefix(' ')?.strip_suffix(' ')?.to_string());
                cur.clear();
            }
            other => cur.push(other),
        }
    }
    cur.is_empty().then_some(cells)
}

/// The answer prompt before rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnswerPrompt {
    pub original_question: String,
    pub questions: Vec<String>,
    pub table_block: String,
    pub guardrails: Vec<String>,
    pub example_qa: ExampleQa,
    pub style_directives: String,
}

impl AnswerPrompt {
    pub fn new(routed: &RoutedQuery, staged: &StagedTable, config: &AnswerConfig) -> Self {
        Self {
            original_question: routed.original.trim().to_string(),
            questions: routed.rewritten_subqueries.clone(),
            table_block: render_table_block(staged),
            guardrails: config.guardrails.clone(),
            example_qa: config.example.clone(),
            style_directives: config.style_directives.clone(),
        }
    }

    /// The prompt text and the byte range of the table block within it.
    pub fn render_with_span(&self) -> (String, Range<usize>) {
        let mut out = String::from("You answer questions about company sustainability data.\nInstructions:\n");
        for g in &self.guardrails {
            out.push_str(&format!("- {g}\n"));
        }
        out.push_str(&format!("Style: {}\n\n", self.style_directives));
        out.push_str(&format!(
            "Example question: {}\nExample answer: {}\n\n",
            self.example_qa.question, self.example_qa.answer
        ));
        out.push_str(&format!("User question (as asked): {}\n", self.original_question));
        out.push_str("Rewritten questions:\n");
        for (i, q) in self.questions.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, q));
        }
        out.push_str("\nData:\n");
        let start = out.len();
        out.push_str(&self.table_block);
        let span = start..out.len();
        out.push_str("\n\nAnswer:\n");
        (out, span)
    }

    pub fn render(&self) -> String {
        self.render_with_span().0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Answer,
    AccessError,
    NoData,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnswerRecord {
    pub text: String,
    pub kind: AnswerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_used: Option<AnswerPrompt>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub staged_ref: Option<String>,
}

/// Upstream outcomes that end in a fixed message instead of an answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ErrorSignal {
    AccessDenied(String),
    NoAccessibleTables,
    EmptyResult,
    UnclassifiableQuery,
    Other(String),
}

/// Maps an upstream signal to its fixed-message record. Anything other than
/// access, empty-result or unclassifiable signals is a pipeline fault.
pub fn classify_error_path(signal: &ErrorSignal, config: &AnswerConfig) -> Result<AnswerRecord, AnswerError> {
    let (kind, text) = match signal {
        ErrorSignal::AccessDenied(_) | ErrorSignal::NoAccessibleTables => {
            (AnswerKind::AccessError, &config.messages.access_error)
        }
        ErrorSignal::EmptyResult => (AnswerKind::NoData, &config.messages.no_data),
        ErrorSignal::UnclassifiableQuery => (AnswerKind::Irrelevant, &config.messages.irrelevant),
        ErrorSignal::Other(detail) => return Err(AnswerError::UnrecognizedSignal(detail.clone())),
    };
    Ok(AnswerRecord {
        text: text.clone(),
        kind,
        prompt_used: None,
        staged_ref: None,
    })
}

/// Produces the answer for a staged result. An empty table yields the
/// no-data message without any completion call.
pub fn compose_answer(
    gateway: &LlmGateway,
    ledger_key: &str,
    routed: &RoutedQuery,
    staged: &StagedTable,
    config: &AnswerConfig,
) -> Result<AnswerRecord, AnswerError> {
    if staged.row_count == 0 {
        let mut record = classify_error_path(&ErrorSignal::EmptyResult, config)?;
        record.staged_ref = Some(staged.staging_id.clone());
        return Ok(record);
    }
    let prompt = AnswerPrompt::new(routed, staged, config);
    let text = PromptText::new(PromptRole::Answer, prompt.render())?;
    let completion = gateway.complete(ledger_key, &text, &GenerationParams::default())?;
    Ok(AnswerRecord {
        text: completion.output.trim().to_string(),
        kind: AnswerKind::Answer,
        prompt_used: Some(prompt),
        staged_ref: Some(staged.staging_id.clone()),
    })
}
