use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

use super::{CompletionProvider, GenerationParams, PromptRole, PromptText, ProviderError};
use crate::router::CANDIDATE_TABLES_LABEL;
use crate::text::canonicalize;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Canned completions keyed by prompt.
///
/// A key is either a 64-hex-digit prompt fingerprint (exact match) or
/// `role:needle`, which matches any prompt of that role whose canonical body
/// contains the canonical needle. Among needle matches the longest needle
/// wins, then the earliest entry.
#[derive(Debug, Clone, Default)]
pub struct FixtureMap {
    exact: HashMap<String, String>,
    needles: Vec<(PromptRole, String, String)>,
}

impl FixtureMap {
    pub fn insert_exact(&mut self, fingerprint: impl Into<String>, output: impl Into<String>) {
        self.exact.insert(fingerprint.into(), output.into());
    }

    pub fn insert_needle(&mut self, role: PromptRole, needle: &str, output: impl Into<String>) {
        self.needles.push((role, canonicalize(needle), output.into()));
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.needles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Merges `other` in; its needle entries come after the existing ones.
    pub fn extend(&mut self, other: FixtureMap) {
        self.exact.extend(other.exact);
        self.needles.extend(other.needles);
    }

    pub fn lookup(&self, prompt: &PromptText) -> Option<&str> {
        if let Some(out) = self.exact.get(&prompt.fingerprint()) {
            return Some(out);
        }
        let body = canonicalize(prompt.body());
        let mut best: Option<&(PromptRole, String, String)> = None;
        for entry in &self.needles {
            if entry.0 != prompt.role() || !body.contains(entry.1.as_str()) {
                continue;
            }
            if best.is_none_or(|b| entry.1.len() > b.1.len()) {
                best = Some(entry);
            }
        }
        best.map(|e| e.2.as_str())
    }

    /// Parses the fixture file format: one `key<TAB>output` per line, `#`
    /// comments and blank lines ignored; `\n`, `\t` and `\\` escapes are
    /// decoded in the output.
    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut map = FixtureMap::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let (key, value) = raw.split_once('\t').ok_or_else(|| FixtureError::Malformed {
                line,
                message: "expected `key<TAB>output`".into(),
            })?;
            let output = unescape(value).map_err(|message| FixtureError::Malformed { line, message })?;
            let key = key.trim();
            if key.len() == 64 && key.bytes().all(|b| b.is_ascii_hexdigit()) {
                map.insert_exact(key.to_ascii_lowercase(), output);
                continue;
            }
            let (role, needle) = key.split_once(':').ok_or_else(|| FixtureError::Malformed {
                line,
                message: format!("key `{key}` is neither a fingerprint nor `role:needle`"),
            })?;
            let role = PromptRole::parse(role.trim()).ok_or_else(|| FixtureError::Malformed {
                line,
                message: format!("unknown prompt role `{role}`"),
            })?;
            if needle.trim().is_empty() {
                return Err(FixtureError::Malformed {
                    line,
                    message: "empty needle".into(),
                });
            }
            map.insert_needle(role, needle, output);
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Serializes needle entries back to the file format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let mut exact: Vec<_> = self.exact.iter().collect();
        exact.sort();
        for (k, v) in exact {
            out.push_str(&format!("{k}\t{}\n", escape(v)));
        }
        for (role, needle, v) in &self.needles {
            out.push_str(&format!("{role}:{needle}\t{}\n", escape(v)));
        }
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\t', "\\t")
}

fn unescape(s: &str) -> Result<String, String> {
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
            Some('\\') => out.push('\\'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

/// Deterministic completion provider backed by a [`FixtureMap`].
///
/// Route prompts without a fixture are answered by echoing the prompt's
/// `Candidate tables:` line, which is what the offline router relies on.
#[derive(Debug, Clone)]
pub struct MockProvider {
    fixtures: FixtureMap,
    delay: Option<Duration>,
}

impl MockProvider {
    pub fn new(fixtures: FixtureMap) -> Self {
        Self { fixtures, delay: None }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn fixtures(&self) -> &FixtureMap {
        &self.fixtures
    }
}

impl CompletionProvider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &PromptText, _params: &GenerationParams) -> Result<String, ProviderError> {
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        if let Some(out) = self.fixtures.lookup(prompt) {
            return Ok(out.to_string());
        }
        if prompt.role() == PromptRole::Route {
            if let Some(line) = prompt
                .body()
                .lines()
                .find_map(|l| l.trim().strip_prefix(CANDIDATE_TABLES_LABEL))
            {
                return Ok(line.trim().to_string());
            }
        }
        Err(ProviderError::Unavailable(format!(
            "no fixture for {} prompt {}",
            prompt.role(),
            &prompt.fingerprint()[..12]
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_needles_and_escapes() {
        let text = "# comment\n\nsql_gen:Sub-query 1: water\tSELECT 1\\nFROM t\nanswer:USA\tThe answer\\tis 4\n";
        let map = FixtureMap::parse(text).unwrap();
        let p = PromptText::new(PromptRole::SqlGen, "...\nSUB-QUERY 1:   water use\n").unwrap();
        assert_eq!(map.lookup(&p), Some("SELECT 1\nFROM t"));
        let p = PromptText::new(PromptRole::Answer, "usa").unwrap();
        assert_eq!(map.lookup(&p), Some("The answer\tis 4"));
        let p = PromptText::new(PromptRole::Route, "usa").unwrap();
        assert_eq!(map.lookup(&p), None);
    }

    #[test]
    fn longest_needle_wins() {
        let mut map = FixtureMap::default();
        map.insert_needle(PromptRole::Answer, "water", "short");
        map.insert_needle(PromptRole::Answer, "water consumption", "long");
        let p = PromptText::new(PromptRole::Answer, "total water consumption").unwrap();
        assert_eq!(map.lookup(&p), Some("long"));
    }

    #[test]
    fn malformed_lines_report_position() {
        let err = FixtureMap::parse("answer:x\ty\nno tab here\n").unwrap_err();
        assert!(matches!(err, FixtureError::Malformed { line: 2, .. }));
        let err = FixtureMap::parse("bogus:x\ty\n").unwrap_err();
        assert!(matches!(err, FixtureError::Malformed { line: 1, .. }));
    }

    #[test]
    fn file_format_round_trips() {
        let mut map = FixtureMap::default();
        map.insert_exact("a".repeat(64), "x\ny");
        map.insert_needle(PromptRole::SqlGen, "q", "SELECT\t1 \\ 2");
        let back = FixtureMap::parse(&map.to_file_string()).unwrap();
        assert_eq!(back.to_file_string(), map.to_file_string());
    }

    #[test]
    fn route_prompts_echo_candidates() {
        let mock = MockProvider::new(FixtureMap::default());
        let p = PromptText::new(PromptRole::Route, "Question\nCandidate tables: [\"a\", \"b\"]\n").unwrap();
        assert_eq!(
            mock.complete(&p, &GenerationParams::default()).unwrap(),
            "[\"a\", \"b\"]"
        );
    }
}
