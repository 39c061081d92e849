//! Gazetteer entity extraction and the directional lexicon.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use super::ScorerError;
use crate::text::{word_tokens, WordToken};

pub const DEFAULT_GAZETTEER: &str = include_str!("../../assets/gazetteer.tsv");
pub const DEFAULT_LEXICON: &str = include_str!("../../assets/lexicon.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntitySpan {
    pub entity: String,
    pub start: usize,
    pub end: usize,
    /// Gazetteer class, `date` or `proper_noun` for heuristic matches.
    pub class: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractedEntities {
    pub entities: BTreeSet<String>,
    pub spans: Vec<EntitySpan>,
}

fn parse_tsv(text: &str, min_fields: usize, what: &str) -> Result<Vec<(usize, Vec<String>)>, ScorerError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = raw.split('\t').map(|f| f.trim().to_string()).collect();
        if fields.len() < min_fields || fields.iter().take(min_fields).any(String::is_empty) {
            return Err(ScorerError::MalformedAsset {
                asset: what.to_string(),
                line: idx + 1,
            });
        }
        out.push((idx + 1, fields));
    }
    Ok(out)
}

/// Term list with classes and optional canonical forms.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    /// Token sequence → (class, canonical entity).
    terms: BTreeMap<Vec<String>, (String, String)>,
    max_len: usize,
}

impl Gazetteer {
    /// Parses `term<TAB>class[<TAB>canonical]` lines.
    pub fn parse(text: &str) -> Result<Self, ScorerError> {
        let mut g = Self {
            terms: BTreeMap::new(),
            max_len: 0,
        };
        for (_, f) in parse_tsv(text, 2, "gazetteer")? {
            let canonical = f.get(2).filter(|c| !c.is_empty()).unwrap_or(&f[0]).clone();
            g.insert(&f[0], &f[1], &canonical);
        }
        if g.terms.is_empty() {
            return Err(ScorerError::EmptyGazetteer);
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        Self::parse(&read(path)?)
    }

    pub fn insert(&mut self, term: &str, class: &str, canonical: &str) {
        let toks: Vec<String> = word_tokens(term).into_iter().map(|t| t.text).collect();
        if toks.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(toks.len());
        let canonical = word_tokens(canonical)
            .into_iter()
            .map(|t| t.text)
            .collect::<Vec<_>>()
            .join(" ");
        self.terms.insert(toks, (class.to_lowercase(), canonical));
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        let toks: Vec<String> = word_tokens(term).into_iter().map(|t| t.text).collect();
        self.terms.contains_key(&toks)
    }

    fn longest_at(&self, toks: &[WordToken], i: usize) -> Option<(usize, &(String, String))> {
        (1..=self.max_len.min(toks.len() - i)).rev().find_map(|n| {
            let key: Vec<String> = toks[i..i + n].iter().map(|t| t.text.clone()).collect();
            self.terms.get(&key).map(|v| (n, v))
        })
    }
}

impl Default for Gazetteer {
    fn default() -> Self {
        Self::parse(DEFAULT_GAZETTEER).expect("bundled gazetteer is valid")
    }
}

fn read(path: &Path) -> Result<String, ScorerError> {
    std::fs::read_to_string(path).map_err(|source| ScorerError::Io {
        path: path.display().to_string(),
        source,
    })
}

const HEURISTIC_STOPWORDS: &[&str] = &[
    "what", "which", "who", "where", "when", "why", "how", "the", "a", "an", "in", "on", "for", "of", "and", "or",
    "this", "that", "these", "those", "is", "are", "was", "were", "our", "its", "it", "to", "by", "with", "from",
];

fn is_year(t: &WordToken) -> bool {
    t.text.len() == 4 && t.text.parse::<u32>().is_ok_and(|y| (1900..=2099).contains(&y))
}

fn only_space_between(text: &str, a: &WordToken, b: &WordToken) -> bool {
    text[a.end..b.start].chars().all(char::is_whitespace)
}

/// Gazetteer matches (longest first, non-overlapping), dates, and runs of
/// two or more capitalized words not covered by the gazetteer.
///
/// A month followed by a year forms one `month year` date entity; a
/// standalone year is a date entity too.
pub fn extract_entities(text: &str, gazetteer: &Gazetteer) -> ExtractedEntities {
    let toks = word_tokens(text);
    let mut out = ExtractedEntities::default();
    let mut covered = vec![false; toks.len()];
    let push = |out: &mut ExtractedEntities, entity: String, start: usize, end: usize, class: &str| {
        out.entities.insert(entity.clone());
        out.spans.push(EntitySpan {
            entity,
            start,
            end,
            class: class.to_string(),
        });
    };
    let mut i = 0;
    while i < toks.len() {
        if let Some((n, (class, canonical))) = gazetteer.longest_at(&toks, i) {
            let mut end_tok = i + n;
            let mut entity = canonical.clone();
            let mut class = class.as_str();
            if class == "month" {
                // Optional day, then a year.
                let mut j = end_tok;
                if toks
                    .get(j)
                    .is_some_and(|t| t.text.len() <= 2 && t.text.parse::<u8>().is_ok_and(|d| (1..=31).contains(&d)))
                {
                    j += 1;
                }
                if let Some(y) = toks.get(j).filter(|t| is_year(t)) {
                    entity = format!("{canonical} {}", y.text);
                    end_tok = j + 1;
                    class = "date";
                }
            }
            push(&mut out, entity, toks[i].start, toks[end_tok - 1].end, class);
            covered[i..end_tok].iter_mut().for_each(|c| *c = true);
            i = end_tok;
            continue;
        }
        if is_year(&toks[i]) {
            push(&mut out, toks[i].text.clone(), toks[i].start, toks[i].end, "date");
            covered[i] = true;
        }
        i += 1;
    }

    let capitalized = |t: &WordToken| text[t.start..].chars().next().is_some_and(char::is_uppercase);
    let mut i = 0;
    while i < toks.len() {
        if covered[i] || !capitalized(&toks[i]) || HEURISTIC_STOPWORDS.contains(&toks[i].text.as_str()) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < toks.len()
            && !covered[j]
            && capitalized(&toks[j])
            && only_space_between(text, &toks[j - 1], &toks[j])
            && !toks[j].text.chars().all(|c| c.is_ascii_digit())
        {
            j += 1;
        }
        if j - i >= 2 {
            let entity = toks[i..j].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
            push(&mut out, entity, toks[i].start, toks[j - 1].end, "proper_noun");
        }
        i = j;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
    Change,
}

impl Direction {
    fn parse(s: &str) -> Option<Self> {
        match s.to_lowercase().as_str() {
            "increase" => Some(Self::Increase),
            "decrease" => Some(Self::Decrease),
            "change" => Some(Self::Change),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DirectionalTerm {
    pub term: String,
    pub direction: Direction,
    pub negated: bool,
    pub start: usize,
}

const NEGATORS: &[&str] = &[
    "not", "no", "never", "without", "nor", "didn", "doesn", "don", "isn", "wasn", "weren", "hasn", "haven", "hadn",
];

/// Increase, decrease and change vocabulary.
#[derive(Debug, Clone)]
pub struct DirectionLexicon {
    terms: BTreeMap<String, Direction>,
}

impl DirectionLexicon {
    pub fn parse(text: &str) -> Result<Self, ScorerError> {
        let mut terms = BTreeMap::new();
        for (line, f) in parse_tsv(text, 2, "lexicon")? {
            let dir = Direction::parse(&f[1]).ok_or_else(|| ScorerError::MalformedAsset {
                asset: "lexicon".into(),
                line,
            })?;
            terms.insert(f[0].to_lowercase(), dir);
        }
        Ok(Self { terms })
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        Self::parse(&read(path)?)
    }

    /// Directional words in the text. A term preceded within three words
    /// by a negator, with no clause punctuation in between, is negated.
    pub fn find(&self, text: &str) -> Vec<DirectionalTerm> {
        let toks = word_tokens(text);
        toks.iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let direction = *self.terms.get(&t.text)?;
                let mut negated = false;
                for j in (i.saturating_sub(3)..i).rev() {
                    if text[toks[j].end..toks[j + 1].start].contains(['.', ';', ',', '!', '?']) {
                        break;
                    }
                    if NEGATORS.contains(&toks[j].text.as_str()) {
                        negated = true;
                        break;
                    }
                }
                Some(DirectionalTerm {
                    term: t.text.clone(),
                    direction,
                    negated,
                    start: t.start,
                })
            })
            .collect()
    }
}

impl Default for DirectionLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::synth::CITIES;

    fn ents(text: &str) -> Vec<String> {
        extract_entities(text, &Gazetteer::default())
            .entities
            .into_iter()
            .collect()
    }

    #[test]
    fn gazetteer_examples() {
        assert_eq!(
            ents("water consumption rates in the USA"),
            vec!["usa", "water consumption"]
        );
        assert_eq!(ents("offices in Argentina"), vec!["argentina"]);
        assert!(ents("").is_empty());
    }

    #[test]
    fn aliases_and_dates() {
        assert_eq!(ents("the United States in Dec 2022"), vec!["december 2022", "usa"]);
        assert_eq!(ents("the USA in December 2022"), vec!["december 2022", "usa"]);
        assert_eq!(ents("during 2023"), vec!["2023"]);
    }

    #[test]
    fn capitalized_runs() {
        assert_eq!(ents("The Oncology Department grew"), vec!["oncology department"]);
        assert!(ents("What Is").is_empty());
    }

    #[test]
    fn bundled_gazetteer_covers_the_corpus_hierarchy() {
        let g = Gazetteer::default();
        for c in CITIES {
            assert!(
                g.contains(c.name) && g.contains(c.country) && g.contains(c.continent),
                "{}",
                c.name
            );
        }
    }

    #[test]
    fn lexicon_negation() {
        let lex = DirectionLexicon::default();
        let found = lex.find("Emissions did not fall; they rose.");
        assert_eq!(found.len(), 2);
        assert!(found[0].negated && found[0].direction == Direction::Decrease);
        assert!(!found[1].negated && found[1].direction == Direction::Increase);
    }
}
