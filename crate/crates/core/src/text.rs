//! Text canonicalization and the word tokenizer shared by every module that
//! compares text (fingerprints, embeddings, entity and keyword matching,
//! regurgitation windows).

/// Lowercases, collapses whitespace runs into one space and trims.
pub fn canonicalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// A word token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordToken {
    /// Lowercased token text.
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits text into maximal runs of alphanumeric characters.
///
/// Tokens are lowercased; spans point into the original text.
pub fn word_tokens(text: &str) -> Vec<WordToken> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(idx);
            }
        } else if let Some(s) = start.take() {
            tokens.push(make_token(text, s, idx));
        }
    }
    if let Some(s) = start {
        tokens.push(make_token(text, s, text.len()));
    }
    tokens
}

fn make_token(text: &str, start: usize, end: usize) -> WordToken {
    WordToken {
        text: text[start..end].chars().flat_map(char::to_lowercase).collect(),
        start,
        end,
    }
}

/// Lowercased word strings without spans.
pub fn words(text: &str) -> Vec<String> {
    word_tokens(text).into_iter().map(|t| t.text).collect()
}

/// Finds every occurrence of `needle` (a token sequence) in `haystack`.
///
/// Returns the start index of each match in token units.
pub fn find_token_sequence(haystack: &[WordToken], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| {
            haystack[i..i + needle.len()]
                .iter()
                .zip(needle)
                .all(|(h, n)| h.text == *n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalize_collapses_whitespace_and_case() {
        assert_eq!(canonicalize("  What IS\tthe\n\nlevel  "), "what is the level");
        assert_eq!(canonicalize(""), "");
        assert_eq!(canonicalize(" \n "), "");
    }

    #[test]
    fn tokens_keep_spans() {
        let text = "CO2 in the USA, 1,250 units";
        let toks = word_tokens(text);
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["co2", "in", "the", "usa", "1", "250", "units"]);
        assert_eq!(&text[toks[3].start..toks[3].end], "USA");
    }

    #[test]
    fn token_sequence_search() {
        let toks = word_tokens("water consumption in the water consumption table");
        let needle = vec!["water".to_string(), "consumption".to_string()];
        assert_eq!(find_token_sequence(&toks, &needle), vec![0, 4]);
        assert!(find_token_sequence(&toks, &[]).is_empty());
    }
}
