//! Number extraction for the grounding check.

use std::sync::OnceLock;

use regex::Regex;
use rust_decimal::Decimal;
use serde::Serialize;

/// One number found in text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NumberMention {
    /// Canonical value: separators stripped, exact decimal, normalized.
    pub value: Decimal,
    pub percent: bool,
    /// The lexeme as written, including sign and percent sign.
    pub raw: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractedNumbers {
    pub values: Vec<NumberMention>,
    /// Date parts (years, days next to a month, ISO and slash dates)
    /// recognized and left out of `values`.
    pub excluded_dates: Vec<String>,
}

impl ExtractedNumbers {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

const MONTHS: &[&str] = &[
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
    "jan",
    "feb",
    "mar",
    "apr",
    "jun",
    "jul",
    "aug",
    "sep",
    "sept",
    "oct",
    "nov",
    "dec",
];

fn candidate_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d[\d,]*(?:\.\d+)?").expect("valid regex"))
}

fn grouped_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{1,3}(?:,\d{3})+(?:\.\d+)?$|^\d+(?:\.\d+)?$").expect("valid regex"))
}

fn iso_date_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{4}-\d{1,2}-\d{1,2}|^\d{1,2}/\d{1,2}/\d{2,4}").expect("valid regex"))
}

fn word_before(text: &str, pos: usize) -> Option<String> {
    let before = text[..pos].trim_end();
    let w: String = before
        .chars()
        .rev()
        .take_while(|c| c.is_alphabetic())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    (!w.is_empty()).then(|| w.to_lowercase())
}

fn word_after(text: &str, pos: usize) -> Option<String> {
    let w: String = text[pos..]
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect();
    (!w.is_empty()).then(|| w.to_lowercase())
}

fn is_month(w: &Option<String>) -> bool {
    w.as_deref().is_some_and(|w| MONTHS.contains(&w))
}

/// Extracts integers, decimals, thousand-separated numbers, percentages
/// and negatives. Digits glued to a preceding letter (`CO2`, `m3`, `Q4`)
/// are part of a word and skipped. Years from 1900 to 2099, days next to a
/// month name, ISO dates and slash dates are treated as dates.
pub fn extract_numbers(text: &str) -> ExtractedNumbers {
    let mut out = ExtractedNumbers::default();
    let mut skip_until = 0;
    for m in candidate_re().find_iter(text) {
        if m.start() < skip_until {
            continue;
        }
        let prev = text[..m.start()].chars().next_back();
        if prev.is_some_and(|c| c.is_alphabetic() || c == '_' || c == '.') {
            continue;
        }
        if let Some(date) = iso_date_re().find(&text[m.start()..]) {
            out.excluded_dates.push(date.as_str().to_string());
            skip_until = m.start() + date.end();
            continue;
        }
        let lexeme = m.as_str().trim_end_matches(',');
        let pieces: Vec<(usize, &str)> = if grouped_re().is_match(lexeme) {
            vec![(m.start(), lexeme)]
        } else {
            // Commas that are not thousand separators separate numbers.
            let mut pos = m.start();
            lexeme
                .split(',')
                .map(|p| {
                    let at = pos;
                    pos += p.len() + 1;
                    (at, p)
                })
                .filter(|(_, p)| !p.is_empty())
                .collect()
        };
        let single = pieces.len() == 1;
        for (at, piece) in pieces {
            let piece_end = at + piece.len();
            let Ok(mut value) = piece.replace(',', "").parse::<Decimal>() else {
                continue;
            };
            let after = &text[piece_end..];
            let percent_sign = single && after.trim_start().starts_with('%');
            let percent_word = single && word_after(text, piece_end).is_some_and(|w| w == "percent");
            let percent = percent_sign || percent_word;
            let integer = !piece.contains(['.', ',']);
            if integer && !percent {
                let n: u64 = piece.parse().unwrap_or(u64::MAX);
                if piece.len() == 4 && (1900..=2099).contains(&n) {
                    out.excluded_dates.push(piece.to_string());
                    continue;
                }
                if (1..=31).contains(&n) && (is_month(&word_before(text, at)) || is_month(&word_after(text, piece_end)))
                {
                    out.excluded_dates.push(piece.to_string());
                    continue;
                }
            }
            let mut start = at;
            let before: Vec<char> = text[..at].chars().rev().take(2).collect();
            if matches!(before.first(), Some('-' | '\u{2212}')) && before.get(1).is_none_or(|c| !c.is_alphanumeric()) {
                value = -value;
                start -= before[0].len_utf8();
            }
            let mut raw_end = piece_end;
            if percent_sign {
                raw_end = piece_end + after.find('%').unwrap_or(0) + 1;
            }
            out.values.push(NumberMention {
                value: value.normalize(),
                percent,
                raw: text[start..raw_end].to_string(),
                start,
                end: raw_end,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(text: &str) -> Vec<(String, bool)> {
        extract_numbers(text)
            .values
            .into_iter()
            .map(|m| (m.value.to_string(), m.percent))
            .collect()
    }

    fn v(s: &str, p: bool) -> (String, bool) {
        (s.to_string(), p)
    }

    #[test]
    fn mixed_forms() {
        assert_eq!(vals("grew 12% to 1,250 units"), vec![v("12", true), v("1250", false)]);
        assert_eq!(vals(""), vec![]);
        assert_eq!(vals("scope 3 emissions"), vec![v("3", false)]);
        assert_eq!(
            vals("a change of -4.50 and 7 percent"),
            vec![v("-4.5", false), v("7", true)]
        );
    }

    #[test]
    fn words_with_digits_are_not_numbers() {
        assert_eq!(vals("tCO2e in m3 for Q4"), vec![]);
    }

    #[test]
    fn dates_are_excluded() {
        let e = extract_numbers("In Dec 2022, on 2023-01-05 and 12/31/2021, it was 5. December 3 or 4 May.");
        let got: Vec<String> = e.values.iter().map(|m| m.value.to_string()).collect();
        assert_eq!(got, vec!["5"]);
        assert_eq!(e.excluded_dates.len(), 5);
    }

    #[test]
    fn ranges_and_lists() {
        assert_eq!(vals("2021-2023 saw 10-20"), vec![v("10", false), v("20", false)]);
        assert_eq!(vals("values 1,2,3"), vec![v("1", false), v("2", false), v("3", false)]);
    }

    #[test]
    fn spans_recover_lexemes() {
        let text = "about -1,234.50% here";
        let e = extract_numbers(text);
        let m = &e.values[0];
        assert_eq!(&text[m.start..m.end], m.raw);
        assert_eq!(m.raw, "-1,234.50%");
        assert_eq!(m.value.to_string(), "-1234.5");
    }
}
