//! The canonical tokenizer shared by memory accounting, the dataset window
//! and the metrics.
//!
//! Token counting is plain whitespace splitting. Metric tokens are the same
//! whitespace tokens, lowercased, with leading and trailing punctuation
//! stripped; tokens that are pure punctuation are dropped.

/// Number of whitespace-separated tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Normalized tokens used for scoring.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| c.is_ascii_punctuation() || is_unicode_punct(c));
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{2013}' | '\u{2014}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{00A1}'
    )
}

/// Collapse any line breaks into `"; "` separators so the result is one line.
pub fn to_single_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}
