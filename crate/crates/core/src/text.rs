//! String utilities shared by every matching, containment and hashing check.

use regex::RegexBuilder;
use sha2::{Digest, Sha256};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn is_terminal_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{3002}')
}

/// Canonical answer form used by all equality and containment checks.
///
/// Lowercases, trims, strips terminal punctuation, collapses whitespace and drops
/// the articles `a`/`an`/`the`. The steps are iterated to a fixed point so the
/// function is idempotent.
pub fn normalize_answer(text: &str) -> String {
    let mut current = text.to_lowercase();
    loop {
        let stripped = current.trim().trim_end_matches(|c: char| is_terminal_punct(c) || c.is_whitespace());
        let next = stripped
            .split_whitespace()
            .filter(|tok| !ARTICLES.contains(tok))
            .collect::<Vec<_>>()
            .join(" ");
        if next == current {
            return next;
        }
        current = next;
    }
}

/// Word tokens used for token-aligned containment: normalized text split on every
/// non-alphanumeric character, articles removed.
pub fn match_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect()
}

/// Normalized containment: `needle`'s tokens appear as a contiguous run in `haystack`.
/// An empty needle is never contained.
pub fn contains_answer(haystack: &str, needle: &str) -> bool {
    let needle = match_tokens(needle);
    if needle.is_empty() {
        return false;
    }
    let hay = match_tokens(haystack);
    contains_tokens(&hay, &needle)
}

pub(crate) fn contains_tokens(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Two answers agree when either normalized form contains the other.
pub fn answers_agree(a: &str, b: &str) -> bool {
    normalize_answer(a) == normalize_answer(b) || contains_answer(a, b) || contains_answer(b, a)
}

/// Case-insensitive raw substring test.
pub fn contains_verbatim_ci(haystack: &str, needle: &str) -> bool {
    !needle.is_empty() && haystack.to_lowercase().contains(&needle.to_lowercase())
}

pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Replaces every case-insensitive occurrence of `needle` that is not embedded inside a
/// longer alphanumeric word. Returns the rewritten text and the number of replacements.
pub fn replace_occurrences_ci(text: &str, needle: &str, replacement: &str) -> (String, usize) {
    if needle.trim().is_empty() {
        return (text.to_owned(), 0);
    }
    let re = RegexBuilder::new(&regex::escape(needle))
        .case_insensitive(true)
        .build()
        .expect("escaped literal is a valid pattern");
    let starts_alnum = needle.chars().next().is_some_and(char::is_alphanumeric);
    let ends_alnum = needle.chars().last().is_some_and(char::is_alphanumeric);

    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    let mut count = 0;
    for m in re.find_iter(text) {
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        let left_ok = !starts_alnum || !before.is_some_and(char::is_alphanumeric);
        let right_ok = !ends_alnum || !after.is_some_and(char::is_alphanumeric);
        if left_ok && right_ok {
            out.push_str(&text[last..m.start()]);
            out.push_str(replacement);
            last = m.end();
            count += 1;
        }
    }
    out.push_str(&text[last..]);
    (out, count)
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Derives a sub-seed from a base seed and a list of labels.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has at least 8 bytes"))
}

/// Trims generation boilerplate: keeps the first non-empty line, drops a leading
/// `label:` prefix, surrounding quotes and a trailing period.
pub(crate) fn clean_generated_answer(raw: &str, labels: &[&str]) -> String {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let mut answer = line;
    for label in labels {
        if answer.len() >= label.len() && answer[..label.len()].eq_ignore_ascii_case(label) {
            answer = answer[label.len()..].trim_start_matches(':').trim();
        }
    }
    let answer = answer.trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '\u{201C}' | '\u{201D}')).trim();
    answer.strip_suffix('.').unwrap_or(answer).trim().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("The  Eiffel Tower."), "eiffel tower");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("  An apple, "), "apple");
        assert_eq!(normalize_answer("foo the."), "foo");
        assert_eq!(normalize_answer("Theater"), "theater");
    }

    #[test]
    fn containment_is_token_aligned() {
        assert!(contains_answer("Vice President Kamala Harris became the nominee.", "Kamala Harris"));
        assert!(!contains_answer("An example sentence.", "X"));
        assert!(contains_answer("X won in 1999.", "x"));
        assert!(!contains_answer("anything", ""));
        assert!(!contains_answer("anything", "The."));
    }

    #[test]
    fn agreement_is_bidirectional() {
        assert!(answers_agree("Paris", "Paris is the capital."));
        assert!(answers_agree("Paris is the capital.", "paris"));
        assert!(!answers_agree("Joe Biden", "Kamala Harris"));
    }

    #[test]
    fn replacement_respects_word_boundaries() {
        let (out, n) = replace_occurrences_ci("X won in 1999. x again in 2001. eXample", "X", "Y");
        assert_eq!(n, 2);
        assert_eq!(out, "Y won in 1999. Y again in 2001. eXample");
        assert!(!contains_answer(&out, "X"));
    }

    #[test]
    fn cleans_generated_answers() {
        assert_eq!(clean_generated_answer("Fake answer: Lyon.\nextra", &["fake answer"]), "Lyon");
        assert_eq!(clean_generated_answer("  \"Lhotse\"  ", &["fake answer"]), "Lhotse");
        assert_eq!(clean_generated_answer("", &[]), "");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn text_contains_itself(s in "[A-Za-z][A-Za-z ,.]{0,30}") {
            if !match_tokens(&s).is_empty() {
                prop_assert!(contains_answer(&s, &s));
            }
        }
    }
}
