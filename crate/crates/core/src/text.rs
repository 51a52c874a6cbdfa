//! Tokenization helpers shared by the rule-based judge, claim alignment and
//! answer matching.

use std::collections::BTreeSet;

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "me", "more", "most", "my", "myself", "nor", "now", "of", "off", "on",
    "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same",
    "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercased alphanumeric tokens in order of appearance.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Case-folded tokens that are not stopwords, in order of appearance.
pub fn content_words(text: &str) -> Vec<String> {
    tokens(text).filter(|t| !is_stopword(t)).collect()
}

pub fn content_word_set(text: &str) -> BTreeSet<String> {
    tokens(text).filter(|t| !is_stopword(t)).collect()
}

/// Number of whitespace-separated tokens; the unit the mock scorer counts.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Collapses whitespace runs to single spaces and trims.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Keeps at most `max_chars` characters from the head of `text`.
pub fn truncate_head(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopword_table_is_sorted() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn content_words_fold_case_and_drop_stopwords() {
        assert_eq!(
            content_words("The Rover landed on Mars in 2012."),
            vec!["rover", "landed", "mars", "2012"]
        );
    }

    #[test]
    fn truncate_head_respects_char_boundaries() {
        assert_eq!(truncate_head("héllo", 2), "hé");
        assert_eq!(truncate_head("abc", 10), "abc");
        assert_eq!(truncate_head("abc", 0), "");
    }
}
