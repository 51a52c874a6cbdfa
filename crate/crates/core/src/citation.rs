//! Evidence documents, attributed responses, and the in-line citation grammar.
//!
//! A response is a sequence of sentence-level statements. Citations are runs of
//! single-integer markers such as `[1][3]`, 1-based into the document set the
//! response was generated against. Anything else in brackets (`[abc]`, `[1-3]`,
//! `[1,2]`) is literal text.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::text::collapse_whitespace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocOrigin {
    Retrieved,
    Synthesized,
    Distractor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    #[serde(alias = "text")]
    pub body: String,
    #[serde(default = "default_origin")]
    pub origin: DocOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_query_id: Option<String>,
}

fn default_origin() -> DocOrigin {
    DocOrigin::Retrieved
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
            origin: DocOrigin::Retrieved,
            source_query_id: None,
        }
    }

    pub fn with_origin(mut self, origin: DocOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_source_query(mut self, query_id: impl Into<String>) -> Self {
        self.source_query_id = Some(query_id.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DocumentSetError {
    #[error("document at position {0} has an empty doc_id")]
    EmptyId(usize),
    #[error("document {0:?} has an empty body")]
    EmptyBody(String),
    #[error("doc_id {0:?} appears more than once")]
    DuplicateId(String),
}

/// Ordered documents; citation `k` resolves to the `k`-th entry (1-based).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocumentSet(Vec<Document>);

impl DocumentSet {
    pub fn new(docs: Vec<Document>) -> Result<Self, DocumentSetError> {
        let set = Self(docs);
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), DocumentSetError> {
        let mut seen = HashSet::new();
        for (pos, doc) in self.0.iter().enumerate() {
            if doc.doc_id.is_empty() {
                return Err(DocumentSetError::EmptyId(pos));
            }
            if doc.body.trim().is_empty() {
                return Err(DocumentSetError::EmptyBody(doc.doc_id.clone()));
            }
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(DocumentSetError::DuplicateId(doc.doc_id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Resolves a 1-based citation index.
    pub fn get(&self, citation: u32) -> Option<&Document> {
        let idx = usize::try_from(citation).ok()?.checked_sub(1)?;
        self.0.get(idx)
    }

    /// 1-based index of the document with `doc_id`.
    pub fn index_of(&self, doc_id: &str) -> Option<u32> {
        self.0
            .iter()
            .position(|d| d.doc_id == doc_id)
            .map(|p| p as u32 + 1)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Document] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Document> {
        self.0
    }

    /// Documents whose ids are in `ids`, keeping set order.
    pub fn subset<'a>(&'a self, ids: &'a BTreeSet<String>) -> impl Iterator<Item = &'a Document> {
        self.0.iter().filter(move |d| ids.contains(&d.doc_id))
    }
}

impl<'a> IntoIterator for &'a DocumentSet {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    /// Statement text with citation markers removed and whitespace normalized.
    pub text: String,
    /// Resolvable citations, ascending and deduplicated.
    pub citations: Vec<u32>,
    /// Markers that did not resolve against the document set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invalid_citations: Vec<u32>,
    /// Byte offsets `[start, end)` into the raw response.
    pub char_span: (usize, usize),
}

impl Statement {
    pub fn new(text: impl Into<String>, citations: impl IntoIterator<Item = u32>) -> Self {
        let citations: BTreeSet<u32> = citations.into_iter().collect();
        Self {
            text: text.into(),
            citations: citations.into_iter().collect(),
            invalid_citations: Vec::new(),
            char_span: (0, 0),
        }
    }

    /// Every marker the statement carried, valid or not, ascending.
    pub fn all_markers(&self) -> Vec<u32> {
        let all: BTreeSet<u32> = self
            .citations
            .iter()
            .chain(&self.invalid_citations)
            .copied()
            .collect();
        all.into_iter().collect()
    }

    pub fn has_citations(&self) -> bool {
        !self.citations.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributedResponse {
    pub raw_text: String,
    pub statements: Vec<Statement>,
}

impl AttributedResponse {
    pub fn parse(raw: &str, doc_count: usize) -> Self {
        parse_response(raw, doc_count)
    }

    /// Builds a response from statements and fills `raw_text` and spans from
    /// the rendered form.
    pub fn from_statements(statements: Vec<Statement>) -> Self {
        let mut raw = String::new();
        let mut spanned = Vec::with_capacity(statements.len());
        for mut st in statements {
            if !raw.is_empty() {
                raw.push(' ');
            }
            let start = raw.len();
            raw.push_str(&render_statement(&st));
            st.char_span = (start, raw.len());
            spanned.push(st);
        }
        Self {
            raw_text: raw,
            statements: spanned,
        }
    }

    pub fn render(&self) -> String {
        render_response(self)
    }

    /// Statement texts and citations, ignoring raw text and spans.
    pub fn structure(&self) -> Vec<(&str, &[u32], &[u32])> {
        self.statements
            .iter()
            .map(|s| {
                (
                    s.text.as_str(),
                    s.citations.as_slice(),
                    s.invalid_citations.as_slice(),
                )
            })
            .collect()
    }
}

impl fmt::Display for AttributedResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, Copy)]
struct Marker {
    start: usize,
    end: usize,
    index: u32,
}

/// Finds every `[<ascii digits>]` marker, left to right.
fn scan_markers(raw: &str) -> Vec<Marker> {
    let bytes = raw.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let digits = bytes[i + 1..].iter().take_while(|b| b.is_ascii_digit()).count();
            let close = i + 1 + digits;
            if digits > 0 && close < bytes.len() && bytes[close] == b']' {
                // Overflowing indices can never resolve; saturate so they stay invalid.
                let index = raw[i + 1..close].parse::<u32>().unwrap_or(u32::MAX);
                out.push(Marker {
                    start: i,
                    end: close + 1,
                    index,
                });
                i = close + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | '\u{201d}' | '\u{2019}' | '\u{bb}')
}

const TITLE_ABBREVIATIONS: &[&str] = &[
    "al", "approx", "cf", "dr", "fig", "jr", "mr", "mrs", "ms", "prof", "sr", "st", "vs",
];

/// Whether a single `.` ending `word` closes the sentence, given the next
/// non-whitespace character.
fn period_ends_sentence(word: &str, next: Option<char>) -> bool {
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    if word.is_empty() {
        return true;
    }
    let lower = word.to_lowercase();
    if lower == "etc" {
        return next.is_none_or(char::is_uppercase);
    }
    // e.g / i.e / u.s
    let dotted = lower.contains('.')
        && lower
            .split('.')
            .all(|part| part.chars().count() == 1 && part.chars().all(char::is_alphabetic));
    if dotted {
        return next.is_none();
    }
    if TITLE_ABBREVIATIONS.contains(&lower.as_str()) {
        return next.is_none();
    }
    true
}

/// The word ending at byte `off`, skipping whitespace and markers so that
/// `Dr [1].` and `Dr.` look the same. A word is an alphanumeric run that may
/// contain single dots (`e.g`, `3.5`).
fn word_before<'a>(raw: &'a str, off: usize, markers: &[Marker]) -> &'a str {
    let mut end = off;
    loop {
        end = raw[..end].trim_end().len();
        match markers.iter().rev().find(|m| m.end == end) {
            Some(m) => end = m.start,
            None => break,
        }
    }
    let chars: Vec<(usize, char)> = raw[..end].char_indices().collect();
    let mut k = chars.len();
    while k > 0 {
        let c = chars[k - 1].1;
        let inner_dot = c == '.'
            && k >= 2
            && chars[k - 2].1.is_alphanumeric()
            && chars.get(k).is_some_and(|&(_, n)| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_dot {
            k -= 1;
        } else {
            break;
        }
    }
    let start = chars.get(k).map_or(end, |&(p, _)| p);
    &raw[start..end]
}

/// Splits `raw` into statement byte spans.
fn segment(raw: &str, markers: &[Marker]) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let n = chars.len();
    let byte_at = |i: usize| if i < n { chars[i].0 } else { raw.len() };
    let char_idx_of_byte = |b: usize| chars.partition_point(|&(off, _)| off < b);
    let marker_at = |b: usize| markers.binary_search_by_key(&b, |m| m.start).ok().map(|k| markers[k]);

    let mut spans = Vec::new();
    let mut seg_start: Option<usize> = None;
    let mut i = 0;
    while i < n {
        let (off, c) = chars[i];
        if seg_start.is_none() && !c.is_whitespace() {
            seg_start = Some(off);
        }
        if let Some(m) = marker_at(off) {
            i = char_idx_of_byte(m.end);
            continue;
        }
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < n && is_terminal(chars[j].1) {
            j += 1;
        }
        let single_period = j == i + 1 && c == '.';
        while j < n && is_closer(chars[j].1) {
            j += 1;
        }
        // Trailing markers, optionally whitespace-separated, stay with this sentence.
        loop {
            let mut k = j;
            while k < n && chars[k].1.is_whitespace() {
                k += 1;
            }
            match (k < n).then(|| marker_at(chars[k].0)).flatten() {
                Some(m) => j = char_idx_of_byte(m.end),
                None => break,
            }
        }
        let mut boundary = j == n || chars[j].1.is_whitespace();
        if boundary && single_period {
            let next = chars[j..].iter().map(|&(_, c)| c).find(|c| !c.is_whitespace());
            boundary = period_ends_sentence(word_before(raw, off, markers), next);
        }
        if boundary {
            if let Some(start) = seg_start.take() {
                spans.push((start, byte_at(j)));
            }
        }
        i = j;
    }
    if let Some(start) = seg_start {
        let end = start + raw[start..].trim_end().len();
        spans.push((start, end));
    }
    spans
}

/// Removes markers inside `[start, end)` and normalizes whitespace. A marker
/// directly followed by punctuation takes the whitespace before it along.
fn clean_text(raw: &str, start: usize, end: usize, markers: &[Marker]) -> String {
    let mut buf = String::with_capacity(end - start);
    let mut cursor = start;
    for m in markers.iter().filter(|m| m.start >= start && m.end <= end) {
        buf.push_str(&raw[cursor..m.start]);
        let next = raw[m.end..end].chars().next();
        if next.is_some_and(|c| matches!(c, '.' | ',' | '!' | '?' | ';' | ':')) {
            buf.truncate(buf.trim_end().len());
        } else {
            buf.push(' ');
        }
        cursor = m.end;
    }
    buf.push_str(&raw[cursor..end]);
    collapse_whitespace(&buf)
}

/// Parses a raw response into sentence-level statements with their citations.
///
/// Total: never fails. Markers resolving outside `1..=doc_count` are kept in
/// `invalid_citations`.
pub fn parse_response(raw: &str, doc_count: usize) -> AttributedResponse {
    let markers = scan_markers(raw);
    let mut statements: Vec<Statement> = Vec::new();
    for (start, end) in segment(raw, &markers) {
        let text = clean_text(raw, start, end, &markers);
        let mut valid = BTreeSet::new();
        let mut invalid = BTreeSet::new();
        for m in markers.iter().filter(|m| m.start >= start && m.end <= end) {
            if m.index >= 1 && (m.index as usize) <= doc_count {
                valid.insert(m.index);
            } else {
                invalid.insert(m.index);
            }
        }
        match statements.last_mut() {
            // Marker- or punctuation-only fragments belong to the preceding statement.
            Some(prev) if !text.chars().any(char::is_alphanumeric) => {
                prev.char_span.1 = end;
                prev.text = clean_text(raw, prev.char_span.0, end, &markers);
                let v: BTreeSet<u32> = prev.citations.iter().copied().chain(valid).collect();
                let iv: BTreeSet<u32> =
                    prev.invalid_citations.iter().copied().chain(invalid).collect();
                prev.citations = v.into_iter().collect();
                prev.invalid_citations = iv.into_iter().collect();
            }
            _ => statements.push(Statement {
                text,
                citations: valid.into_iter().collect(),
                invalid_citations: invalid.into_iter().collect(),
                char_span: (start, end),
            }),
        }
    }
    AttributedResponse {
        raw_text: raw.to_string(),
        statements,
    }
}

fn render_statement(st: &Statement) -> String {
    let markers: String = st.all_markers().iter().map(|k| format!("[{k}]")).collect();
    if st.text.is_empty() {
        return markers;
    }
    let text = st.text.as_str();
    let trimmed = text.trim_end_matches(is_closer);
    let head = trimmed.trim_end_matches(is_terminal);
    if head.len() == trimmed.len() {
        // No terminal punctuation: close the sentence.
        return if markers.is_empty() {
            format!("{text}.")
        } else {
            format!("{text} {markers}.")
        };
    }
    let tail = &text[head.len()..];
    if markers.is_empty() {
        text.to_string()
    } else if head.is_empty() {
        format!("{markers}{tail}")
    } else if head.ends_with(char::is_whitespace) {
        // Keep the original gap before the punctuation.
        format!("{head}{markers} {tail}")
    } else {
        format!("{head} {markers}{tail}")
    }
}

/// Renders statements with markers placed before terminal punctuation.
pub fn render_response(resp: &AttributedResponse) -> String {
    resp.statements
        .iter()
        .map(render_statement)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Removes every citation marker and collapses whitespace.
pub fn strip_citations(raw: &str) -> String {
    let markers = scan_markers(raw);
    clean_text(raw, 0, raw.len(), &markers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_statements_with_citations() {
        let r = parse_response("Paris is the capital [1][3]. It has museums [2].", 3);
        assert_eq!(r.statements.len(), 2);
        assert_eq!(r.statements[0].citations, vec![1, 3]);
        assert_eq!(r.statements[0].text, "Paris is the capital.");
        assert_eq!(r.statements[1].citations, vec![2]);
        assert_eq!(r.statements[1].text, "It has museums.");
    }

    #[test]
    fn no_markers() {
        let r = parse_response("The sky is blue.", 5);
        assert_eq!(r.statements.len(), 1);
        assert!(r.statements[0].citations.is_empty());
    }

    #[test]
    fn out_of_range_marker_is_invalid() {
        let r = parse_response("Cited badly [7].", 5);
        assert_eq!(r.statements.len(), 1);
        assert!(r.statements[0].citations.is_empty());
        assert_eq!(r.statements[0].invalid_citations, vec![7]);
        let zero = parse_response("Zero [0].", 5);
        assert_eq!(zero.statements[0].invalid_citations, vec![0]);
    }

    #[test]
    fn citations_are_deduplicated_and_sorted() {
        let r = parse_response("A claim [3][1][3].", 3);
        assert_eq!(r.statements[0].citations, vec![1, 3]);
    }

    #[test]
    fn unsupported_marker_forms_stay_literal() {
        let r = parse_response("Ranges [1-3] and lists [1,2] and words [abc].", 5);
        assert_eq!(r.statements.len(), 1);
        assert!(r.statements[0].citations.is_empty());
        assert_eq!(r.statements[0].text, "Ranges [1-3] and lists [1,2] and words [abc].");
    }

    #[test]
    fn markers_after_punctuation_attach_to_preceding_sentence() {
        let r = parse_response("First.[1] Second. [2] Third [3].", 3);
        assert_eq!(r.structure().len(), 3);
        assert_eq!(r.statements[0].citations, vec![1]);
        assert_eq!(r.statements[1].citations, vec![2]);
        assert_eq!(r.statements[1].text, "Second.");
        assert_eq!(r.statements[2].citations, vec![3]);
    }

    #[test]
    fn abbreviations_and_decimals_do_not_split() {
        let r = parse_response(
            "Fruits, e.g. apples, cost 3.50 dollars. Dr. Smith agrees. We sell pears, etc. and more.",
            0,
        );
        let texts: Vec<_> = r.statements.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "Fruits, e.g. apples, cost 3.50 dollars.",
                "Dr. Smith agrees.",
                "We sell pears, etc. and more."
            ]
        );
        let r = parse_response("We sell pears, etc. Then we go home.", 0);
        assert_eq!(r.statements.len(), 2);
    }

    #[test]
    fn yes_no_answers_split() {
        let r = parse_response("No. Curiosity outlasted its mission [1].", 1);
        assert_eq!(r.statements.len(), 2);
        assert_eq!(r.statements[0].text, "No.");
    }

    #[test]
    fn spans_cover_raw_text() {
        let raw = "  Alpha [1]. Beta!  Gamma? [2]  ";
        let r = parse_response(raw, 2);
        assert_eq!(r.statements.len(), 3);
        assert_eq!(&raw[r.statements[0].char_span.0..r.statements[0].char_span.1], "Alpha [1].");
        assert_eq!(&raw[r.statements[2].char_span.0..r.statements[2].char_span.1], "Gamma? [2]");
    }

    #[test]
    fn marker_only_response() {
        let r = parse_response("[1][2]", 2);
        assert_eq!(r.statements.len(), 1);
        assert_eq!(r.statements[0].text, "");
        assert_eq!(r.statements[0].citations, vec![1, 2]);
        assert_eq!(render_response(&r), "[1][2]");
    }

    #[test]
    fn blank_input_has_no_statements() {
        assert!(parse_response("", 3).statements.is_empty());
        assert!(parse_response("  \n ", 3).statements.is_empty());
    }

    #[test]
    fn render_places_markers_before_terminal_punctuation() {
        let st = Statement::new("Paris is the capital", [3, 1]);
        assert_eq!(render_statement(&st), "Paris is the capital [1][3].");
        let st = Statement::new("Paris is the capital.", [1, 3]);
        assert_eq!(render_statement(&st), "Paris is the capital [1][3].");
        let st = Statement::new("Is it?", []);
        assert_eq!(render_statement(&st), "Is it?");
        let st = Statement::new("He said \"hi.\"", [2]);
        assert_eq!(render_statement(&st), "He said \"hi [2].\"");
    }

    #[test]
    fn render_round_trips() {
        let raw = "Paris is the capital [3][1]. It has museums [2]! Does it rain? Yes [9].";
        let first = parse_response(raw, 3);
        let again = parse_response(&render_response(&first), 3);
        assert_eq!(first.structure(), again.structure());
        assert_eq!(
            render_response(&first),
            "Paris is the capital [1][3]. It has museums [2]! Does it rain? Yes [9]."
        );
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_citations("A fact [1][2]."), "A fact.");
        assert_eq!(strip_citations("No markers here."), "No markers here.");
        assert_eq!(strip_citations("Mixed [1] middle [2]."), "Mixed middle.");
        assert_eq!(strip_citations("glued[1]word"), "glued word");
    }

    #[test]
    fn document_set_validation() {
        let ok = DocumentSet::new(vec![Document::new("a", "A", "x"), Document::new("b", "B", "y")]);
        assert!(ok.is_ok());
        let dup = DocumentSet::new(vec![Document::new("a", "A", "x"), Document::new("a", "B", "y")]);
        assert_eq!(dup, Err(DocumentSetError::DuplicateId("a".into())));
        let empty = DocumentSet::new(vec![Document::new("a", "A", " ")]);
        assert!(matches!(empty, Err(DocumentSetError::EmptyBody(_))));
        let set = ok.unwrap();
        assert_eq!(set.get(0), None);
        assert_eq!(set.get(2).unwrap().doc_id, "b");
        assert_eq!(set.get(3), None);
        assert_eq!(set.index_of("b"), Some(2));
    }
}
