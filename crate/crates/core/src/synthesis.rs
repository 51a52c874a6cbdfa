//! Reverse-attribution data synthesis.
//!
//! For each query: answer closed-book, decompose the answer into claims,
//! group claims into sets, write one document per set, then label every
//! statement with the documents whose sets hold its claims. Citations are
//! correct by construction because each claim records its parent statement.
//! Distractor documents from other queries are mixed in afterwards.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citation::{parse_response, AttributedResponse, DocOrigin, Document, DocumentSet, Statement};
use crate::dataset::{SftMeta, SftRecord, SftSource, WARMUP_EPOCHS};
use crate::gateway::{GatewayError, SamplingParams, TextGenerator};
use crate::prompts::PromptSet;
use crate::seed;
use crate::text::content_word_set;

/// Upper bound on statements in a closed-book answer.
pub const MAX_STATEMENTS: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{stage}: backend returned blank text")]
    EmptyGeneration { stage: &'static str },
    #[error("claim decomposition produced no claims")]
    DecompositionEmpty,
    #[error("distractor pool has {have} documents, {need} requested")]
    PoolTooSmall { need: usize, have: usize },
    #[error("distractor pool document {doc_id} belongs to the same query")]
    ForeignPoolViolation { doc_id: String },
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
}

impl SynthesisError {
    pub fn is_transport(&self) -> bool {
        matches!(self, Self::Gateway(GatewayError::Transport(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: String,
    pub text: String,
    /// 0-based index into the closed-book response's statements.
    pub parent_statement_idx: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSet {
    pub set_id: String,
    pub claim_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExampleFlag {
    /// The closed-book answer exceeded the statement cap and was cut.
    Truncated { original_statements: usize },
    /// No claim traces back to this statement, so it cites nothing.
    UncoveredStatement { statement_idx: usize },
    /// The generated document had a single line, reused as title and body.
    SingleLineDocument { doc_id: String },
}

impl ExampleFlag {
    /// Whether the flag keeps the example out of training datasets.
    pub fn is_degenerate(&self) -> bool {
        !matches!(self, Self::Truncated { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub query_id: String,
    pub query: String,
    pub documents: DocumentSet,
    pub gold_response: AttributedResponse,
    pub claims: Vec<Claim>,
    pub claim_sets: Vec<ClaimSet>,
    pub doc_for_set: BTreeMap<String, String>,
    pub relevant_doc_ids: BTreeSet<String>,
    #[serde(default)]
    pub flags: Vec<ExampleFlag>,
}

impl SyntheticExample {
    pub fn is_flag_free(&self) -> bool {
        !self.flags.iter().any(ExampleFlag::is_degenerate)
    }

    pub fn claims_by_id(&self) -> BTreeMap<&str, &Claim> {
        self.claims.iter().map(|c| (c.claim_id.as_str(), c)).collect()
    }

    /// Doc ids each gold statement cites, resolved through the current order.
    pub fn cited_doc_ids(&self) -> Vec<BTreeSet<String>> {
        self.gold_response
            .statements
            .iter()
            .map(|s| {
                s.citations
                    .iter()
                    .filter_map(|k| self.documents.get(*k))
                    .map(|d| d.doc_id.clone())
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisParams {
    pub group_size_min: usize,
    pub group_size_max: usize,
    pub distractors_k: usize,
    pub sampling: SamplingParams,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            group_size_min: 2,
            group_size_max: 3,
            distractors_k: 2,
            sampling: SamplingParams::default(),
        }
    }
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.group_size_min == 0 || self.group_size_min > self.group_size_max {
            return Err(SynthesisError::InvalidParams(format!(
                "group size range ({}, {}) must satisfy 1 <= min <= max",
                self.group_size_min, self.group_size_max
            )));
        }
        Ok(())
    }
}

/// Closed-book answer split into statement texts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedBookResponse {
    pub statements: Vec<String>,
    /// Statement count before truncation, when truncation happened.
    pub truncated_from: Option<usize>,
}

impl ClosedBookResponse {
    pub fn text(&self) -> String {
        self.statements.join(" ")
    }
}

pub struct Synthesizer<'a> {
    generator: &'a dyn TextGenerator,
    prompts: &'a PromptSet,
    params: SynthesisParams,
    global_seed: u64,
}

impl<'a> Synthesizer<'a> {
    pub fn new(
        generator: &'a dyn TextGenerator,
        prompts: &'a PromptSet,
        params: SynthesisParams,
        global_seed: u64,
    ) -> Self {
        Self {
            generator,
            prompts,
            params,
            global_seed,
        }
    }

    fn generate_one(&self, prompt: String, key: &[&str], stage: &'static str) -> Result<String, SynthesisError> {
        let seed = seed::derive(self.global_seed, key);
        let mut texts = self.generator.generate(&self.params.sampling.request(prompt, 1, seed))?;
        let text = texts.pop().unwrap_or_default();
        if text.trim().is_empty() {
            return Err(SynthesisError::EmptyGeneration { stage });
        }
        Ok(text)
    }

    /// Step 1: answer from parametric knowledge, capped at five statements.
    pub fn generate_closed_book_response(
        &self,
        query: &Query,
    ) -> Result<ClosedBookResponse, SynthesisError> {
        let raw = self.generate_one(
            self.prompts.closed_book(&query.query),
            &[&query.query_id, "closed-book"],
            "response generation",
        )?;
        let mut statements: Vec<String> = parse_response(&raw, 0)
            .statements
            .into_iter()
            .map(|s| s.text)
            .collect();
        let truncated_from = (statements.len() > MAX_STATEMENTS).then_some(statements.len());
        statements.truncate(MAX_STATEMENTS);
        Ok(ClosedBookResponse {
            statements,
            truncated_from,
        })
    }

    /// Step 2: one claim per returned line, each aligned to a parent statement.
    pub fn decompose_claims(
        &self,
        query_id: &str,
        response: &ClosedBookResponse,
    ) -> Result<Vec<Claim>, SynthesisError> {
        let text = response.text();
        if text.trim().is_empty() {
            return Err(SynthesisError::EmptyGeneration {
                stage: "claim decomposition",
            });
        }
        let seed = seed::derive(self.global_seed, &[query_id, "decompose"]);
        let out = self
            .generator
            .generate(&self.params.sampling.request(self.prompts.decomposition(&text), 1, seed))?
            .pop()
            .unwrap_or_default();
        let claims: Vec<Claim> = parse_claim_lines(&out)
            .into_iter()
            .enumerate()
            .map(|(i, text)| Claim {
                claim_id: format!("{query_id}-c{i}"),
                parent_statement_idx: align_to_statement(&text, &response.statements),
                text,
            })
            .collect();
        if claims.is_empty() {
            return Err(SynthesisError::DecompositionEmpty);
        }
        Ok(claims)
    }

    /// Step 4: one synthetic document for a claim set.
    pub fn generate_document(
        &self,
        query_id: &str,
        set: &ClaimSet,
        claims_by_id: &BTreeMap<&str, &Claim>,
        doc_id: String,
    ) -> Result<(Document, bool), SynthesisError> {
        let texts: Vec<&str> = set
            .claim_ids
            .iter()
            .filter_map(|id| claims_by_id.get(id.as_str()).map(|c| c.text.as_str()))
            .collect();
        let raw = self.generate_one(
            self.prompts.document(&texts),
            &[query_id, "document", &set.set_id],
            "document generation",
        )?;
        let (title, body, degenerate) = split_title(&raw);
        let doc = Document::new(doc_id, title, body)
            .with_origin(DocOrigin::Synthesized)
            .with_source_query(query_id);
        Ok((doc, degenerate))
    }

    /// Steps 1 to 5 for one query, without distractors.
    pub fn synthesize(&self, query: &Query) -> Result<SyntheticExample, SynthesisError> {
        self.params.validate()?;
        let response = self.generate_closed_book_response(query)?;
        if response.statements.is_empty() {
            return Err(SynthesisError::EmptyGeneration {
                stage: "response generation",
            });
        }
        let mut flags = Vec::new();
        if let Some(n) = response.truncated_from {
            flags.push(ExampleFlag::Truncated {
                original_statements: n,
            });
        }
        let claims = self.decompose_claims(&query.query_id, &response)?;
        let claim_sets = combine_claims(
            &query.query_id,
            &claims,
            (self.params.group_size_min, self.params.group_size_max),
            seed::derive(self.global_seed, &[&query.query_id, "combine"]),
        );
        let claims_by_id: BTreeMap<&str, &Claim> =
            claims.iter().map(|c| (c.claim_id.as_str(), c)).collect();

        let mut docs = Vec::with_capacity(claim_sets.len());
        let mut doc_for_set = BTreeMap::new();
        for (j, set) in claim_sets.iter().enumerate() {
            let doc_id = format!("{}-d{j}", query.query_id);
            let (doc, degenerate) =
                self.generate_document(&query.query_id, set, &claims_by_id, doc_id.clone())?;
            if degenerate {
                flags.push(ExampleFlag::SingleLineDocument {
                    doc_id: doc_id.clone(),
                });
            }
            doc_for_set.insert(set.set_id.clone(), doc_id);
            docs.push(doc);
        }
        let documents = DocumentSet::new(docs).map_err(|e| SynthesisError::InvalidParams(e.to_string()))?;
        let relabeled = relabel_citations(&response.statements, &claims, &claim_sets, &doc_for_set, &documents);
        flags.extend(
            relabeled
                .uncovered
                .iter()
                .map(|&statement_idx| ExampleFlag::UncoveredStatement { statement_idx }),
        );
        let relevant_doc_ids = documents.iter().map(|d| d.doc_id.clone()).collect();
        flags.sort();
        Ok(SyntheticExample {
            query_id: query.query_id.clone(),
            query: query.query.clone(),
            documents,
            gold_response: relabeled.response,
            claims,
            claim_sets,
            doc_for_set,
            relevant_doc_ids,
            flags,
        })
    }

    /// Synthesizes every query on the current rayon pool, then injects
    /// distractors drawn from the other queries' documents. Output order
    /// follows input order.
    pub fn synthesize_all(&self, queries: &[Query]) -> Vec<Result<SyntheticExample, SynthesisError>> {
        let base: Vec<Result<SyntheticExample, SynthesisError>> =
            queries.par_iter().map(|q| self.synthesize(q)).collect();
        let mut pool: Vec<&Document> = base
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .flat_map(|ex| ex.documents.iter())
            .collect();
        pool.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        base.par_iter()
            .map(|r| {
                let ex = r.as_ref().map_err(Clone::clone)?;
                let others: Vec<&Document> = pool
                    .iter()
                    .copied()
                    .filter(|d| d.source_query_id.as_deref() != Some(ex.query_id.as_str()))
                    .collect();
                inject_distractors(
                    ex,
                    &others,
                    self.params.distractors_k,
                    seed::derive(self.global_seed, &[&ex.query_id, "distractors"]),
                )
            })
            .collect()
    }
}

fn parse_claim_lines(output: &str) -> Vec<String> {
    output
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(['-', '*', '\u{2022}']).trim_start();
            // "1." / "2)" enumerations
            let digits = l.chars().take_while(char::is_ascii_digit).count();
            if digits > 0 && l[digits..].starts_with(['.', ')']) {
                l[digits + 1..].trim()
            } else {
                l
            }
        })
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Index of the statement sharing the most content words with `claim`;
/// ties go to the earliest statement.
pub fn align_to_statement(claim: &str, statements: &[String]) -> usize {
    let words = content_word_set(claim);
    let mut best = (0, 0);
    for (i, st) in statements.iter().enumerate() {
        let overlap = content_word_set(st).intersection(&words).count();
        if overlap > best.1 {
            best = (i, overlap);
        }
    }
    best.0
}

/// Step 3: seeded random partition of the claims into sets whose sizes fall
/// in `range`; the final set takes whatever remains and may be smaller.
pub fn combine_claims(
    query_id: &str,
    claims: &[Claim],
    range: (usize, usize),
    rng_seed: u64,
) -> Vec<ClaimSet> {
    let (min, max) = (range.0.max(1), range.1.max(range.0.max(1)));
    let mut rng = seed::rng(rng_seed);
    let mut order: Vec<usize> = (0..claims.len()).collect();
    order.shuffle(&mut rng);
    let mut sets = Vec::new();
    let mut rest = order.as_slice();
    while !rest.is_empty() {
        let size = rng.random_range(min..=max).min(rest.len());
        let (chunk, tail) = rest.split_at(size);
        let mut members = chunk.to_vec();
        members.sort_unstable();
        sets.push(ClaimSet {
            set_id: format!("{query_id}-s{}", sets.len()),
            claim_ids: members.iter().map(|&i| claims[i].claim_id.clone()).collect(),
        });
        rest = tail;
    }
    sets
}

/// First non-empty line is the title (a leading `Title:` is dropped); the
/// rest is the body. A single line serves as both and is reported degenerate.
fn split_title(raw: &str) -> (String, String, bool) {
    let mut lines = raw.lines().map(str::trim).skip_while(|l| l.is_empty());
    let first = lines.next().unwrap_or_default();
    let title = first
        .strip_prefix("Title:")
        .map(str::trim)
        .unwrap_or(first)
        .trim_matches(|c| c == '#' || c == '*')
        .trim()
        .to_string();
    let body = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    if body.is_empty() {
        (title.clone(), title, true)
    } else {
        (title, body, false)
    }
}

pub struct Relabeled {
    pub response: AttributedResponse,
    /// Statements with no claims traced back to them.
    pub uncovered: Vec<usize>,
}

/// Step 5: statement `s` cites every document whose claim set holds a claim
/// with parent `s`, in ascending index order of `documents`.
pub fn relabel_citations(
    statements: &[String],
    claims: &[Claim],
    claim_sets: &[ClaimSet],
    doc_for_set: &BTreeMap<String, String>,
    documents: &DocumentSet,
) -> Relabeled {
    let parent: BTreeMap<&str, usize> = claims
        .iter()
        .map(|c| (c.claim_id.as_str(), c.parent_statement_idx))
        .collect();
    let mut cites: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); statements.len()];
    let mut has_claim = vec![false; statements.len()];
    for set in claim_sets {
        let Some(k) = doc_for_set.get(&set.set_id).and_then(|id| documents.index_of(id)) else {
            continue;
        };
        for cid in &set.claim_ids {
            if let Some(&p) = parent.get(cid.as_str()) {
                if p < statements.len() {
                    cites[p].insert(k);
                    has_claim[p] = true;
                }
            }
        }
    }
    let uncovered = (0..statements.len()).filter(|&i| !has_claim[i]).collect();
    let response = AttributedResponse::from_statements(
        statements
            .iter()
            .zip(cites)
            .map(|(text, c)| Statement::new(text.clone(), c))
            .collect(),
    );
    Relabeled { response, uncovered }
}

/// Appends `k` distractors sampled uniformly without replacement from `pool`,
/// shuffles the whole document order and re-indexes the gold citations so
/// each statement still cites the same doc ids.
pub fn inject_distractors(
    example: &SyntheticExample,
    pool: &[&Document],
    k: usize,
    rng_seed: u64,
) -> Result<SyntheticExample, SynthesisError> {
    if let Some(d) = pool
        .iter()
        .find(|d| d.source_query_id.as_deref() == Some(example.query_id.as_str()))
    {
        return Err(SynthesisError::ForeignPoolViolation {
            doc_id: d.doc_id.clone(),
        });
    }
    if pool.len() < k {
        return Err(SynthesisError::PoolTooSmall {
            need: k,
            have: pool.len(),
        });
    }
    let mut rng = seed::rng(rng_seed);
    let cited = example.cited_doc_ids();
    let mut docs: Vec<Document> = example.documents.as_slice().to_vec();
    let mut picks: Vec<usize> = index::sample(&mut rng, pool.len(), k).into_vec();
    picks.sort_unstable();
    docs.extend(picks.into_iter().map(|i| {
        let mut d = pool[i].clone();
        d.origin = DocOrigin::Distractor;
        d
    }));
    docs.shuffle(&mut rng);
    let documents = DocumentSet::new(docs).map_err(|e| SynthesisError::InvalidParams(e.to_string()))?;

    let statements = example
        .gold_response
        .statements
        .iter()
        .zip(&cited)
        .map(|(st, ids)| {
            Statement::new(
                st.text.clone(),
                ids.iter().filter_map(|id| documents.index_of(id)),
            )
        })
        .collect();
    Ok(SyntheticExample {
        documents,
        gold_response: AttributedResponse::from_statements(statements),
        ..example.clone()
    })
}

/// Seeded sample of `ceil(fraction * N)` flag-free examples as SFT records,
/// kept in input order.
pub fn build_warmup_dataset(
    examples: &[SyntheticExample],
    fraction: f64,
    rng_seed: u64,
    prompts: &PromptSet,
) -> Result<Vec<SftRecord>, SynthesisError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SynthesisError::InvalidParams(format!(
            "warm-up fraction must be in (0, 1], got {fraction}"
        )));
    }
    let eligible: Vec<&SyntheticExample> = examples.iter().filter(|e| e.is_flag_free()).collect();
    let take = sample_size(eligible.len(), fraction);
    let mut rng = seed::rng(rng_seed);
    let mut picks = index::sample(&mut rng, eligible.len(), take).into_vec();
    picks.sort_unstable();
    Ok(picks
        .into_iter()
        .map(|i| {
            let ex = eligible[i];
            SftRecord {
                prompt: prompts.attribution(&ex.query, &ex.documents),
                response: ex.gold_response.render(),
                meta: SftMeta {
                    query_id: ex.query_id.clone(),
                    source: SftSource::Warmup,
                    iteration: None,
                    candidate_id: None,
                    train_epochs: WARMUP_EPOCHS,
                },
            }
        })
        .collect())
}

/// `ceil(fraction * n)`, tolerant of representation error in `fraction`.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockConfig};

    fn claims(n: usize) -> Vec<Claim> {
        (0..n)
            .map(|i| Claim {
                claim_id: format!("q-c{i}"),
                text: format!("claim {i}"),
                parent_statement_idx: 0,
            })
            .collect()
    }

    #[test]
    fn combine_partitions_exactly() {
        let cs = claims(6);
        let sets = combine_claims("q", &cs, (2, 2), 11);
        assert_eq!(sets.len(), 3);
        let mut all: Vec<&String> = sets.iter().flat_map(|s| &s.claim_ids).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn combine_remainder_set_is_smaller() {
        let sets = combine_claims("q", &claims(5), (2, 2), 3);
        let sizes: Vec<usize> = sets.iter().map(|s| s.claim_ids.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn combine_is_deterministic() {
        let cs = claims(9);
        assert_eq!(combine_claims("q", &cs, (2, 3), 5), combine_claims("q", &cs, (2, 3), 5));
    }

    #[test]
    fn claim_lines_drop_bullets_and_numbering() {
        let parsed = parse_claim_lines("- one\n* two\n\n3. three\n4) four\nfive");
        assert_eq!(parsed, vec!["one", "two", "three", "four", "five"]);
    }

    #[test]
    fn copied_claim_aligns_to_its_statement() {
        let statements: Vec<String> = [
            "Kelp forests grow in cold water.",
            "Sea otters eat urchins.",
            "Urchins graze kelp holdfasts.",
            "Storms uproot large stands.",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        // Oracle: the claim is a verbatim copy of statements[2].
        let claim = "Urchins graze kelp holdfasts.";
        let oracle = statements.iter().position(|s| s.contains(claim)).unwrap();
        assert_eq!(align_to_statement(claim, &statements), oracle);
        // Tie between statements 0 and 2 on "kelp" goes to the earlier one.
        assert_eq!(align_to_statement("kelp", &statements), 0);
    }

    #[test]
    fn title_split() {
        assert_eq!(
            split_title("Title X\nBody covering claims."),
            ("Title X".into(), "Body covering claims.".into(), false)
        );
        assert_eq!(
            split_title("Title: Y\n\nBody."),
            ("Y".into(), "Body.".into(), false)
        );
        assert_eq!(
            split_title("Only one line"),
            ("Only one line".into(), "Only one line".into(), true)
        );
    }

    #[test]
    fn sample_size_rounds_up() {
        assert_eq!(sample_size(5000, 0.2), 1000);
        assert_eq!(sample_size(50, 0.2), 10);
        assert_eq!(sample_size(10, 0.7), 7);
        assert_eq!(sample_size(7, 0.5), 4);
        assert_eq!(sample_size(3, 1.0), 3);
    }

    fn synth_one(mock: &MockBackend, query: &str) -> Result<SyntheticExample, SynthesisError> {
        let prompts = PromptSet::default();
        let s = Synthesizer::new(mock, &prompts, SynthesisParams::default(), 1);
        s.synthesize(&Query {
            query_id: "q1".into(),
            query: query.into(),
        })
    }

    #[test]
    fn blank_generation_is_an_error() {
        let prompts = PromptSet::default();
        let mock = MockBackend::new(MockConfig::default())
            .with_response(prompts.closed_book("Why?"), vec!["   ".into()]);
        assert_eq!(
            synth_one(&mock, "Why?").unwrap_err(),
            SynthesisError::EmptyGeneration {
                stage: "response generation"
            }
        );
    }

    #[test]
    fn empty_decomposition_is_an_error() {
        let prompts = PromptSet::default();
        let answer = "Kelp grows fast.";
        let mock = MockBackend::new(MockConfig::default())
            .with_response(prompts.closed_book("Kelp?"), vec![answer.into()])
            .with_response(prompts.decomposition(answer), vec!["\n \n".into()]);
        assert_eq!(synth_one(&mock, "Kelp?").unwrap_err(), SynthesisError::DecompositionEmpty);
    }

    #[test]
    fn long_answers_are_truncated_to_five_statements() {
        let prompts = PromptSet::default();
        let answer = "One a. Two b. Three c. Four d. Five e. Six f. Seven g.";
        let mock = MockBackend::new(MockConfig::default())
            .with_response(prompts.closed_book("Count?"), vec![answer.into()]);
        let s = Synthesizer::new(&mock, &prompts, SynthesisParams::default(), 1);
        let r = s
            .generate_closed_book_response(&Query {
                query_id: "q".into(),
                query: "Count?".into(),
            })
            .unwrap();
        assert_eq!(r.statements.len(), 5);
        assert_eq!(r.truncated_from, Some(7));
    }

    #[test]
    fn mock_synthesis_is_consistent() {
        let mock = MockBackend::new(MockConfig::default());
        let ex = synth_one(&mock, "Tell me about glaciers").unwrap();
        assert!(ex.is_flag_free(), "{:?}", ex.flags);
        assert_eq!(ex.gold_response.statements.len(), 4);
        assert_eq!(ex.claims.len(), 8);
        assert!(ex.gold_response.statements.iter().all(|s| !s.citations.is_empty()));
        // Every synthesized document is cited by some statement.
        let cited: BTreeSet<u32> = ex
            .gold_response
            .statements
            .iter()
            .flat_map(|s| s.citations.iter().copied())
            .collect();
        assert_eq!(cited.len(), ex.documents.len());
    }

    #[test]
    fn single_line_documents_are_flagged() {
        let prompts = PromptSet::default();
        let answer = "Kelp grows fast.";
        let mock = MockBackend::new(MockConfig::default())
            .with_response(prompts.closed_book("Kelp?"), vec![answer.into()])
            .with_response(prompts.decomposition(answer), vec!["- Kelp grows fast.".into()])
            .with_response(prompts.document(&["Kelp grows fast."]), vec!["Kelp grows fast.".into()]);
        let ex = synth_one(&mock, "Kelp?").unwrap();
        assert_eq!(ex.documents.get(1).unwrap().title, ex.documents.get(1).unwrap().body);
        assert!(!ex.is_flag_free());
        assert!(ex.flags.contains(&ExampleFlag::SingleLineDocument { doc_id: "q1-d0".into() }));
    }

    #[test]
    fn warmup_fraction_validated() {
        assert!(build_warmup_dataset(&[], 0.0, 1, &PromptSet::default()).is_err());
        assert!(build_warmup_dataset(&[], 1.5, 1, &PromptSet::default()).is_err());
    }
}
