//! Rejection sampling: draw candidates, score and gate them, rank the
//! survivors and keep the best one per query.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citation::AttributedResponse;
use crate::dataset::{SftMeta, SftRecord, SftSource, RSFT_EPOCHS};
use crate::gateway::{GatewayError, SamplingParams, TextGenerator};
use crate::prompts::PromptSet;
use crate::rewards::{RewardBreakdown, RewardError, RewardScorer};
use crate::seed;
use crate::synthesis::SyntheticExample;

pub const DEFAULT_N_CANDIDATES: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectionError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("pass rate undefined: no candidates were sampled")]
    NoSamples,
    #[error("query {0} appears more than once")]
    DuplicateQuery(String),
    #[error("candidate {0} did not pass the gates")]
    NotPassed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub query_id: String,
    pub candidate_id: String,
    pub text: String,
    #[serde(skip)]
    pub parsed: AttributedResponse,
    /// Absent when scoring failed.
    #[serde(rename = "scores")]
    pub breakdown: Option<RewardBreakdown>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Scoring failed because a backend could not be reached.
    #[serde(skip)]
    pub unreachable: bool,
}

pub fn candidate_id(query_id: &str, index: usize) -> String {
    format!("{query_id}-k{index:03}")
}

/// `n` generations for the attribution prompt of `example`.
pub fn sample_candidates(
    example: &SyntheticExample,
    n: usize,
    sampling: &SamplingParams,
    generator: &dyn TextGenerator,
    prompts: &PromptSet,
    rng_seed: u64,
) -> Result<Vec<String>, SelectionError> {
    if n == 0 {
        return Err(SelectionError::Precondition("n_candidates must be at least 1".into()));
    }
    let prompt = prompts.attribution(&example.query, example.documents.iter());
    let texts = generator.generate(&sampling.request(prompt, n, rng_seed))?;
    if texts.len() != n {
        return Err(SelectionError::Gateway(GatewayError::backend(format!(
            "asked for {n} samples, got {}",
            texts.len()
        ))));
    }
    Ok(texts)
}

/// Scores every candidate and sets `passed`. A failure on one candidate marks
/// it failed with the error recorded and leaves the others untouched.
pub fn score_and_gate(candidates: &[String], example: &SyntheticExample, scorer: &RewardScorer<'_>) -> Vec<ScoredCandidate> {
    candidates
        .par_iter()
        .enumerate()
        .map(|(i, text)| {
            let id = candidate_id(&example.query_id, i);
            match scorer.score(example, text) {
                Ok((parsed, b)) => ScoredCandidate {
                    query_id: example.query_id.clone(),
                    candidate_id: id,
                    text: text.clone(),
                    parsed,
                    passed: scorer.cfg.attr_passes(b.attr_score) && scorer.cfg.compre_passes(b.compre_score),
                    breakdown: Some(b),
                    rank: None,
                    error: None,
                    unreachable: false,
                },
                Err(e) => failed(example, id, text, &e),
            }
        })
        .collect()
}

fn failed(example: &SyntheticExample, id: String, text: &str, e: &RewardError) -> ScoredCandidate {
    log::warn!("candidate {id} failed scoring: {e}");
    ScoredCandidate {
        query_id: example.query_id.clone(),
        candidate_id: id,
        text: text.to_string(),
        parsed: AttributedResponse::parse(text, example.documents.len()),
        breakdown: None,
        passed: false,
        rank: None,
        error: Some(e.to_string()),
        unreachable: e.gateway().is_some_and(|g| matches!(g, GatewayError::Transport(_))),
    }
}

/// Holistic desc, comprehensiveness desc, `|log robust|` asc, id asc.
pub fn compare_candidates(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    let key = |c: &ScoredCandidate| c.breakdown.map(|b| (b.holistic, b.compre_score, b.robust_log_ratio.abs()));
    match (key(a), key(b)) {
        (Some((ha, ca, ra)), Some((hb, cb, rb))) => hb
            .total_cmp(&ha)
            .then(cb.total_cmp(&ca))
            .then(ra.total_cmp(&rb))
            .then_with(|| a.candidate_id.cmp(&b.candidate_id)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.candidate_id.cmp(&b.candidate_id),
    }
}

/// Assigns 1-based ranks to passed candidates and returns the top one.
pub fn rank_and_select(scored: &mut [ScoredCandidate]) -> Option<&ScoredCandidate> {
    let mut passed: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].passed).collect();
    passed.sort_by(|&a, &b| compare_candidates(&scored[a], &scored[b]));
    for c in scored.iter_mut() {
        c.rank = None;
    }
    for (r, &i) in passed.iter().enumerate() {
        scored[i].rank = Some(r + 1);
    }
    passed.first().map(|&i| &scored[i])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySelection {
    pub query_id: String,
    pub n_sampled: usize,
    pub n_passed: usize,
    pub n_errors: usize,
    pub top_candidate_id: Option<String>,
}

impl QuerySelection {
    pub fn from_scored(query_id: &str, scored: &[ScoredCandidate]) -> Self {
        Self {
            query_id: query_id.to_string(),
            n_sampled: scored.len(),
            n_passed: scored.iter().filter(|c| c.passed).count(),
            n_errors: scored.iter().filter(|c| c.error.is_some()).count(),
            top_candidate_id: scored
                .iter()
                .find(|c| c.rank == Some(1))
                .map(|c| c.candidate_id.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub iteration: u32,
    pub n_sampled: usize,
    pub n_passed: usize,
    pub pass_rate: f64,
    pub queries: Vec<QuerySelection>,
}

impl SelectionReport {
    pub fn new(iteration: u32, mut queries: Vec<QuerySelection>) -> Result<Self, SelectionError> {
        queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        Ok(Self {
            iteration,
            n_sampled: queries.iter().map(|q| q.n_sampled).sum(),
            n_passed: queries.iter().map(|q| q.n_passed).sum(),
            pass_rate: pass_rate(&queries)?,
            queries,
        })
    }
}

/// Micro-averaged passed / sampled.
pub fn pass_rate(queries: &[QuerySelection]) -> Result<f64, SelectionError> {
    let sampled: usize = queries.iter().map(|q| q.n_sampled).sum();
    if sampled == 0 {
        return Err(SelectionError::NoSamples);
    }
    let passed: usize = queries.iter().map(|q| q.n_passed).sum();
    Ok(passed as f64 / sampled as f64)
}

/// One SFT record per selected candidate, prompted exactly as it was sampled.
pub fn build_rsft_dataset(
    selected: &[(&SyntheticExample, &ScoredCandidate)],
    iteration: u32,
    prompts: &PromptSet,
) -> Result<Vec<SftRecord>, SelectionError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(selected.len());
    for (ex, cand) in selected {
        if !seen.insert(cand.query_id.as_str()) {
            return Err(SelectionError::DuplicateQuery(cand.query_id.clone()));
        }
        if cand.query_id != ex.query_id {
            return Err(SelectionError::Precondition(format!(
                "candidate {} paired with example {}",
                cand.candidate_id, ex.query_id
            )));
        }
        if !cand.passed {
            return Err(SelectionError::NotPassed(cand.candidate_id.clone()));
        }
        out.push(SftRecord {
            prompt: prompts.attribution(&ex.query, ex.documents.iter()),
            response: cand.text.clone(),
            meta: SftMeta {
                query_id: ex.query_id.clone(),
                source: SftSource::RejectionSampling,
                iteration: Some(iteration),
                candidate_id: Some(cand.candidate_id.clone()),
                train_epochs: RSFT_EPOCHS,
            },
        });
    }
    Ok(out)
}

/// Per-query seed for candidate sampling at one iteration.
pub fn sampling_seed(global_seed: u64, query_id: &str, iteration: u32) -> u64 {
    seed::derive(global_seed, &[query_id, "sample", &iteration.to_string()])
}
