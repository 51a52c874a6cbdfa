//! Preference pairs targeting one deficiency each, and DPO objective
//! diagnostics computed over them.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayError, LogprobRequest, SequenceScorer};
use crate::rewards::{RewardBreakdown, RewardConfig};
use crate::selection::ScoredCandidate;

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_MAX_PAIRS_PER_QUERY: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Attributability,
    Comprehensiveness,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreferenceError {
    #[error("pair {index}: chosen and rejected texts are identical")]
    IdenticalTexts { index: usize },
    #[error("pair {index}: rejected scores do not match the {objective:?} pattern")]
    PatternMismatch { index: usize, objective: Objective },
    #[error("pair {index}: chosen response does not pass both gates")]
    ChosenNotPassing { index: usize },
    #[error("pair {index}: empty prompt or response")]
    Empty { index: usize },
    #[error("pair {index}: {source}")]
    Logprob { index: usize, source: GatewayError },
    #[error("pair {index}: missing log-probability for {which}")]
    MissingLogprob { index: usize, which: &'static str },
    #[error("invalid DPO configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub query_id: String,
    pub chosen_id: String,
    pub rejected_id: String,
    pub chosen_scores: RewardBreakdown,
    pub rejected_scores: RewardBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
}

/// One DPO record: `{"prompt", "chosen", "rejected", "objective", "meta"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub objective: Objective,
    pub meta: PairMeta,
}

/// Which pattern, if any, a candidate's scores match.
pub fn classify(b: &RewardBreakdown, cfg: &RewardConfig) -> Option<Objective> {
    match (cfg.attr_passes(b.attr_score), cfg.compre_passes(b.compre_score)) {
        (false, true) => Some(Objective::Attributability),
        (true, false) => Some(Objective::Comprehensiveness),
        _ => None,
    }
}

fn severity(b: &RewardBreakdown, objective: Objective, cfg: &RewardConfig) -> f64 {
    match objective {
        Objective::Attributability => cfg.attr_threshold - b.attr_score,
        Objective::Comprehensiveness => cfg.compre_threshold - b.compre_score,
    }
}

/// Pairs `top` against every candidate deficient in exactly one dimension.
/// Per objective, the `max_pairs_per_query` most severe are kept (ties by
/// candidate id). Rejected texts equal to the chosen text or to an earlier
/// rejected text are skipped.
pub fn build_pairs(
    scored: &[ScoredCandidate],
    top: &ScoredCandidate,
    prompt: &str,
    cfg: &RewardConfig,
    max_pairs_per_query: usize,
    iteration: Option<u32>,
) -> Vec<PreferencePair> {
    let Some(top_scores) = top.breakdown else {
        return Vec::new();
    };
    if !(top.passed && cfg.attr_passes(top_scores.attr_score) && cfg.compre_passes(top_scores.compre_score)) {
        return Vec::new();
    }
    let mut groups: BTreeMap<Objective, Vec<(&ScoredCandidate, RewardBreakdown)>> = BTreeMap::new();
    for c in scored {
        if c.candidate_id == top.candidate_id {
            continue;
        }
        let Some(b) = c.breakdown else { continue };
        if let Some(obj) = classify(&b, cfg) {
            groups.entry(obj).or_default().push((c, b));
        }
    }
    let mut seen_texts: BTreeSet<&str> = BTreeSet::from([top.text.as_str()]);
    let mut pairs = Vec::new();
    for (obj, mut group) in groups {
        group.sort_by(|(ca, ba), (cb, bb)| {
            severity(bb, obj, cfg)
                .total_cmp(&severity(ba, obj, cfg))
                .then_with(|| ca.candidate_id.cmp(&cb.candidate_id))
        });
        let mut kept = 0;
        for (c, b) in group {
            if kept == max_pairs_per_query {
                break;
            }
            if !seen_texts.insert(c.text.as_str()) {
                continue;
            }
            kept += 1;
            pairs.push(PreferencePair {
                prompt: prompt.to_string(),
                chosen: top.text.clone(),
                rejected: c.text.clone(),
                objective: obj,
                meta: PairMeta {
                    query_id: top.query_id.clone(),
                    chosen_id: top.candidate_id.clone(),
                    rejected_id: c.candidate_id.clone(),
                    chosen_scores: top_scores,
                    rejected_scores: b,
                    iteration,
                },
            });
        }
    }
    pairs
}

/// Re-checks a pair against its stored scores.
pub fn validate_pair(index: usize, pair: &PreferencePair, cfg: &RewardConfig) -> Result<(), PreferenceError> {
    if pair.prompt.is_empty() || pair.chosen.trim().is_empty() || pair.rejected.trim().is_empty() {
        return Err(PreferenceError::Empty { index });
    }
    if pair.chosen == pair.rejected {
        return Err(PreferenceError::IdenticalTexts { index });
    }
    let c = &pair.meta.chosen_scores;
    if !(cfg.attr_passes(c.attr_score) && cfg.compre_passes(c.compre_score)) {
        return Err(PreferenceError::ChosenNotPassing { index });
    }
    if classify(&pair.meta.rejected_scores, cfg) != Some(pair.objective) {
        return Err(PreferenceError::PatternMismatch {
            index,
            objective: pair.objective,
        });
    }
    Ok(())
}

pub fn validate_pairs(pairs: &[PreferencePair], cfg: &RewardConfig) -> Result<(), PreferenceError> {
    pairs
        .iter()
        .enumerate()
        .try_for_each(|(i, p)| validate_pair(i, p, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    pub beta: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), PreferenceError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(PreferenceError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// `beta * (log pi_theta(y|x) - log pi_ref(y|x))`.
pub fn dpo_reward(logp_policy: f64, logp_ref: f64, cfg: &DpoConfig) -> f64 {
    cfg.beta * (logp_policy - logp_ref)
}

/// `-log sigmoid(margin)`, stable in both tails.
pub fn neg_log_sigmoid(margin: f64) -> f64 {
    let x = -margin;
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLogprobs {
    pub policy_chosen: f64,
    pub ref_chosen: f64,
    pub policy_rejected: f64,
    pub ref_rejected: f64,
}

impl PairLogprobs {
    pub fn loss(&self, cfg: &DpoConfig) -> f64 {
        let chosen = dpo_reward(self.policy_chosen, self.ref_chosen, cfg);
        let rejected = dpo_reward(self.policy_rejected, self.ref_rejected, cfg);
        neg_log_sigmoid(chosen - rejected)
    }
}

/// Four log-probabilities for one pair, prompt as context.
pub fn pair_logprobs(
    index: usize,
    pair: &PreferencePair,
    policy: &dyn SequenceScorer,
    reference: &dyn SequenceScorer,
) -> Result<PairLogprobs, PreferenceError> {
    let lp = |scorer: &dyn SequenceScorer, y: &str, which: &'static str| {
        let r = scorer
            .logprob(&LogprobRequest::new(pair.prompt.as_str(), y))
            .map_err(|source| PreferenceError::Logprob { index, source })?;
        if r.logprob_sum.is_finite() {
            Ok(r.logprob_sum)
        } else {
            Err(PreferenceError::MissingLogprob { index, which })
        }
    };
    Ok(PairLogprobs {
        policy_chosen: lp(policy, &pair.chosen, "policy/chosen")?,
        ref_chosen: lp(reference, &pair.chosen, "reference/chosen")?,
        policy_rejected: lp(policy, &pair.rejected, "policy/rejected")?,
        ref_rejected: lp(reference, &pair.rejected, "reference/rejected")?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveLoss {
    pub n_pairs: usize,
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoDiagnostics {
    pub beta: f64,
    pub n_pairs: usize,
    /// Absent when there are no pairs.
    pub mean_loss: Option<f64>,
    pub per_objective: BTreeMap<Objective, ObjectiveLoss>,
    pub per_pair: Vec<f64>,
}

pub fn summarize_losses(objectives: &[Objective], losses: Vec<f64>, cfg: &DpoConfig) -> DpoDiagnostics {
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let mut by_obj: BTreeMap<Objective, Vec<f64>> = BTreeMap::new();
    for (o, l) in objectives.iter().zip(&losses) {
        by_obj.entry(*o).or_default().push(*l);
    }
    DpoDiagnostics {
        beta: cfg.beta,
        n_pairs: losses.len(),
        mean_loss: mean(&losses),
        per_objective: by_obj
            .into_iter()
            .map(|(o, ls)| {
                (
                    o,
                    ObjectiveLoss {
                        n_pairs: ls.len(),
                        mean_loss: mean(&ls),
                    },
                )
            })
            .collect(),
        per_pair: losses,
    }
}

/// Mean and per-pair DPO loss for `pairs` under the two scorer roles.
pub fn dpo_loss(
    pairs: &[PreferencePair],
    policy: &dyn SequenceScorer,
    reference: &dyn SequenceScorer,
    cfg: &DpoConfig,
) -> Result<DpoDiagnostics, PreferenceError> {
    cfg.validate()?;
    let losses = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| pair_logprobs(i, p, policy, reference).map(|lp| lp.loss(cfg)))
        .collect::<Result<Vec<f64>, _>>()?;
    let objectives: Vec<Objective> = pairs.iter().map(|p| p.objective).collect();
    Ok(summarize_losses(&objectives, losses, cfg))
}
