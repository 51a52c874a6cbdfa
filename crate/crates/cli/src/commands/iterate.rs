use std::collections::BTreeMap;

use attrforge_core::gateway::{GatewayError, SequenceScorer};
use attrforge_core::preference::{build_pairs, dpo_loss, validate_pairs, Objective, PreferenceError, PreferencePair};
use attrforge_core::rewards::RewardScorer;
use attrforge_core::selection::{
    build_rsft_dataset, rank_and_select, sample_candidates, sampling_seed, score_and_gate, QuerySelection,
    ScoredCandidate, SelectionError, SelectionReport,
};
use attrforge_core::synthesis::SyntheticExample;
use rayon::prelude::*;

use super::synth::load_examples;
use super::{check_partial, counter, FailureRecord, Session, StageOutcome};
use crate::config::RobustScorerRole;
use crate::error::{CliError, Result};

pub const CANDIDATES: &str = "candidates.jsonl";
pub const RSFT: &str = "rsft_sft.jsonl";
pub const DPO_PAIRS: &str = "dpo_pairs.jsonl";
pub const SELECTION_REPORT: &str = "selection_report.json";
pub const DPO_DIAGNOSTICS: &str = "dpo_diagnostics.json";

pub fn stage_name(iteration: u32) -> String {
    format!("iter{iteration}")
}

struct QueryOutcome {
    scored: Vec<ScoredCandidate>,
    top: Option<usize>,
    pairs: Vec<PreferencePair>,
}

fn unreachable(e: &GatewayError) -> bool {
    matches!(e, GatewayError::Transport(_))
}

pub fn run(s: &Session, iteration: u32) -> Result<StageOutcome> {
    if iteration == 0 {
        return Err(CliError::Validation("--iter must be at least 1".into()));
    }
    let stage_name = stage_name(iteration);
    let (all_examples, examples_digest) = load_examples(s)?;
    let mut manifest = s.manifest()?;
    let inputs = s.inputs_digest(&[stage_name.as_bytes(), examples_digest.as_bytes()]);
    if !s.force && s.ws.is_complete(&manifest, &stage_name, &inputs) {
        log::info!("stage {stage_name} is up to date; pass --force to rerun");
        return Ok(StageOutcome::skipped(&stage_name, &manifest));
    }
    let examples: Vec<&SyntheticExample> = all_examples.iter().filter(|e| e.is_flag_free()).collect();
    if examples.is_empty() {
        return Err(CliError::Validation("no flag-free synthetic examples to sample from".into()));
    }
    let backends = s.cfg.backends(Some(iteration))?;
    let timer = s.timer();
    let sel = &s.cfg.selection;
    let robust: &dyn SequenceScorer = match sel.robust_scorer {
        RobustScorerRole::Policy => &*backends.policy_scorer,
        RobustScorerRole::Reference => &*backends.reference_scorer,
    };
    let scorer = RewardScorer {
        judge: &*backends.judge,
        scorer: robust,
        prompts: &s.prompts,
        cfg: sel.rewards,
    };

    let outcomes: Vec<Result<QueryOutcome, SelectionError>> = examples
        .par_iter()
        .map(|ex| {
            let texts = sample_candidates(
                ex,
                sel.n_candidates,
                &sel.sampling,
                &*backends.generator,
                &s.prompts,
                sampling_seed(s.cfg.global_seed, &ex.query_id, iteration),
            )?;
            let mut scored = score_and_gate(&texts, ex, &scorer);
            let top = rank_and_select(&mut scored).map(|t| t.candidate_id.clone());
            let top = top.and_then(|id| scored.iter().position(|c| c.candidate_id == id));
            let pairs = match top {
                Some(t) => build_pairs(
                    &scored,
                    &scored[t],
                    &s.prompts.attribution(&ex.query, ex.documents.iter()),
                    &sel.rewards,
                    s.cfg.preference.max_pairs_per_query,
                    Some(iteration),
                ),
                None => Vec::new(),
            };
            Ok(QueryOutcome { scored, top, pairs })
        })
        .collect();

    let mut candidates = Vec::new();
    let mut selections = Vec::new();
    let mut selected: Vec<(&SyntheticExample, ScoredCandidate)> = Vec::new();
    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for (ex, outcome) in examples.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                if let Some(c) = o.scored.iter().find(|c| c.unreachable) {
                    return Err(CliError::Unreachable(format!(
                        "candidate {}: {}",
                        c.candidate_id,
                        c.error.as_deref().unwrap_or_default()
                    )));
                }
                selections.push(QuerySelection::from_scored(&ex.query_id, &o.scored));
                if let Some(t) = o.top {
                    selected.push((ex, o.scored[t].clone()));
                }
                pairs.extend(o.pairs);
                candidates.extend(o.scored);
            }
            Err(SelectionError::Gateway(e)) if unreachable(&e) => {
                return Err(CliError::Unreachable(format!("query {}: {e}", ex.query_id)));
            }
            Err(e) => failures.push(FailureRecord {
                query_id: ex.query_id.clone(),
                stage: stage_name.clone(),
                error: e.to_string(),
            }),
        }
    }
    if selections.is_empty() {
        return Err(CliError::Partial {
            stage: stage_name,
            failed: failures.len(),
            total: examples.len(),
        });
    }
    let report = SelectionReport::new(iteration, selections).map_err(|e| CliError::Validation(e.to_string()))?;
    let selected_refs: Vec<(&SyntheticExample, &ScoredCandidate)> = selected.iter().map(|(e, c)| (*e, c)).collect();
    let rsft = build_rsft_dataset(&selected_refs, iteration, &s.prompts)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    validate_pairs(&pairs, &sel.rewards).map_err(|e| CliError::Validation(e.to_string()))?;
    let diagnostics = dpo_loss(&pairs, &*backends.policy_scorer, &*backends.reference_scorer, &s.cfg.dpo())
        .map_err(|e| match e {
            PreferenceError::Logprob { ref source, .. } if unreachable(source) => {
                CliError::Unreachable(e.to_string())
            }
            other => CliError::Validation(format!("DPO diagnostics: {other}")),
        })?;

    let by_objective = |o: Objective| pairs.iter().filter(|p| p.objective == o).count();
    let counters = BTreeMap::from([
        ("examples".to_string(), counter(examples.len())),
        ("candidates".to_string(), counter(report.n_sampled)),
        ("passed".to_string(), counter(report.n_passed)),
        ("pass_rate".to_string(), counter(report.pass_rate)),
        (
            "scoring_errors".to_string(),
            counter(candidates.iter().filter(|c| c.error.is_some()).count()),
        ),
        ("failed".to_string(), counter(failures.len())),
        ("rsft_records".to_string(), counter(rsft.len())),
        ("pairs_attributability".to_string(), counter(by_objective(Objective::Attributability))),
        ("pairs_comprehensiveness".to_string(), counter(by_objective(Objective::Comprehensiveness))),
        (
            "dpo_mean_loss".to_string(),
            diagnostics.mean_loss.map_or(serde_json::Value::Null, counter),
        ),
    ]);
    let mut stage = s.ws.stage(&stage_name)?;
    stage.jsonl(CANDIDATES, &candidates)?;
    stage.jsonl(RSFT, &rsft)?;
    stage.jsonl(DPO_PAIRS, &pairs)?;
    stage.json(SELECTION_REPORT, &report)?;
    stage.json(DPO_DIAGNOSTICS, &diagnostics)?;
    stage.jsonl("failures.jsonl", &failures)?;
    stage.commit(&s.ws, &mut manifest, inputs, counters.clone(), timer.elapsed_ms())?;
    log::info!(
        "iteration {iteration}: {} of {} candidates passed ({:.1}%), {} RSFT records, {} pairs",
        report.n_passed,
        report.n_sampled,
        report.pass_rate * 100.0,
        rsft.len(),
        pairs.len()
    );
    check_partial(&s.cfg, &stage_name, failures.len(), examples.len())?;
    Ok(StageOutcome {
        stage: stage_name,
        skipped: false,
        counters,
    })
}
