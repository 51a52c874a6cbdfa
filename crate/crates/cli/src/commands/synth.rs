use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use attrforge_core::seed;
use attrforge_core::synthesis::{build_warmup_dataset, Query, SyntheticExample, Synthesizer};

use super::{check_partial, counter, FailureRecord, Session, StageOutcome};
use crate::error::{CliError, Result};
use crate::workspace::read_jsonl;

pub const STAGE: &str = "synth";
pub const EXAMPLES: &str = "examples.jsonl";
pub const WARMUP: &str = "warmup_sft.jsonl";

pub fn load_queries(s: &Session) -> Result<(Vec<Query>, Vec<u8>)> {
    let path = s.cfg.queries()?;
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let queries: Vec<Query> = read_jsonl(path)?;
    if queries.is_empty() {
        return Err(CliError::Validation(format!("{}: no queries", path.display())));
    }
    let mut seen = BTreeSet::new();
    for q in &queries {
        if q.query_id.trim().is_empty() || q.query.trim().is_empty() {
            return Err(CliError::Validation(format!(
                "{}: query {:?} has an empty id or text",
                path.display(),
                q.query_id
            )));
        }
        if !seen.insert(q.query_id.as_str()) {
            return Err(CliError::Validation(format!(
                "{}: duplicate query_id {}",
                path.display(),
                q.query_id
            )));
        }
    }
    Ok((queries, bytes))
}

pub fn run(s: &Session) -> Result<StageOutcome> {
    let (queries, query_bytes) = load_queries(s)?;
    let mut manifest = s.manifest()?;
    let inputs = s.inputs_digest(&[STAGE.as_bytes(), &query_bytes]);
    if !s.force && s.ws.is_complete(&manifest, STAGE, &inputs) {
        log::info!("stage {STAGE} is up to date; pass --force to rerun");
        return Ok(StageOutcome::skipped(STAGE, &manifest));
    }
    let backends = s.cfg.backends(None)?;
    let timer = s.timer();
    let synth = Synthesizer::new(
        &*backends.generator,
        &s.prompts,
        s.cfg.synthesis.params(),
        s.cfg.global_seed,
    );
    let results = synth.synthesize_all(&queries);

    let mut examples: Vec<SyntheticExample> = Vec::new();
    let mut failures = Vec::new();
    for (q, r) in queries.iter().zip(results) {
        match r {
            Ok(ex) => examples.push(ex),
            Err(e) if e.is_transport() => {
                return Err(CliError::Unreachable(format!("query {}: {e}", q.query_id)));
            }
            Err(e) => failures.push(FailureRecord {
                query_id: q.query_id.clone(),
                stage: STAGE.into(),
                error: e.to_string(),
            }),
        }
    }
    let warmup = build_warmup_dataset(
        &examples,
        s.cfg.synthesis.warmup_fraction,
        seed::derive(s.cfg.global_seed, &["warmup"]),
        &s.prompts,
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;

    let flagged = examples.iter().filter(|e| !e.is_flag_free()).count();
    let counters = BTreeMap::from([
        ("queries".to_string(), counter(queries.len())),
        ("examples".to_string(), counter(examples.len())),
        ("flagged".to_string(), counter(flagged)),
        ("failed".to_string(), counter(failures.len())),
        ("warmup_records".to_string(), counter(warmup.len())),
    ]);
    let mut stage = s.ws.stage(STAGE)?;
    stage.jsonl(EXAMPLES, &examples)?;
    stage.jsonl(WARMUP, &warmup)?;
    stage.jsonl("failures.jsonl", &failures)?;
    stage.commit(&s.ws, &mut manifest, inputs, counters.clone(), timer.elapsed_ms())?;
    log::info!(
        "synthesized {} of {} queries ({flagged} flagged); {} warm-up records",
        examples.len(),
        queries.len(),
        warmup.len()
    );
    check_partial(&s.cfg, STAGE, failures.len(), queries.len())?;
    Ok(StageOutcome {
        stage: STAGE.into(),
        skipped: false,
        counters,
    })
}

/// Synthetic examples from a completed synth stage.
pub fn load_examples(s: &Session) -> Result<(Vec<SyntheticExample>, String)> {
    let manifest = s.manifest()?;
    let entry = manifest
        .stages
        .get(STAGE)
        .ok_or_else(|| CliError::Validation("no synth stage in the workspace; run `synth` first".into()))?;
    let problems = s.ws.verify(entry);
    if !problems.is_empty() {
        return Err(CliError::Validation(format!("synth artifacts changed: {}", problems.join(", "))));
    }
    let art = &entry.artifacts["examples"];
    let examples: Vec<SyntheticExample> = read_jsonl(&s.ws.path(&art.path))?;
    for ex in &examples {
        ex.documents
            .validate()
            .map_err(|e| CliError::Validation(format!("example {}: {e}", ex.query_id)))?;
    }
    Ok((examples, art.sha256.clone()))
}
