//! Read-only summary of a workspace manifest.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::workspace::{Manifest, Workspace};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRow {
    pub iteration: u32,
    pub candidates: u64,
    pub passed: u64,
    pub pass_rate: Option<f64>,
    pub rsft_records: u64,
    pub pairs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub run_id: String,
    pub synth: Option<SynthRow>,
    pub iterations: Vec<IterationRow>,
    pub eval: Option<serde_json::Value>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthRow {
    pub examples: u64,
    pub flagged: u64,
    pub failed: u64,
    pub warmup_records: u64,
}

/// Percentage with one decimal, e.g. `42.5%`.
pub fn percent(rate: f64) -> String {
    format!("{:.1}%", rate * 100.0)
}

fn count(counters: &std::collections::BTreeMap<String, serde_json::Value>, key: &str) -> u64 {
    counters.get(key).and_then(serde_json::Value::as_u64).unwrap_or(0)
}

pub fn summarize(ws: &Workspace, m: &Manifest) -> Summary {
    let mut warnings = Vec::new();
    for (name, entry) in &m.stages {
        warnings.extend(ws.verify(entry).into_iter().map(|p| format!("stage {name}: {p}")));
    }
    let synth = m.stages.get("synth").map(|e| SynthRow {
        examples: count(&e.counters, "examples"),
        flagged: count(&e.counters, "flagged"),
        failed: count(&e.counters, "failed"),
        warmup_records: count(&e.counters, "warmup_records"),
    });
    let mut iterations: Vec<IterationRow> = m
        .stages
        .iter()
        .filter_map(|(name, e)| {
            let k = name.strip_prefix("iter")?.parse().ok()?;
            let candidates = count(&e.counters, "candidates");
            let passed = count(&e.counters, "passed");
            Some(IterationRow {
                iteration: k,
                candidates,
                passed,
                pass_rate: (candidates > 0).then(|| passed as f64 / candidates as f64),
                rsft_records: count(&e.counters, "rsft_records"),
                pairs: count(&e.counters, "pairs_attributability") + count(&e.counters, "pairs_comprehensiveness"),
            })
        })
        .collect();
    iterations.sort_by_key(|r| r.iteration);
    Summary {
        run_id: m.run_id.clone(),
        synth,
        iterations,
        eval: m.stages.get("eval").map(|e| serde_json::to_value(&e.counters).expect("counters serialize")),
        warnings,
    }
}

pub fn render(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run {}", s.run_id);
    match &s.synth {
        Some(r) => {
            let _ = writeln!(
                out,
                "synthesis: {} examples ({} flagged, {} failed), {} warm-up records",
                r.examples, r.flagged, r.failed, r.warmup_records
            );
        }
        None => {
            let _ = writeln!(out, "synthesis: not run");
        }
    }
    if !s.iterations.is_empty() {
        let _ = writeln!(
            out,
            "{:<9} {:>10} {:>8} {:>9} {:>6} {:>9}",
            "Iteration", "Candidates", "Passed", "Pass rate", "RSFT", "DPO pairs"
        );
        for r in &s.iterations {
            let _ = writeln!(
                out,
                "{:<9} {:>10} {:>8} {:>9} {:>6} {:>9}",
                r.iteration,
                r.candidates,
                r.passed,
                r.pass_rate.map_or("-".to_string(), percent),
                r.rsft_records,
                r.pairs
            );
        }
    }
    if let Some(e) = &s.eval {
        let get = |k: &str| e.get(k).and_then(serde_json::Value::as_f64).unwrap_or(0.0);
        let _ = writeln!(
            out,
            "eval: correctness {}, citation recall {}, precision {}, F1 {}",
            percent(get("correctness")),
            percent(get("citation_recall")),
            percent(get("citation_precision")),
            percent(get("citation_f1"))
        );
    }
    for w in &s.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

pub fn run(workspace: &std::path::Path) -> Result<Summary> {
    let ws = Workspace::open(workspace)?;
    let m = ws
        .load_manifest()?
        .ok_or_else(|| CliError::Validation(format!("no manifest in {}", workspace.display())))?;
    Ok(summarize(&ws, &m))
}
