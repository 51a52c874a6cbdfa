//! Scores predictions against gold answers and evidence documents.
//!
//! Input is JSONL `{"query_id", "response", "docs", "gold"}`. With a separate
//! gold file, predictions carry only `query_id` and `response`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use attrforge_core::citation::{AttributedResponse, Document, DocumentSet};
use attrforge_core::gateway::{EntailmentJudge, GatewayError};
use attrforge_core::metrics::{citation_f1, correctness, evaluate_citations, CorrectnessSpec, MetricsError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{counter, Session, StageOutcome};
use crate::error::{CliError, Result};
use crate::workspace::read_jsonl;

pub const STAGE: &str = "eval";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Adapter {
    /// Gold `{"answers": [...]}`; exact-match recall.
    Asqa,
    /// Gold `{"claims": [...]}`; claim recall.
    Eli5,
    /// Gold `{"answer": true | false | "yes" | "no"}`; yes/no accuracy.
    Strategyqa,
    /// Gold is a tagged spec with a `mode` field.
    Generic,
}

impl Adapter {
    pub fn name(self) -> &'static str {
        match self {
            Self::Asqa => "asqa",
            Self::Eli5 => "eli5",
            Self::Strategyqa => "strategyqa",
            Self::Generic => "generic",
        }
    }

    pub fn spec(self, gold: &serde_json::Value) -> std::result::Result<CorrectnessSpec, String> {
        #[derive(Deserialize)]
        struct Answers {
            answers: Vec<String>,
        }
        #[derive(Deserialize)]
        struct Claims {
            claims: Vec<String>,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum YesNo {
            Bool(bool),
            Text(String),
        }
        #[derive(Deserialize)]
        struct Answer {
            answer: YesNo,
        }
        let err = |e: serde_json::Error| e.to_string();
        let spec = match self {
            Self::Asqa => CorrectnessSpec::EmRecall {
                answers: Answers::deserialize(gold).map_err(err)?.answers,
            },
            Self::Eli5 => CorrectnessSpec::ClaimRecall {
                claims: Claims::deserialize(gold).map_err(err)?.claims,
            },
            Self::Strategyqa => {
                let answer = match Answer::deserialize(gold).map_err(err)?.answer {
                    YesNo::Bool(b) => b,
                    YesNo::Text(t) => match t.trim().to_lowercase().as_str() {
                        "yes" | "true" => true,
                        "no" | "false" => false,
                        other => return Err(format!("yes/no answer expected, got {other:?}")),
                    },
                };
                CorrectnessSpec::YesnoAccuracy { answer }
            }
            Self::Generic => CorrectnessSpec::deserialize(gold).map_err(err)?,
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct EvalDoc {
    #[serde(default)]
    pub doc_id: Option<String>,
    #[serde(default)]
    pub title: String,
    #[serde(alias = "body")]
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
struct InputLine {
    query_id: String,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    docs: Option<Vec<EvalDoc>>,
    #[serde(default)]
    gold: Option<serde_json::Value>,
}

struct EvalItem {
    query_id: String,
    response: String,
    docs: DocumentSet,
    spec: CorrectnessSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleEval {
    pub query_id: String,
    pub correctness: f64,
    pub citation_recall: f64,
    pub citation_precision: f64,
    pub citation_f1: f64,
    pub n_statements: usize,
    pub n_citations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub adapter: Adapter,
    /// Averaging convention for the aggregate numbers.
    pub averaging: String,
    pub n_examples: usize,
    pub correctness: f64,
    pub citation_recall: f64,
    pub citation_precision: f64,
    /// Harmonic mean of the averaged precision and recall.
    pub citation_f1: f64,
    pub examples: Vec<ExampleEval>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "adapter: {} ({} examples, {})", self.adapter.name(), self.n_examples, self.averaging);
        let _ = writeln!(out, "{:<12} {:>13} {:>7} {:>7}", "Correctness", "Citation Rec.", "Prec.", "F1");
        let _ = writeln!(
            out,
            "{:<12.1} {:>13.1} {:>7.1} {:>7.1}",
            self.correctness * 100.0,
            self.citation_recall * 100.0,
            self.citation_precision * 100.0,
            self.citation_f1 * 100.0
        );
        out
    }
}

fn build_docs(query_id: &str, docs: Vec<EvalDoc>) -> Result<DocumentSet> {
    let docs = docs
        .into_iter()
        .enumerate()
        .map(|(i, d)| Document::new(d.doc_id.unwrap_or_else(|| format!("{query_id}#{}", i + 1)), d.title, d.text))
        .collect();
    DocumentSet::new(docs).map_err(|e| CliError::Validation(format!("query {query_id}: {e}")))
}

fn load_items(predictions: &Path, gold: Option<&Path>, adapter: Adapter) -> Result<Vec<EvalItem>> {
    let preds: Vec<InputLine> = read_jsonl(predictions)?;
    let golds: Option<Vec<InputLine>> = gold.map(read_jsonl).transpose()?;
    let line_err = |path: &Path, qid: &str, what: &str| {
        CliError::Validation(format!("{}: query {qid}: {what}", path.display()))
    };
    let mut by_id: BTreeMap<String, InputLine> = BTreeMap::new();
    for p in preds {
        if by_id.contains_key(&p.query_id) {
            return Err(line_err(predictions, &p.query_id, "duplicate query_id"));
        }
        by_id.insert(p.query_id.clone(), p);
    }
    let merged: Vec<(InputLine, InputLine)> = match golds {
        Some(golds) => {
            let gold_path = gold.expect("gold path present");
            let missing: Vec<&str> = golds
                .iter()
                .filter(|g| !by_id.contains_key(&g.query_id))
                .map(|g| g.query_id.as_str())
                .collect();
            if !missing.is_empty() {
                return Err(CliError::Validation(format!(
                    "{}: missing predictions for query ids: {}",
                    predictions.display(),
                    missing.join(", ")
                )));
            }
            let gold_ids: BTreeSet<&str> = golds.iter().map(|g| g.query_id.as_str()).collect();
            if let Some(extra) = by_id.keys().find(|k| !gold_ids.contains(k.as_str())) {
                return Err(line_err(gold_path, extra, "prediction has no gold record"));
            }
            golds
                .into_iter()
                .map(|g| {
                    let p = by_id.remove(&g.query_id).expect("checked above");
                    (p, g)
                })
                .collect()
        }
        None => by_id.into_values().map(|p| (p.clone(), p)).collect(),
    };
    if merged.is_empty() {
        return Err(CliError::Validation(format!("{}: no predictions", predictions.display())));
    }
    let gold_path = gold.unwrap_or(predictions);
    merged
        .into_iter()
        .map(|(p, g)| {
            let qid = p.query_id.clone();
            let response = p.response.ok_or_else(|| line_err(predictions, &qid, "missing \"response\""))?;
            let docs = g.docs.or(p.docs).ok_or_else(|| line_err(gold_path, &qid, "missing \"docs\""))?;
            let gold = g.gold.ok_or_else(|| line_err(gold_path, &qid, "missing \"gold\""))?;
            let spec = adapter.spec(&gold).map_err(|e| line_err(gold_path, &qid, &e))?;
            Ok(EvalItem {
                docs: build_docs(&qid, docs)?,
                query_id: qid,
                response,
                spec,
            })
        })
        .collect()
}

fn evaluate_item(item: &EvalItem, judge: &dyn EntailmentJudge, s: &Session) -> std::result::Result<ExampleEval, MetricsError> {
    let parsed = AttributedResponse::parse(&item.response, item.docs.len());
    let cit = evaluate_citations(&parsed, &item.docs, judge, &s.cfg.eval)?;
    let corr = correctness(&item.response, &item.spec, Some(judge))?;
    Ok(ExampleEval {
        query_id: item.query_id.clone(),
        correctness: corr,
        citation_recall: cit.recall,
        citation_precision: cit.precision,
        citation_f1: cit.f1,
        n_statements: parsed.statements.len(),
        n_citations: cit.per_statement.iter().map(|st| st.n_citations).sum(),
    })
}

pub fn summarize(adapter: Adapter, examples: Vec<ExampleEval>) -> EvalReport {
    let n = examples.len().max(1) as f64;
    let avg = |f: fn(&ExampleEval) -> f64| examples.iter().map(f).sum::<f64>() / n;
    let recall = avg(|e| e.citation_recall);
    let precision = avg(|e| e.citation_precision);
    EvalReport {
        adapter,
        averaging: "macro over examples".into(),
        n_examples: examples.len(),
        correctness: avg(|e| e.correctness),
        citation_recall: recall,
        citation_precision: precision,
        citation_f1: citation_f1(precision, recall),
        examples,
    }
}

pub fn run(s: &Session, adapter: Adapter, predictions: &Path, gold: Option<&Path>) -> Result<(StageOutcome, EvalReport)> {
    let items = load_items(predictions, gold, adapter)?;
    let mut manifest = s.manifest()?;
    let pred_bytes = fs::read(predictions).map_err(|e| CliError::io(predictions, e))?;
    let gold_bytes = match gold {
        Some(g) => fs::read(g).map_err(|e| CliError::io(g, e))?,
        None => Vec::new(),
    };
    let eval_cfg = serde_json::to_vec(&s.cfg.eval).expect("metrics config serializes");
    let inputs = s.inputs_digest(&[adapter.name().as_bytes(), &pred_bytes, &gold_bytes, &eval_cfg]);
    if !s.force && s.ws.is_complete(&manifest, STAGE, &inputs) {
        let report: EvalReport = crate::workspace::read_json(&s.ws.path("eval/report.json"))?;
        return Ok((StageOutcome::skipped(STAGE, &manifest), report));
    }
    let backends = s.cfg.backends(None)?;
    let timer = s.timer();
    let judge = &*backends.judge;
    let results: Vec<_> = items.par_iter().map(|it| evaluate_item(it, judge, s)).collect();
    let mut examples = Vec::with_capacity(items.len());
    for (it, r) in items.iter().zip(results) {
        match r {
            Ok(e) => examples.push(e),
            Err(MetricsError::Judge { source: GatewayError::Transport(m), .. }) => {
                return Err(CliError::Unreachable(format!("query {}: {m}", it.query_id)));
            }
            Err(e) => return Err(CliError::Validation(format!("query {}: {e}", it.query_id))),
        }
    }
    let report = summarize(adapter, examples);
    let counters = BTreeMap::from([
        ("examples".to_string(), counter(report.n_examples)),
        ("correctness".to_string(), counter(report.correctness)),
        ("citation_recall".to_string(), counter(report.citation_recall)),
        ("citation_precision".to_string(), counter(report.citation_precision)),
        ("citation_f1".to_string(), counter(report.citation_f1)),
    ]);
    let mut stage = s.ws.stage(STAGE)?;
    stage.json("report.json", &report)?;
    stage.text("report.txt", &report.table())?;
    stage.commit(&s.ws, &mut manifest, inputs, counters.clone(), timer.elapsed_ms())?;
    Ok((
        StageOutcome {
            stage: STAGE.into(),
            skipped: false,
            counters,
        },
        report,
    ))
}
