//! Citation recall, precision and F1, plus answer correctness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citation::{strip_citations, AttributedResponse, Document, DocumentSet, Statement};
use crate::gateway::{EntailmentJudge, GatewayError, DEFAULT_MAX_PREMISE_CHARS};
use crate::rewards::evidence_premise;
use crate::text::collapse_whitespace;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("judge failed on statement {statement_idx}: {source}")]
    Judge {
        statement_idx: usize,
        source: GatewayError,
    },
    #[error("invalid correctness spec: {0}")]
    Spec(String),
    #[error("claim recall requires an entailment judge")]
    JudgeRequired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Count citations on statements that fail recall as irrelevant. When
    /// false they are left out of the precision denominator.
    pub penalize_recall_failures: bool,
    pub max_premise_chars: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            penalize_recall_failures: true,
            max_premise_chars: DEFAULT_MAX_PREMISE_CHARS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementEval {
    pub recall_ok: bool,
    /// Markers judged irrelevant, including out-of-range ones.
    pub irrelevant_citations: Vec<u32>,
    pub n_citations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationEval {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub per_statement: Vec<StatementEval>,
}

/// Harmonic mean with `0/0 -> 0`.
pub fn citation_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn entails(
    judge: &dyn EntailmentJudge,
    docs: &[&Document],
    statement: &str,
    max_chars: usize,
) -> Result<bool, GatewayError> {
    if docs.is_empty() {
        return Ok(false);
    }
    judge
        .entail(&evidence_premise(docs.iter().copied(), max_chars), statement)
        .map(|v| v.entailed)
}

fn eval_statement(
    st: &Statement,
    docs: &DocumentSet,
    judge: &dyn EntailmentJudge,
    cfg: &MetricsConfig,
) -> Result<StatementEval, GatewayError> {
    let markers = st.all_markers();
    let cited: Vec<&Document> = st.citations.iter().filter_map(|k| docs.get(*k)).collect();
    let recall_ok = !st.text.trim().is_empty() && entails(judge, &cited, &st.text, cfg.max_premise_chars)?;
    let irrelevant_citations = if !recall_ok {
        if cfg.penalize_recall_failures {
            markers.clone()
        } else {
            Vec::new()
        }
    } else {
        let mut out = st.invalid_citations.clone();
        for (j, &k) in st.citations.iter().enumerate() {
            let alone = entails(judge, &cited[j..=j], &st.text, cfg.max_premise_chars)?;
            if alone {
                continue;
            }
            let rest: Vec<&Document> = cited
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, d)| *d)
                .collect();
            if entails(judge, &rest, &st.text, cfg.max_premise_chars)? {
                out.push(k);
            }
        }
        out.sort_unstable();
        out
    };
    let n_citations = if recall_ok || cfg.penalize_recall_failures {
        markers.len()
    } else {
        0
    };
    Ok(StatementEval {
        recall_ok,
        irrelevant_citations,
        n_citations,
    })
}

/// Recall, precision and F1 for one response in a single pass.
pub fn evaluate_citations(
    resp: &AttributedResponse,
    docs: &DocumentSet,
    judge: &dyn EntailmentJudge,
    cfg: &MetricsConfig,
) -> Result<CitationEval, MetricsError> {
    let per_statement = resp
        .statements
        .par_iter()
        .enumerate()
        .map(|(i, st)| {
            eval_statement(st, docs, judge, cfg).map_err(|source| MetricsError::Judge {
                statement_idx: i,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let recall = if per_statement.is_empty() {
        0.0
    } else {
        per_statement.iter().filter(|s| s.recall_ok).count() as f64 / per_statement.len() as f64
    };
    let total: usize = per_statement.iter().map(|s| s.n_citations).sum();
    let irrelevant: usize = per_statement.iter().map(|s| s.irrelevant_citations.len()).sum();
    let precision = if total == 0 {
        0.0
    } else {
        1.0 - irrelevant as f64 / total as f64
    };
    Ok(CitationEval {
        recall,
        precision,
        f1: citation_f1(precision, recall),
        per_statement,
    })
}

pub fn citation_recall(
    resp: &AttributedResponse,
    docs: &DocumentSet,
    judge: &dyn EntailmentJudge,
    cfg: &MetricsConfig,
) -> Result<f64, MetricsError> {
    evaluate_citations(resp, docs, judge, cfg).map(|e| e.recall)
}

pub fn citation_precision(
    resp: &AttributedResponse,
    docs: &DocumentSet,
    judge: &dyn EntailmentJudge,
    cfg: &MetricsConfig,
) -> Result<f64, MetricsError> {
    evaluate_citations(resp, docs, judge, cfg).map(|e| e.precision)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CorrectnessSpec {
    EmRecall { answers: Vec<String> },
    ClaimRecall { claims: Vec<String> },
    YesnoAccuracy { answer: bool },
}

impl CorrectnessSpec {
    pub fn validate(&self) -> Result<(), MetricsError> {
        match self {
            Self::EmRecall { answers } if answers.iter().all(|a| a.trim().is_empty()) => {
                Err(MetricsError::Spec("em_recall needs at least one gold answer".into()))
            }
            Self::ClaimRecall { claims } if claims.iter().all(|c| c.trim().is_empty()) => {
                Err(MetricsError::Spec("claim_recall needs at least one gold claim".into()))
            }
            _ => Ok(()),
        }
    }
}

fn normalize(text: &str) -> String {
    collapse_whitespace(&text.to_lowercase())
}

/// First alphabetic run, lowercased.
pub fn first_word(text: &str) -> Option<String> {
    let start = text.find(char::is_alphabetic)?;
    let word: String = text[start..]
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect();
    Some(word.to_lowercase())
}

pub fn correctness(
    response: &str,
    spec: &CorrectnessSpec,
    judge: Option<&dyn EntailmentJudge>,
) -> Result<f64, MetricsError> {
    spec.validate()?;
    let text = strip_citations(response);
    let frac = |hits: usize, n: usize| hits as f64 / n as f64;
    match spec {
        CorrectnessSpec::EmRecall { answers } => {
            let hay = normalize(&text);
            let gold: Vec<String> = answers.iter().map(|a| normalize(a)).filter(|a| !a.is_empty()).collect();
            Ok(frac(gold.iter().filter(|a| hay.contains(a.as_str())).count(), gold.len()))
        }
        CorrectnessSpec::ClaimRecall { claims } => {
            let judge = judge.ok_or(MetricsError::JudgeRequired)?;
            let claims: Vec<&String> = claims.iter().filter(|c| !c.trim().is_empty()).collect();
            if text.trim().is_empty() {
                return Ok(0.0);
            }
            let hits = claims
                .par_iter()
                .enumerate()
                .map(|(i, c)| {
                    judge
                        .entail(&text, c)
                        .map(|v| usize::from(v.entailed))
                        .map_err(|source| MetricsError::Judge {
                            statement_idx: i,
                            source,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(frac(hits.iter().sum(), claims.len()))
        }
        CorrectnessSpec::YesnoAccuracy { answer } => {
            let gold = if *answer { "yes" } else { "no" };
            Ok(f64::from(u8::from(first_word(&text).as_deref() == Some(gold))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockConfig};

    fn judge() -> MockBackend {
        MockBackend::new(MockConfig::default())
    }

    fn docs() -> DocumentSet {
        DocumentSet::new(vec![
            Document::new("d1", "Rover", "The rover landed in Gale crater."),
            Document::new("d2", "Budget", "The mission budget was large."),
            Document::new("d3", "Crater", "Gale crater is old."),
        ])
        .unwrap()
    }

    fn eval(raw: &str) -> CitationEval {
        let resp = AttributedResponse::parse(raw, 3);
        evaluate_citations(&resp, &docs(), &judge(), &MetricsConfig::default()).unwrap()
    }

    #[test]
    fn recall_half_when_one_statement_uncited() {
        let e = eval("The rover landed in Gale crater [1]. The budget was large.");
        assert_eq!(e.recall, 0.5);
        assert_eq!(eval("The rover landed [1]. The mission budget was large [2].").recall, 1.0);
        assert_eq!(eval("The rover landed. The budget was large.").recall, 0.0);
    }

    #[test]
    fn redundant_citation_is_irrelevant() {
        let e = eval("The rover landed in Gale crater [1][2].");
        assert!(e.per_statement[0].recall_ok);
        assert_eq!(e.per_statement[0].irrelevant_citations, vec![2]);
        assert_eq!(e.precision, 0.5);
    }

    #[test]
    fn single_sufficient_citation_is_relevant() {
        let e = eval("The rover landed in Gale crater [1].");
        assert_eq!(e.precision, 1.0);
    }

    #[test]
    fn invalid_citation_counts_irrelevant() {
        let e = eval("The rover landed in Gale crater [1][7].");
        assert_eq!(e.per_statement[0].irrelevant_citations, vec![7]);
        assert_eq!(e.precision, 0.5);
    }

    #[test]
    fn jointly_needed_citations_are_both_relevant() {
        let e = eval("The rover landed in Gale crater, which is old [1][3].");
        assert!(e.per_statement[0].recall_ok);
        assert!(e.per_statement[0].irrelevant_citations.is_empty());
    }

    #[test]
    fn recall_failures_toggle() {
        let resp = AttributedResponse::parse("The rover landed [1]. Mars is red [2].", 3);
        let strict = evaluate_citations(&resp, &docs(), &judge(), &MetricsConfig::default()).unwrap();
        assert_eq!(strict.precision, 0.5);
        let lenient = MetricsConfig {
            penalize_recall_failures: false,
            ..MetricsConfig::default()
        };
        let e = evaluate_citations(&resp, &docs(), &judge(), &lenient).unwrap();
        assert_eq!(e.precision, 1.0);
        assert_eq!(e.recall, strict.recall);
    }

    #[test]
    fn f1_cases() {
        assert!((citation_f1(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(citation_f1(0.0, 0.0), 0.0);
        assert!((citation_f1(0.37, 0.37) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn em_recall_substring() {
        let spec = CorrectnessSpec::EmRecall {
            answers: vec!["1966".into(), "Dami Im".into()],
        };
        let r = correctness("The single was released on January 17, 1966 [1].", &spec, None).unwrap();
        assert_eq!(r, 0.5);
        assert!(correctness("x", &CorrectnessSpec::EmRecall { answers: vec![] }, None).is_err());
    }

    #[test]
    fn yes_no_first_word() {
        let spec = CorrectnessSpec::YesnoAccuracy { answer: false };
        assert_eq!(correctness("No. Curiosity outlasted its mission [1].", &spec, None).unwrap(), 1.0);
        assert_eq!(correctness("  \"Yes\", it did.", &spec, None).unwrap(), 0.0);
        assert_eq!(correctness("[2] no way", &spec, None).unwrap(), 1.0);
        assert_eq!(correctness("Nope.", &spec, None).unwrap(), 0.0);
    }

    #[test]
    fn claim_recall_needs_judge() {
        let spec = CorrectnessSpec::ClaimRecall {
            claims: vec!["rover landed".into(), "crater old".into(), "budget large".into()],
        };
        assert_eq!(correctness("t", &spec, None), Err(MetricsError::JudgeRequired));
        let text = "The rover landed near an old crater; the budget was large.";
        assert_eq!(correctness(text, &spec, Some(&judge())).unwrap(), 1.0);
    }
}
