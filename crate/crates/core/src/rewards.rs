//! Fine-grained rewards for a candidate response and the gated holistic reward.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citation::{strip_citations, AttributedResponse, Document, DocumentSet};
use crate::gateway::{
    EntailmentJudge, GatewayError, LogprobRequest, SequenceScorer, DEFAULT_MAX_PREMISE_CHARS,
};
use crate::prompts::PromptSet;
use crate::synthesis::{Claim, SyntheticExample};
use crate::text::truncate_head;

/// Tolerance on the attributability gate for rounding in the statement mean.
pub const ATTR_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("judge failed on statement {statement_idx}: {source}")]
    Statement {
        statement_idx: usize,
        source: GatewayError,
    },
    #[error("judge failed on claim {claim_idx}: {source}")]
    Claim { claim_idx: usize, source: GatewayError },
    #[error("scorer failed: {0}")]
    Scorer(GatewayError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl RewardError {
    pub fn gateway(&self) -> Option<&GatewayError> {
        match self {
            Self::Statement { source, .. } | Self::Claim { source, .. } => Some(source),
            Self::Scorer(e) => Some(e),
            Self::Precondition(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustMode {
    /// `compre / robust`.
    #[default]
    Literal,
    /// `compre * exp(-|log robust|)`, peaking at robust = 1.
    DeviationPenalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub attr_threshold: f64,
    pub compre_threshold: f64,
    pub robust_mode: RobustMode,
    pub max_premise_chars: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            attr_threshold: 1.0,
            compre_threshold: 0.8,
            robust_mode: RobustMode::Literal,
            max_premise_chars: DEFAULT_MAX_PREMISE_CHARS,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, v) in [
            ("attr_threshold", self.attr_threshold),
            ("compre_threshold", self.compre_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(RewardError::Precondition(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.max_premise_chars == 0 {
            return Err(RewardError::Precondition("max_premise_chars must be positive".into()));
        }
        Ok(())
    }

    pub fn attr_passes(&self, attr: f64) -> bool {
        attr >= self.attr_threshold - ATTR_EPSILON
    }

    pub fn compre_passes(&self, compre: f64) -> bool {
        compre >= self.compre_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    #[serde(rename = "attr")]
    pub attr_score: f64,
    pub robust_log_ratio: f64,
    #[serde(rename = "robust")]
    pub robust_score: f64,
    #[serde(rename = "compre")]
    pub compre_score: f64,
    pub holistic: f64,
}

impl RewardBreakdown {
    pub fn new(attr_score: f64, robust_log_ratio: f64, compre_score: f64, cfg: &RewardConfig) -> Self {
        let mut b = Self {
            attr_score,
            robust_log_ratio,
            robust_score: robust_log_ratio.exp(),
            compre_score,
            holistic: 0.0,
        };
        b.holistic = holistic_reward(&b, cfg);
        b
    }
}

/// Gated combination of the three rewards. Zero unless attributability
/// reaches the threshold. Positive results are clamped into the finite
/// positive range so extreme log ratios cannot zero out or overflow them.
pub fn holistic_reward(b: &RewardBreakdown, cfg: &RewardConfig) -> f64 {
    if !cfg.attr_passes(b.attr_score) || b.compre_score <= 0.0 {
        return 0.0;
    }
    let raw = match cfg.robust_mode {
        RobustMode::Literal => b.compre_score / b.robust_log_ratio.exp(),
        RobustMode::DeviationPenalty => b.compre_score * (-b.robust_log_ratio.abs()).exp(),
    };
    raw.clamp(f64::MIN_POSITIVE, f64::MAX)
}

/// `Title: ...` plus body per document, joined by blank lines and cut to
/// `max_chars` from the head.
pub fn evidence_premise<'a>(docs: impl IntoIterator<Item = &'a Document>, max_chars: usize) -> String {
    let joined = docs
        .into_iter()
        .map(|d| format!("Title: {}\n{}", d.title, d.body))
        .collect::<Vec<_>>()
        .join("\n\n");
    truncate_head(&joined, max_chars).to_string()
}

/// Fraction of statements entailed by the concatenation of their cited
/// documents. Statements without a resolvable citation, or with no text, score 0.
pub fn attr_score(
    resp: &AttributedResponse,
    docs: &DocumentSet,
    judge: &dyn EntailmentJudge,
    max_premise_chars: usize,
) -> Result<f64, RewardError> {
    if resp.statements.is_empty() {
        return Ok(0.0);
    }
    let hits = resp
        .statements
        .par_iter()
        .enumerate()
        .map(|(i, st)| {
            let cited: Vec<&Document> = st.citations.iter().filter_map(|k| docs.get(*k)).collect();
            if cited.is_empty() || st.text.trim().is_empty() {
                return Ok(0u32);
            }
            let premise = evidence_premise(cited, max_premise_chars);
            judge
                .entail(&premise, &st.text)
                .map(|v| u32::from(v.entailed))
                .map_err(|source| RewardError::Statement {
                    statement_idx: i,
                    source,
                })
        })
        .collect::<Result<Vec<u32>, _>>()?;
    Ok(mean(&hits))
}

/// `log P(y | q with relevant docs) - log P(y | q with all docs)` and its exp.
pub fn robust_score(
    y: &str,
    query: &str,
    docs: &DocumentSet,
    relevant_ids: &BTreeSet<String>,
    scorer: &dyn SequenceScorer,
    prompts: &PromptSet,
) -> Result<(f64, f64), RewardError> {
    if let Some(missing) = relevant_ids.iter().find(|id| docs.index_of(id).is_none()) {
        return Err(RewardError::Precondition(format!(
            "relevant document {missing} is not in the document set"
        )));
    }
    let relevant_ctx = prompts.attribution(query, docs.subset(relevant_ids));
    let full_ctx = prompts.attribution(query, docs.iter());
    let lp = |ctx: String| {
        scorer
            .logprob(&LogprobRequest::new(ctx, y))
            .map(|r| r.logprob_sum)
            .map_err(RewardError::Scorer)
    };
    let (rel, full) = rayon::join(|| lp(relevant_ctx), || lp(full_ctx));
    let log_ratio = rel? - full?;
    Ok((log_ratio, log_ratio.exp()))
}

/// Fraction of gold claims entailed by the citation-stripped candidate.
pub fn compre_score(claims: &[Claim], y: &str, judge: &dyn EntailmentJudge) -> Result<f64, RewardError> {
    if claims.is_empty() {
        return Err(RewardError::Precondition("gold claims must be non-empty".into()));
    }
    let premise = strip_citations(y);
    if premise.trim().is_empty() {
        return Err(RewardError::Precondition("candidate text is empty".into()));
    }
    let hits = claims
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            judge
                .entail(&premise, &c.text)
                .map(|v| u32::from(v.entailed))
                .map_err(|source| RewardError::Claim { claim_idx: i, source })
        })
        .collect::<Result<Vec<u32>, _>>()?;
    Ok(mean(&hits))
}

fn mean(hits: &[u32]) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    hits.iter().map(|&h| f64::from(h)).sum::<f64>() / hits.len() as f64
}

/// Bundles the judge, the scorer and the configuration for scoring candidates.
#[derive(Clone, Copy)]
pub struct RewardScorer<'a> {
    pub judge: &'a dyn EntailmentJudge,
    pub scorer: &'a dyn SequenceScorer,
    pub prompts: &'a PromptSet,
    pub cfg: RewardConfig,
}

impl RewardScorer<'_> {
    pub fn score(&self, example: &SyntheticExample, text: &str) -> Result<(AttributedResponse, RewardBreakdown), RewardError> {
        let parsed = AttributedResponse::parse(text, example.documents.len());
        let attr = attr_score(&parsed, &example.documents, self.judge, self.cfg.max_premise_chars)?;
        let (log_ratio, _) = robust_score(
            text,
            &example.query,
            &example.documents,
            &example.relevant_doc_ids,
            self.scorer,
            self.prompts,
        )?;
        let compre = compre_score(&example.claims, text, self.judge)?;
        Ok((parsed, RewardBreakdown::new(attr, log_ratio, compre, &self.cfg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{EntailmentVerdict, LogprobResult, MockBackend, MockConfig};

    fn docs() -> DocumentSet {
        DocumentSet::new(vec![
            Document::new("a", "Glaciers", "Glaciers carve valleys slowly."),
            Document::new("b", "Rivers", "Rivers deposit silt downstream."),
            Document::new("c", "Winds", "Winds shape dunes."),
        ])
        .unwrap()
    }

    fn claim(text: &str) -> Claim {
        Claim {
            claim_id: text.into(),
            text: text.into(),
            parent_statement_idx: 0,
        }
    }

    #[test]
    fn attr_two_of_three() {
        let judge = MockBackend::new(MockConfig::default());
        let resp = AttributedResponse::parse(
            "Glaciers carve valleys [1]. Rivers deposit silt [2]. Winds melt glaciers [3].",
            3,
        );
        let got = attr_score(&resp, &docs(), &judge, 6000).unwrap();
        // Oracle: statements 0 and 1 are covered word-for-word, statement 2 is not.
        let oracle = 2.0 / 3.0;
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn uncited_and_invalid_statements_score_zero() {
        let judge = MockBackend::new(MockConfig::default());
        let resp = AttributedResponse::parse("Glaciers carve valleys. Rivers deposit silt [7].", 3);
        assert_eq!(attr_score(&resp, &docs(), &judge, 6000).unwrap(), 0.0);
        let resp = AttributedResponse::parse("Glaciers carve valleys [1]. Rivers deposit silt [2].", 3);
        assert_eq!(attr_score(&resp, &docs(), &judge, 6000).unwrap(), 1.0);
    }

    #[test]
    fn compre_three_of_four() {
        let judge = MockBackend::new(MockConfig::default());
        let claims = [
            claim("Glaciers carve valleys."),
            claim("Rivers deposit silt."),
            claim("Winds shape dunes."),
            claim("Volcanoes erupt lava."),
        ];
        let y = "Glaciers carve valleys [1]. Rivers deposit silt [2]. Winds shape dunes [3].";
        assert_eq!(compre_score(&claims, y, &judge).unwrap(), 0.75);
        let all = claims.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" ");
        assert_eq!(compre_score(&claims, &all, &judge).unwrap(), 1.0);
        assert!(matches!(
            compre_score(&claims, " [1] ", &judge),
            Err(RewardError::Precondition(_))
        ));
    }

    struct FixedScorer;
    impl SequenceScorer for FixedScorer {
        fn logprob(&self, req: &LogprobRequest) -> Result<LogprobResult, GatewayError> {
            let sum = if req.context.contains("Winds") { -12.0 } else { -10.0 };
            Ok(LogprobResult {
                logprob_sum: sum,
                token_count: 4,
            })
        }
    }

    #[test]
    fn robust_identity_and_ratio() {
        let prompts = PromptSet::default();
        let mock = MockBackend::new(MockConfig::default());
        let all: BTreeSet<String> = ["a", "b", "c"].map(String::from).into();
        let (lr, ratio) = robust_score("Some answer.", "q", &docs(), &all, &mock, &prompts).unwrap();
        assert_eq!(lr, 0.0);
        assert_eq!(ratio, 1.0);

        let rel: BTreeSet<String> = ["a", "b"].map(String::from).into();
        let (lr, ratio) = robust_score("y", "q", &docs(), &rel, &FixedScorer, &prompts).unwrap();
        assert_eq!(lr, 2.0);
        assert!((ratio - 2f64.exp()).abs() < 1e-12);
        assert!((ratio - 7.3891).abs() < 1e-4);

        let bad: BTreeSet<String> = ["zz".to_string()].into();
        assert!(robust_score("y", "q", &docs(), &bad, &mock, &prompts).is_err());
    }

    #[test]
    fn holistic_examples() {
        let cfg = RewardConfig::default();
        let b = RewardBreakdown::new(0.9, 0.3, 0.95, &cfg);
        assert_eq!(b.holistic, 0.0);
        let b = RewardBreakdown::new(1.0, 2f64.ln(), 0.8, &cfg);
        assert!((b.holistic - 0.4).abs() < 1e-12);
        for mode in [RobustMode::Literal, RobustMode::DeviationPenalty] {
            let cfg = RewardConfig {
                robust_mode: mode,
                ..cfg
            };
            assert_eq!(RewardBreakdown::new(1.0, 0.0, 0.8, &cfg).holistic, 0.8);
        }
    }

    #[test]
    fn holistic_stays_positive_for_extreme_ratios() {
        let cfg = RewardConfig::default();
        for lr in [-1e4, 1e4] {
            let h = RewardBreakdown::new(1.0, lr, 0.5, &cfg).holistic;
            assert!(h > 0.0 && h.is_finite());
        }
    }

    struct FailingJudge;
    impl EntailmentJudge for FailingJudge {
        fn entail(&self, _: &str, _: &str) -> Result<EntailmentVerdict, GatewayError> {
            Err(GatewayError::backend("nli down"))
        }
    }

    #[test]
    fn judge_errors_carry_statement_index() {
        let resp = AttributedResponse::parse("Uncited. Glaciers carve valleys [1].", 3);
        let err = attr_score(&resp, &docs(), &FailingJudge, 6000).unwrap_err();
        assert!(matches!(err, RewardError::Statement { statement_idx: 1, .. }));
    }

    #[test]
    fn premise_format() {
        let d = docs();
        assert_eq!(
            evidence_premise(d.iter().take(2), 6000),
            "Title: Glaciers\nGlaciers carve valleys slowly.\n\nTitle: Rivers\nRivers deposit silt downstream."
        );
        assert_eq!(evidence_premise(d.iter(), 9), "Title: Gl");
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let bad = RewardConfig {
            compre_threshold: 1.2,
            ..RewardConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
