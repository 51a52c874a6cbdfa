use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    prepare_premise, EntailmentJudge, EntailmentVerdict, GatewayError, GenerationRequest,
    LogprobRequest, LogprobResult, SequenceScorer, TextGenerator, DEFAULT_JUDGE_THRESHOLD,
    DEFAULT_MAX_PREMISE_CHARS,
};
use crate::citation::{parse_response, AttributedResponse, Statement};
use crate::seed;
use crate::text::{content_word_set, content_words, whitespace_token_count};

const VOCAB: &[&str] = &[
    "amber", "anchor", "arctic", "aspen", "atlas", "aurora", "basalt", "beacon", "birch",
    "bison", "bramble", "bronze", "canyon", "carbon", "cascade", "cedar", "chalk", "cipher",
    "citadel", "clover", "cobalt", "comet", "copper", "coral", "crater", "crystal", "cypress",
    "delta", "desert", "dune", "ember", "falcon", "fern", "fjord", "flint", "forge", "fossil",
    "garnet", "geyser", "glacier", "granite", "gravel", "harbor", "hazel", "heron", "horizon",
    "indigo", "iris", "ivory", "jade", "jasper", "juniper", "kelp", "lagoon", "lantern",
    "lava", "ledger", "lichen", "linen", "lotus", "lunar", "magnet", "maple", "marble",
    "marsh", "meadow", "meteor", "mica", "mineral", "monsoon", "mosaic", "nebula", "nectar",
    "nickel", "oasis", "obsidian", "ochre", "olive", "onyx", "orbit", "orchid", "osprey",
    "oyster", "paddle", "pebble", "pepper", "pewter", "pigment", "pine", "plasma", "plume",
    "polar", "prairie", "prism", "pulsar", "quarry", "quartz", "quiver", "radar", "rapids",
    "raven", "reef", "ridge", "river", "saffron", "salmon", "sandstone", "sapphire", "savanna",
    "sequoia", "shale", "sierra", "silica", "silver", "slate", "solar", "sparrow", "spruce",
    "steppe", "summit", "tundra", "thistle", "thunder", "timber", "topaz", "tidal", "torrent",
    "trellis", "tulip", "turbine", "umber", "valley", "velvet", "vertex", "violet", "vortex",
    "walnut", "willow", "zenith", "zephyr", "zinc",
];

const FIELD_QUESTION: &str = "Question:";
const FIELD_RESPONSE: &str = "Response:";
const FIELD_CLAIM: &str = "Claim:";
const FIELD_DOCUMENTS: &str = "Documents:";
const YESNO_CUE: &str = "\"yes\" or \"no\"";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Sentences in a closed-book answer.
    pub closed_book_sentences: usize,
    /// Probability that a sampled attributed answer is defect-free.
    pub skill: f64,
    /// Multiplier on the mock log-probability; distinct scales make distinct
    /// policy and reference scorers.
    pub logprob_scale: f64,
    /// Per-document penalty added to the per-token cost in the mock scorer.
    pub distractor_penalty: f64,
    pub judge_threshold: f64,
    pub max_premise_chars: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            closed_book_sentences: 4,
            skill: 0.5,
            logprob_scale: 1.0,
            distractor_penalty: 0.01,
            judge_threshold: DEFAULT_JUDGE_THRESHOLD,
            max_premise_chars: DEFAULT_MAX_PREMISE_CHARS,
        }
    }
}

/// Deterministic in-process backend for all three capabilities.
///
/// Generation first consults a fixed prompt table, then falls back to rules
/// keyed on the prompt's field labels (`Question:`, `Response:`, `Claim:`,
/// `Documents:`). The scorer returns
/// `-scale * tokens(continuation) * (1 + penalty * documents(context))`.
/// The judge entails iff every content word of the hypothesis occurs in the
/// premise, case-folded.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    cfg: MockConfig,
    table: BTreeMap<String, Vec<String>>,
}

impl MockBackend {
    pub fn new(cfg: MockConfig) -> Self {
        Self {
            cfg,
            table: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &MockConfig {
        &self.cfg
    }

    /// Fixes the generations for an exact prompt; samples cycle through `texts`.
    pub fn with_response(mut self, prompt: impl Into<String>, texts: Vec<String>) -> Self {
        self.table.insert(prompt.into(), texts);
        self
    }

    /// Documents counted by the scorer: `Document [k](Title: ...)` headers.
    pub fn distractor_penalty(&self, context: &str) -> f64 {
        let docs = parse_document_lines(context).len();
        self.cfg.distractor_penalty * docs as f64
    }

    fn sample(&self, prompt: &str, seed: u64, index: usize) -> String {
        let mut rng = seed::rng_for(seed, &[prompt, &index.to_string()]);
        if prompt.contains(FIELD_DOCUMENTS) {
            self.attributed_answer(prompt, &mut rng)
        } else if let Some(claims) = field_block(prompt, FIELD_CLAIM) {
            document_from_claims(&claims)
        } else if let Some(response) = field_block(prompt, FIELD_RESPONSE) {
            decompose(&response)
        } else if let Some(question) = field_line(prompt, FIELD_QUESTION) {
            self.closed_book(&question, prompt)
        } else {
            format!("Mock output {:016x}.", rng.random::<u64>())
        }
    }

    fn closed_book(&self, question: &str, prompt: &str) -> String {
        let topic = topic_of(question);
        // Keyed on the prompt only: the same question always gets the same answer.
        let mut rng = seed::rng_for(0, &["closed-book", prompt]);
        let mut words: Vec<&str> = VOCAB.iter().copied().filter(|w| *w != topic).collect();
        words.shuffle(&mut rng);
        let mut words = words.into_iter();
        (0..self.cfg.closed_book_sentences.max(1))
            .map(|_| {
                let picked: Vec<&str> = words.by_ref().take(4).collect();
                format!("{} {}.", capitalize(&topic), picked.join(" "))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn attributed_answer(&self, prompt: &str, rng: &mut impl Rng) -> String {
        let question = field_line(prompt, FIELD_QUESTION).unwrap_or_default();
        let topic = topic_of(&question);
        let docs = parse_document_lines(prompt);
        let prefix = if prompt.contains(YESNO_CUE) { "Yes. " } else { "" };

        let mut statements: Vec<(u32, Statement)> = Vec::new();
        for (k, body) in &docs {
            if !content_word_set(body).contains(&topic) {
                continue;
            }
            for st in parse_response(body, 0).statements {
                statements.push((*k, Statement::new(st.text, [*k])));
            }
        }
        if statements.is_empty() {
            return format!("{prefix}The provided documents do not address {topic}.");
        }

        if rng.random::<f64>() >= self.cfg.skill {
            let defect = rng.random_range(0..3u8);
            if defect != 1 {
                drop_coverage(&mut statements, rng);
            }
            if defect != 0 {
                miscite(&mut statements, docs.len() as u32, rng);
            }
        }
        let rendered = AttributedResponse::from_statements(
            statements.into_iter().map(|(_, st)| st).collect(),
        )
        .raw_text;
        format!("{prefix}{rendered}")
    }
}

/// Removes one cited document's statements, or the last statement when only
/// one document is cited.
fn drop_coverage(statements: &mut Vec<(u32, Statement)>, rng: &mut impl Rng) {
    let cited: Vec<u32> = statements
        .iter()
        .map(|(k, _)| *k)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if cited.len() >= 2 {
        let victim = cited[rng.random_range(0..cited.len())];
        statements.retain(|(k, _)| *k != victim);
    } else if statements.len() >= 2 {
        statements.pop();
    }
}

fn miscite(statements: &mut [(u32, Statement)], doc_count: u32, rng: &mut impl Rng) {
    let idx = rng.random_range(0..statements.len());
    let own = statements[idx].0;
    let wrong = if doc_count <= 1 {
        doc_count + 1
    } else {
        let others: Vec<u32> = (1..=doc_count).filter(|k| *k != own).collect();
        others[rng.random_range(0..others.len())]
    };
    statements[idx].1.citations = vec![wrong];
}

fn decompose(response: &str) -> String {
    let mut lines = Vec::new();
    for st in parse_response(response, 0).statements {
        let words = content_words(&st.text);
        if words.len() <= 2 {
            lines.push(format!("- {}", st.text));
            continue;
        }
        let (head, rest) = words.split_first().expect("non-empty");
        let half = rest.len().div_ceil(2);
        for part in [&rest[..half], &rest[half..]] {
            lines.push(format!("- {} {}.", capitalize(head), part.join(" ")));
        }
    }
    lines.join("\n")
}

fn document_from_claims(claims: &str) -> String {
    let claims: Vec<&str> = claims
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let first = content_words(claims.first().copied().unwrap_or("notes"));
    let title = format!(
        "On {}",
        first.iter().take(3).map(|w| capitalize(w)).collect::<Vec<_>>().join(" ")
    );
    let body = claims
        .iter()
        .map(|c| {
            if c.ends_with(['.', '!', '?']) {
                c.to_string()
            } else {
                format!("{c}.")
            }
        })
        .collect::<Vec<_>>()
        .join(" ");
    format!("{title}\n{body}")
}

fn topic_of(question: &str) -> String {
    content_words(question)
        .pop()
        .unwrap_or_else(|| "subject".to_string())
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Rest of the last line starting with `label`.
fn field_line(prompt: &str, label: &str) -> Option<String> {
    prompt
        .lines()
        .rev()
        .find_map(|l| l.trim_start().strip_prefix(label))
        .map(|s| s.trim().to_string())
}

/// Everything after the last `label` up to the end of the prompt.
fn field_block(prompt: &str, label: &str) -> Option<String> {
    let at = prompt.rfind(&format!("\n{label}")).map(|p| p + 1).or_else(|| {
        prompt.starts_with(label).then_some(0)
    })?;
    Some(prompt[at + label.len()..].trim().to_string())
}

/// `(index, body)` pairs from `Document [k](Title: ...): body` lines.
fn parse_document_lines(prompt: &str) -> Vec<(u32, String)> {
    prompt
        .lines()
        .filter_map(|line| {
            let rest = &line[line.find("Document [")? + "Document [".len()..];
            let close = rest.find(']')?;
            let k: u32 = rest[..close].parse().ok()?;
            let after = rest[close + 1..].strip_prefix("(Title: ")?;
            let body_at = after.find("): ")?;
            Some((k, after[body_at + 3..].to_string()))
        })
        .collect()
}

impl TextGenerator for MockBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, GatewayError> {
        req.validate()?;
        if let Some(texts) = self.table.get(&req.prompt) {
            if texts.is_empty() {
                return Err(GatewayError::backend("mock table entry is empty"));
            }
            return Ok((0..req.n_samples).map(|i| texts[i % texts.len()].clone()).collect());
        }
        let seed = req.seed.unwrap_or(0);
        Ok((0..req.n_samples)
            .map(|i| self.sample(&req.prompt, seed, i))
            .collect())
    }
}

impl SequenceScorer for MockBackend {
    fn logprob(&self, req: &LogprobRequest) -> Result<LogprobResult, GatewayError> {
        req.validate()?;
        let tokens = whitespace_token_count(&req.continuation).max(1);
        let per_token = 1.0 + self.distractor_penalty(&req.context);
        Ok(LogprobResult {
            logprob_sum: -self.cfg.logprob_scale * tokens as f64 * per_token,
            token_count: tokens,
        })
    }
}

impl EntailmentJudge for MockBackend {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, GatewayError> {
        let premise = prepare_premise(premise, hypothesis, self.cfg.max_premise_chars)?;
        let have = content_word_set(premise);
        let covered = content_words(hypothesis).iter().all(|w| have.contains(w));
        let score = if covered { 1.0 } else { 0.0 };
        Ok(EntailmentVerdict::from_score(score, self.cfg.judge_threshold))
    }
}
