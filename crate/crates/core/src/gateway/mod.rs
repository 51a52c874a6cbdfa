//! Boundary to model-backed capabilities: generation, sequence log-probability
//! scoring and NLI entailment.
//!
//! Each capability is a trait with two implementations: [`HttpBackend`] speaks
//! the JSON wire protocol, [`MockBackend`] is a deterministic in-process stand-in.

mod http;
mod mock;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockConfig};

pub const DEFAULT_MAX_PREMISE_CHARS: usize = 6000;
pub const DEFAULT_JUDGE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    /// Connection-level failure; safe to retry.
    #[error("transport error: {0}")]
    Transport(String),
    /// The backend answered with an error; retrying will not help.
    #[error("backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, message: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport(_))
    }

    pub fn backend(message: impl Into<String>) -> Self {
        Self::Backend {
            status: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub n_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub seed: Option<u64>,
}

impl GenerationRequest {
    /// One sample at temperature 1.0 / top-p 0.95.
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            n_samples: 1,
            temperature: 1.0,
            top_p: 0.95,
            max_tokens: 512,
            seed: None,
        }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.n_samples == 0 {
            return Err(GatewayError::Precondition("n_samples must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::Precondition(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Precondition(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Precondition("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Decoding settings shared by every generation call of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.95,
            max_tokens: 512,
        }
    }
}

impl SamplingParams {
    pub fn request(&self, prompt: impl Into<String>, n_samples: usize, seed: u64) -> GenerationRequest {
        GenerationRequest {
            prompt: prompt.into(),
            n_samples,
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            seed: Some(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogprobRequest {
    pub context: String,
    pub continuation: String,
}

impl LogprobRequest {
    pub fn new(context: impl Into<String>, continuation: impl Into<String>) -> Self {
        Self {
            context: context.into(),
            continuation: continuation.into(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.continuation.is_empty() {
            return Err(GatewayError::Precondition("continuation must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogprobResult {
    /// Natural-log probability of the continuation given the context.
    pub logprob_sum: f64,
    pub token_count: usize,
}

impl LogprobResult {
    pub fn validate(self) -> Result<Self, GatewayError> {
        if !self.logprob_sum.is_finite() || self.logprob_sum > 0.0 || self.token_count == 0 {
            return Err(GatewayError::backend(format!(
                "invalid logprob result: sum {} over {} tokens",
                self.logprob_sum, self.token_count
            )));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntailmentVerdict {
    pub entailed: bool,
    pub score: f64,
}

impl EntailmentVerdict {
    pub fn from_score(score: f64, threshold: f64) -> Self {
        Self {
            entailed: score >= threshold,
            score,
        }
    }
}

pub trait TextGenerator: Send + Sync {
    /// Returns exactly `req.n_samples` texts.
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, GatewayError>;
}

pub trait SequenceScorer: Send + Sync {
    fn logprob(&self, req: &LogprobRequest) -> Result<LogprobResult, GatewayError>;
}

pub trait EntailmentJudge: Send + Sync {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, GatewayError>;
}

/// Shared precondition check and head truncation for entailment calls.
pub fn prepare_premise<'a>(
    premise: &'a str,
    hypothesis: &str,
    max_premise_chars: usize,
) -> Result<&'a str, GatewayError> {
    if premise.trim().is_empty() {
        return Err(GatewayError::Precondition("premise must be non-empty".into()));
    }
    if hypothesis.trim().is_empty() {
        return Err(GatewayError::Precondition("hypothesis must be non-empty".into()));
    }
    Ok(crate::text::truncate_head(premise, max_premise_chars))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 200,
        }
    }
}

impl RetryPolicy {
    /// Runs `op`, retrying transport failures with exponential backoff.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_attempts.max(1) => {
                    let wait = self.initial_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::debug!("attempt {attempt} failed ({e}); retrying in {wait} ms");
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// The four model roles the pipeline binds.
#[derive(Clone)]
pub struct Backends {
    pub generator: Arc<dyn TextGenerator>,
    pub policy_scorer: Arc<dyn SequenceScorer>,
    pub reference_scorer: Arc<dyn SequenceScorer>,
    pub judge: Arc<dyn EntailmentJudge>,
}

impl Backends {
    pub fn all_mock(cfg: MockConfig) -> Self {
        let mock = Arc::new(MockBackend::new(cfg));
        Self {
            generator: mock.clone(),
            policy_scorer: mock.clone(),
            reference_scorer: mock.clone(),
            judge: mock,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn zero_samples_rejected() {
        let err = GenerationRequest::new("p").with_samples(0).validate().unwrap_err();
        assert!(matches!(err, GatewayError::Precondition(_)));
    }

    #[test]
    fn retries_only_transport_errors() {
        let policy = RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 0,
        };
        let calls = Cell::new(0);
        let r: Result<(), _> = policy.run(|| {
            calls.set(calls.get() + 1);
            Err(GatewayError::Transport("down".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 3);

        calls.set(0);
        let r: Result<(), _> = policy.run(|| {
            calls.set(calls.get() + 1);
            Err(GatewayError::backend("bad request"))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 1);

        calls.set(0);
        let r = policy.run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 2 {
                Err(GatewayError::Transport("blip".into()))
            } else {
                Ok(42)
            }
        });
        assert_eq!(r, Ok(42));
    }

    #[test]
    fn premise_checks() {
        assert!(prepare_premise("", "h", 10).is_err());
        assert!(prepare_premise("p", " ", 10).is_err());
        assert_eq!(prepare_premise("abcdef", "h", 3).unwrap(), "abc");
    }
}
