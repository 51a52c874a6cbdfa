use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    prepare_premise, EntailmentJudge, EntailmentVerdict, GatewayError, GenerationRequest,
    LogprobRequest, LogprobResult, RetryPolicy, SequenceScorer, TextGenerator,
    DEFAULT_JUDGE_THRESHOLD, DEFAULT_MAX_PREMISE_CHARS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub token: Option<String>,
    /// Header carrying `token`. `Authorization` values get a `Bearer ` prefix.
    pub auth_header: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub max_premise_chars: usize,
    pub judge_threshold: f64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            token: None,
            auth_header: "Authorization".into(),
            timeout_secs: 120,
            retry: RetryPolicy::default(),
            max_premise_chars: DEFAULT_MAX_PREMISE_CHARS,
            judge_threshold: DEFAULT_JUDGE_THRESHOLD,
        }
    }
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    prompt: &'a str,
    n: usize,
    temperature: f64,
    top_p: f64,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct GenerateReply {
    texts: Vec<String>,
}

#[derive(Serialize)]
struct EntailBody<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct ErrorReply {
    error: String,
}

/// Client for the `/v1/generate`, `/v1/logprob` and `/v1/entail` endpoints.
///
/// Blocking and `Sync`; callers bound concurrency with their own thread pool.
/// Every request carries an `X-Request-Id` header for correlation in server logs.
pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
    next_id: AtomicU64,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .build()
            .into();
        Self {
            cfg,
            agent,
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, GatewayError> {
        let url = self.url(path);
        self.cfg.retry.run(|| {
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            let mut req = self
                .agent
                .post(&url)
                .header("X-Request-Id", id.to_string());
            if let Some(token) = &self.cfg.token {
                let value = if self.cfg.auth_header.eq_ignore_ascii_case("authorization") {
                    format!("Bearer {token}")
                } else {
                    token.clone()
                };
                req = req.header(self.cfg.auth_header.as_str(), value);
            }
            let mut resp = req.send_json(body).map_err(classify)?;
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().map_err(classify)?;
            if !(200..300).contains(&status) {
                let message = serde_json::from_str::<ErrorReply>(&text)
                    .map(|e| e.error)
                    .unwrap_or(text);
                return Err(GatewayError::Backend {
                    status: Some(status),
                    message,
                });
            }
            serde_json::from_str(&text).map_err(|e| GatewayError::Backend {
                status: Some(status),
                message: format!("malformed response from {url}: {e}"),
            })
        })
    }
}

fn classify(err: ureq::Error) -> GatewayError {
    match err {
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed
        | ureq::Error::Protocol(_)
        | ureq::Error::BodyStalled => GatewayError::Transport(err.to_string()),
        other => GatewayError::backend(other.to_string()),
    }
}

impl TextGenerator for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, GatewayError> {
        req.validate()?;
        let reply: GenerateReply = self.post(
            "/v1/generate",
            &GenerateBody {
                prompt: &req.prompt,
                n: req.n_samples,
                temperature: req.temperature,
                top_p: req.top_p,
                max_tokens: req.max_tokens,
                seed: req.seed,
            },
        )?;
        if reply.texts.len() != req.n_samples {
            return Err(GatewayError::backend(format!(
                "asked for {} samples, got {}",
                req.n_samples,
                reply.texts.len()
            )));
        }
        Ok(reply.texts)
    }
}

impl SequenceScorer for HttpBackend {
    fn logprob(&self, req: &LogprobRequest) -> Result<LogprobResult, GatewayError> {
        req.validate()?;
        let reply: LogprobResult = self.post("/v1/logprob", req)?;
        reply.validate()
    }
}

impl EntailmentJudge for HttpBackend {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, GatewayError> {
        let premise = prepare_premise(premise, hypothesis, self.cfg.max_premise_chars)?;
        let reply: EntailmentVerdict = self.post("/v1/entail", &EntailBody { premise, hypothesis })?;
        if !(0.0..=1.0).contains(&reply.score) {
            return Err(GatewayError::backend(format!(
                "entailment score {} outside [0, 1]",
                reply.score
            )));
        }
        // The configured threshold decides; the server's boolean is advisory.
        Ok(EntailmentVerdict::from_score(reply.score, self.cfg.judge_threshold))
    }
}
