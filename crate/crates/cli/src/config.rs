//! Run configuration: one TOML file, command-line flags and environment
//! overrides, applied in that order so the environment wins.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attrforge_core::gateway::{
    Backends, EntailmentJudge, HttpBackend, HttpConfig, MockBackend, MockConfig, RetryPolicy,
    SamplingParams, SequenceScorer, TextGenerator, DEFAULT_JUDGE_THRESHOLD, DEFAULT_MAX_PREMISE_CHARS,
};
use attrforge_core::metrics::MetricsConfig;
use attrforge_core::preference::{DpoConfig, DEFAULT_MAX_PAIRS_PER_QUERY};
use attrforge_core::rewards::RewardConfig;
use attrforge_core::selection::DEFAULT_N_CANDIDATES;
use attrforge_core::synthesis::SynthesisParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const ENV_CONFIG: &str = "ATTRFORGE_CONFIG";
pub const ENV_SEED: &str = "ATTRFORGE_SEED";
pub const ENV_PARALLELISM: &str = "ATTRFORGE_PARALLELISM";

pub const ROLES: [Role; 4] = [Role::Generator, Role::PolicyScorer, Role::ReferenceScorer, Role::Judge];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    PolicyScorer,
    ReferenceScorer,
    Judge,
}

impl Role {
    pub fn key(self) -> &'static str {
        match self {
            Self::Generator => "generator",
            Self::PolicyScorer => "policy_scorer",
            Self::ReferenceScorer => "reference_scorer",
            Self::Judge => "judge",
        }
    }

    fn env_prefix(self) -> String {
        format!("ATTRFORGE_{}", self.key().to_uppercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleConfig {
    pub kind: BackendKind,
    /// Base URL; `{iter}` is replaced by the iteration index.
    pub url: String,
    pub token: Option<String>,
    pub auth_header: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub mock: MockConfig,
}

impl Default for RoleConfig {
    fn default() -> Self {
        let http = HttpConfig::default();
        Self {
            kind: BackendKind::Http,
            url: String::new(),
            token: None,
            auth_header: http.auth_header,
            timeout_secs: http.timeout_secs,
            max_attempts: http.retry.max_attempts,
            initial_backoff_ms: http.retry.initial_backoff_ms,
            mock: MockConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub generator: RoleConfig,
    pub policy_scorer: RoleConfig,
    pub reference_scorer: RoleConfig,
    pub judge: RoleConfig,
    pub judge_threshold: f64,
    pub max_premise_chars: usize,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            generator: RoleConfig::default(),
            policy_scorer: RoleConfig::default(),
            reference_scorer: RoleConfig::default(),
            judge: RoleConfig::default(),
            judge_threshold: DEFAULT_JUDGE_THRESHOLD,
            max_premise_chars: DEFAULT_MAX_PREMISE_CHARS,
        }
    }
}

impl BackendsConfig {
    pub fn role(&self, role: Role) -> &RoleConfig {
        match role {
            Role::Generator => &self.generator,
            Role::PolicyScorer => &self.policy_scorer,
            Role::ReferenceScorer => &self.reference_scorer,
            Role::Judge => &self.judge,
        }
    }

    fn role_mut(&mut self, role: Role) -> &mut RoleConfig {
        match role {
            Role::Generator => &mut self.generator,
            Role::PolicyScorer => &mut self.policy_scorer,
            Role::ReferenceScorer => &mut self.reference_scorer,
            Role::Judge => &mut self.judge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustScorerRole {
    #[default]
    Policy,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub group_size_min: usize,
    pub group_size_max: usize,
    pub distractors_k: usize,
    pub warmup_fraction: f64,
    pub sampling: SamplingParams,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let p = SynthesisParams::default();
        Self {
            group_size_min: p.group_size_min,
            group_size_max: p.group_size_max,
            distractors_k: p.distractors_k,
            warmup_fraction: 0.2,
            sampling: p.sampling,
        }
    }
}

impl SynthesisConfig {
    pub fn params(&self) -> SynthesisParams {
        SynthesisParams {
            group_size_min: self.group_size_min,
            group_size_max: self.group_size_max,
            distractors_k: self.distractors_k,
            sampling: self.sampling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub n_candidates: usize,
    pub rewards: RewardConfig,
    pub sampling: SamplingParams,
    /// Which scorer role computes the robustness reward.
    pub robust_scorer: RobustScorerRole,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            n_candidates: DEFAULT_N_CANDIDATES,
            rewards: RewardConfig::default(),
            sampling: SamplingParams::default(),
            robust_scorer: RobustScorerRole::Policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreferenceConfig {
    pub beta: f64,
    pub max_pairs_per_query: usize,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self {
            beta: DpoConfig::default().beta,
            max_pairs_per_query: DEFAULT_MAX_PAIRS_PER_QUERY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub queries: Option<PathBuf>,
    pub workspace: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub global_seed: u64,
    pub parallelism: usize,
    /// Fraction of failed items above which a stage exits with status 3.
    pub max_failure_fraction: f64,
    pub record_timings: bool,
    pub paths: PathsConfig,
    pub backends: BackendsConfig,
    pub synthesis: SynthesisConfig,
    pub selection: SelectionConfig,
    pub preference: PreferenceConfig,
    pub eval: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            global_seed: 0,
            parallelism: 0,
            max_failure_fraction: 0.0,
            record_timings: false,
            paths: PathsConfig::default(),
            backends: BackendsConfig::default(),
            synthesis: SynthesisConfig::default(),
            selection: SelectionConfig::default(),
            preference: PreferenceConfig::default(),
            eval: MetricsConfig::default(),
        }
    }
}

/// Overrides gathered from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub workspace: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub mock: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Reads the file named by `ATTRFORGE_CONFIG` or `--config`, then applies
    /// flags and environment variables. Relative paths in the file resolve
    /// against the file's directory.
    pub fn load(ov: &Overrides) -> Result<Self> {
        Self::load_with(ov, |k| env::var(k).ok())
    }

    pub fn load_with(ov: &Overrides, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let path = env(ENV_CONFIG).map(PathBuf::from).or_else(|| ov.config.clone());
        let mut cfg = match &path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let mut cfg = Self::from_toml(&text)?;
                cfg.resolve_relative(p.parent().unwrap_or(Path::new(".")));
                cfg
            }
            None => Self::default(),
        };
        cfg.apply_flags(ov);
        cfg.apply_env(env)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        for p in [&mut self.paths.queries, &mut self.paths.workspace, &mut self.paths.prompts_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn apply_flags(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.global_seed = s;
        }
        if let Some(p) = ov.parallelism {
            self.parallelism = p;
        }
        if let Some(w) = &ov.workspace {
            self.paths.workspace = Some(w.clone());
        }
        if let Some(q) = &ov.queries {
            self.paths.queries = Some(q.clone());
        }
        if ov.mock {
            for role in ROLES {
                self.backends.role_mut(role).kind = BackendKind::Mock;
            }
        }
    }

    fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(s) = env(ENV_SEED) {
            self.global_seed = s
                .parse()
                .map_err(|_| CliError::Validation(format!("{ENV_SEED}: not an integer: {s}")))?;
        }
        if let Some(p) = env(ENV_PARALLELISM) {
            self.parallelism = p
                .parse()
                .map_err(|_| CliError::Validation(format!("{ENV_PARALLELISM}: not an integer: {p}")))?;
        }
        for role in ROLES {
            let prefix = role.env_prefix();
            let rc = self.backends.role_mut(role);
            if let Some(url) = env(&format!("{prefix}_URL")) {
                rc.url = url;
            }
            if let Some(token) = env(&format!("{prefix}_TOKEN")) {
                rc.token = Some(token);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        self.synthesis
            .params()
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let f = self.synthesis.warmup_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return bad(format!("synthesis.warmup_fraction must be in (0, 1], got {f}"));
        }
        if self.selection.n_candidates == 0 {
            return bad("selection.n_candidates must be at least 1".into());
        }
        self.selection
            .rewards
            .validate()
            .map_err(|e| CliError::Validation(format!("selection.rewards: {e}")))?;
        DpoConfig {
            beta: self.preference.beta,
        }
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return bad("max_failure_fraction must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.backends.judge_threshold) {
            return bad("backends.judge_threshold must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn validate_backends(&self) -> Result<()> {
        for role in ROLES {
            let rc = self.backends.role(role);
            if rc.kind == BackendKind::Http && rc.url.trim().is_empty() {
                return Err(CliError::Validation(format!(
                    "backends.{}.url is not set (or pass --mock); env {}_URL overrides",
                    role.key(),
                    role.env_prefix()
                )));
            }
        }
        Ok(())
    }

    pub fn workspace(&self) -> Result<&Path> {
        self.paths
            .workspace
            .as_deref()
            .ok_or_else(|| CliError::Validation("paths.workspace is not set".into()))
    }

    pub fn queries(&self) -> Result<&Path> {
        self.paths
            .queries
            .as_deref()
            .ok_or_else(|| CliError::Validation("paths.queries is not set".into()))
    }

    pub fn dpo(&self) -> DpoConfig {
        DpoConfig {
            beta: self.preference.beta,
        }
    }

    /// Configuration digest input: everything except paths and secrets.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        c.parallelism = 0;
        for role in ROLES {
            let rc = c.backends.role_mut(role);
            if rc.token.is_some() {
                rc.token = Some("<redacted>".into());
            }
        }
        serde_json::to_value(c).expect("config serializes")
    }

    fn http_config(&self, role: Role, iteration: Option<u32>) -> HttpConfig {
        let rc = self.backends.role(role);
        let url = match iteration {
            Some(k) => rc.url.replace("{iter}", &k.to_string()),
            None => rc.url.clone(),
        };
        HttpConfig {
            base_url: url,
            token: rc.token.clone(),
            auth_header: rc.auth_header.clone(),
            timeout_secs: rc.timeout_secs,
            retry: RetryPolicy {
                max_attempts: rc.max_attempts,
                initial_backoff_ms: rc.initial_backoff_ms,
            },
            max_premise_chars: self.backends.max_premise_chars,
            judge_threshold: self.backends.judge_threshold,
        }
    }

    fn mock_config(&self, role: Role) -> MockConfig {
        MockConfig {
            judge_threshold: self.backends.judge_threshold,
            max_premise_chars: self.backends.max_premise_chars,
            ..self.backends.role(role).mock.clone()
        }
    }

    /// Binds the four roles. Roles with identical settings share one backend.
    pub fn backends(&self, iteration: Option<u32>) -> Result<Backends> {
        self.validate_backends()?;
        enum Built {
            Http(Arc<HttpBackend>),
            Mock(Arc<MockBackend>),
        }
        let mut cache: Vec<(serde_json::Value, Arc<Built>)> = Vec::new();
        let mut build = |role: Role| -> Arc<Built> {
            let rc = self.backends.role(role);
            let key = match rc.kind {
                BackendKind::Http => serde_json::to_value(self.http_config(role, iteration)),
                BackendKind::Mock => serde_json::to_value(self.mock_config(role)),
            }
            .expect("backend config serializes");
            let key = serde_json::json!({ "kind": rc.kind, "cfg": key });
            if let Some((_, b)) = cache.iter().find(|(k, _)| *k == key) {
                return b.clone();
            }
            let b = Arc::new(match rc.kind {
                BackendKind::Http => Built::Http(Arc::new(HttpBackend::new(self.http_config(role, iteration)))),
                BackendKind::Mock => Built::Mock(Arc::new(MockBackend::new(self.mock_config(role)))),
            });
            cache.push((key, b.clone()));
            b
        };
        let generator: Arc<dyn TextGenerator> = match &*build(Role::Generator) {
            Built::Http(b) => b.clone(),
            Built::Mock(b) => b.clone(),
        };
        let scorer = |b: &Built| -> Arc<dyn SequenceScorer> {
            match b {
                Built::Http(b) => b.clone(),
                Built::Mock(b) => b.clone(),
            }
        };
        let policy_scorer = scorer(&build(Role::PolicyScorer));
        let reference_scorer = scorer(&build(Role::ReferenceScorer));
        let judge: Arc<dyn EntailmentJudge> = match &*build(Role::Judge) {
            Built::Http(b) => b.clone(),
            Built::Mock(b) => b.clone(),
        };
        Ok(Backends {
            generator,
            policy_scorer,
            reference_scorer,
            judge,
        })
    }
}
