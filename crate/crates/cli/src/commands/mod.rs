pub mod eval;
pub mod iterate;
pub mod report;
pub mod synth;

use std::collections::BTreeMap;
use std::time::Instant;

use attrforge_core::prompts::PromptSet;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::workspace::{sha256_hex, Manifest, Workspace};

/// Shared state for one command invocation against one workspace.
pub struct Session {
    pub cfg: RunConfig,
    pub prompts: PromptSet,
    pub ws: Workspace,
    pub run_id: String,
    pub force: bool,
}

impl Session {
    pub fn open(cfg: RunConfig, force: bool) -> Result<Self> {
        let prompts = match &cfg.paths.prompts_dir {
            Some(dir) => PromptSet::load_dir(dir).map_err(|e| CliError::Validation(e.to_string()))?,
            None => PromptSet::default(),
        };
        let ws = Workspace::open(cfg.workspace()?)?;
        let run_id = run_id(&cfg, &prompts);
        Ok(Self {
            cfg,
            prompts,
            ws,
            run_id,
            force,
        })
    }

    pub fn manifest(&self) -> Result<Manifest> {
        self.ws.manifest_for(&self.run_id, self.cfg.snapshot(), self.force)
    }

    /// Digest of the run identity plus stage-specific inputs.
    pub fn inputs_digest(&self, parts: &[&[u8]]) -> String {
        let mut buf = self.run_id.as_bytes().to_vec();
        for p in parts {
            buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
            buf.extend_from_slice(p);
        }
        sha256_hex(&buf)
    }

    pub fn timer(&self) -> Timer {
        Timer(self.cfg.record_timings.then(Instant::now))
    }
}

pub struct Timer(Option<Instant>);

impl Timer {
    pub fn elapsed_ms(&self) -> Option<u64> {
        self.0.map(|t| t.elapsed().as_millis() as u64)
    }
}

/// First 16 hex digits of the digest over the config snapshot and templates.
pub fn run_id(cfg: &RunConfig, prompts: &PromptSet) -> String {
    let mut buf = serde_json::to_vec(&cfg.snapshot()).expect("snapshot serializes");
    for t in [
        &prompts.response_generation,
        &prompts.claim_decomposition,
        &prompts.document_generation,
        &prompts.attributed_answer,
        &prompts.attributed_answer_yesno,
    ] {
        buf.extend_from_slice(t.name().as_bytes());
        buf.push(0);
        buf.extend_from_slice(t.text().as_bytes());
        buf.push(0);
    }
    sha256_hex(&buf)[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub query_id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutcome {
    pub stage: String,
    pub skipped: bool,
    pub counters: BTreeMap<String, serde_json::Value>,
}

impl StageOutcome {
    pub fn skipped(stage: &str, m: &Manifest) -> Self {
        Self {
            stage: stage.to_string(),
            skipped: true,
            counters: m.stages.get(stage).map(|e| e.counters.clone()).unwrap_or_default(),
        }
    }
}

/// Status 3 when the failed fraction exceeds the configured tolerance.
pub fn check_partial(cfg: &RunConfig, stage: &str, failed: usize, total: usize) -> Result<()> {
    if total > 0 && failed > 0 && failed as f64 / total as f64 > cfg.max_failure_fraction {
        return Err(CliError::Partial {
            stage: stage.to_string(),
            failed,
            total,
        });
    }
    Ok(())
}

pub fn counter(v: impl Into<serde_json::Value>) -> serde_json::Value {
    v.into()
}
