//! Record types for emitted training datasets.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftSource {
    Warmup,
    RejectionSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    pub query_id: String,
    pub source: SftSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_id: Option<String>,
    /// Epoch count for the external trainer; not acted upon here.
    pub train_epochs: u32,
}

/// One supervised fine-tuning example: `{"prompt", "response", "meta"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub response: String,
    pub meta: SftMeta,
}

pub const WARMUP_EPOCHS: u32 = 2;
pub const RSFT_EPOCHS: u32 = 3;
