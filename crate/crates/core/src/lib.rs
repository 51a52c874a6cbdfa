//! Core library for self-taught attribution pipelines: citation grammar, model
//! gateway, reverse-attribution data synthesis, fine-grained rewards,
//! rejection-sampling selection, preference pairs and citation metrics.

pub mod citation;
pub mod dataset;
pub mod gateway;
pub mod metrics;
pub mod preference;
pub mod prompts;
pub mod rewards;
pub mod seed;
pub mod selection;
pub mod synthesis;
pub mod text;
