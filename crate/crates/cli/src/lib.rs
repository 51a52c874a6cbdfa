//! Pipeline orchestration for attrforge: configuration, workspace
//! persistence and the `synth`, `iterate`, `eval` and `report` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod workspace;

pub use error::{CliError, Result};
