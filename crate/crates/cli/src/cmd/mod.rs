//! Subcommands. Each one resolves its flags and config files into a
//! serializable spec, then runs from that spec alone.

pub mod dp;
pub mod fit;
pub mod llm;
pub mod metrics;
pub mod ppo;
pub mod report;
pub mod serve;
pub mod simulate;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::error::CliError;
use crate::manifest;

fn spec<T: DeserializeOwned>(value: Value) -> Result<T, CliError> {
    serde_json::from_value(value).map_err(|e| CliError::Data(format!("manifest spec: {e}")))
}

/// Repeats the run recorded in a manifest.
pub fn rerun(path: &Path) -> Result<(), CliError> {
    let m = manifest::read(path)?;
    match m.command.as_str() {
        "simulate" => simulate::run(&spec(m.spec)?),
        "solve-dp" => dp::run(&spec(m.spec)?),
        "train-ppo" => ppo::run(&spec(m.spec)?),
        "run-llm" => llm::run(&spec(m.spec)?),
        "fit" => fit::run(&spec(m.spec)?),
        "metrics" => metrics::run(&spec(m.spec)?),
        "report" => report::run(&spec(m.spec)?),
        "serve" => serve::run(&spec(m.spec)?),
        other => Err(CliError::Data(format!("manifest names unknown command {other:?}"))),
    }
}
