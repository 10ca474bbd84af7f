//! Run manifests written next to every artifact.
//!
//! A manifest records the fully resolved command spec, so `apr rerun`
//! can repeat the run without the original flags or config files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    /// The resolved spec the command ran with.
    pub spec: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: u64,
    pub elapsed_secs: f64,
}

/// Manifest location for a single-file artifact.
pub fn for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Manifest location for an artifact directory.
pub fn for_dir(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub struct Recorder {
    command: &'static str,
    started: Instant,
    started_unix: u64,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Recorder { command, started: Instant::now(), started_unix }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn finish<S: Serialize>(
        self,
        path: &Path,
        spec: &S,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        seeds: BTreeMap<String, u64>,
    ) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            spec: serde_json::to_value(spec).expect("specs serialize"),
            inputs,
            outputs,
            seeds,
            started_unix: self.started_unix,
            elapsed_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(path, &manifest)?;
        Ok(manifest)
    }
}

pub fn read(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("values serialize");
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, text).map_err(CliError::io(path))
}
