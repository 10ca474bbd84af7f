//! `apr run-llm`: play games against a chat-completions endpoint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use apr_core::llm::http::HttpEndpoint;
use apr_core::llm::{self, ProtocolConfig};
use apr_core::TaskConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::CliError;
use crate::manifest::{self, Recorder};

#[derive(Debug, Args)]
pub struct RunLlmArgs {
    /// Endpoint, model and prompt settings (TOML).
    #[arg(long)]
    pub protocol: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub games: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the endpoint base URL from the protocol file.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub condition: Option<String>,
    /// Trajectory file; transcripts go to `<stem>.transcripts.jsonl` beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLlmSpec {
    pub task: TaskConfig,
    pub protocol: ProtocolConfig,
    pub games: usize,
    pub out: PathBuf,
    pub transcripts: PathBuf,
}

pub fn transcript_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.transcripts.jsonl"))
}

pub fn resolve(args: &RunLlmArgs) -> Result<RunLlmSpec, CliError> {
    let mut task: TaskConfig = config::load(args.task.as_deref())?;
    if let Some(seed) = args.seed {
        task.seed = seed;
    }
    let mut protocol: ProtocolConfig = config::load(args.protocol.as_deref())?;
    if let Some(e) = &args.endpoint {
        protocol.endpoint = e.clone();
    }
    if let Some(m) = &args.model {
        protocol.model = m.clone();
    }
    if let Some(c) = &args.condition {
        protocol.condition = c.clone();
    }
    Ok(RunLlmSpec {
        task,
        protocol,
        games: args.games,
        out: args.out.clone(),
        transcripts: transcript_path(&args.out),
    })
}

pub fn run(spec: &RunLlmSpec) -> Result<(), CliError> {
    let recorder = Recorder::start("run-llm");
    spec.protocol.validate()?;
    for path in [&spec.out, &spec.transcripts] {
        if path.exists() {
            return Err(CliError::Usage(format!("{} exists; refusing to append to an old run", path.display())));
        }
    }
    let endpoint = HttpEndpoint::new(&spec.protocol)?;
    let logs = llm::run_session_to_files(&spec.protocol, &endpoint, &spec.task, spec.games, &spec.out, &spec.transcripts)?;
    let aborted = logs.iter().filter(|l| l.record.aborted.is_some()).count();
    let correct = logs.iter().filter(|l| l.record.final_.correct).count();
    tracing::info!(games = logs.len(), correct, aborted, "session finished");
    recorder.finish(
        &manifest::for_file(&spec.out),
        spec,
        vec![],
        vec![spec.out.clone(), spec.transcripts.clone()],
        BTreeMap::from([("task".to_string(), spec.task.seed)]),
    )?;
    Ok(())
}
