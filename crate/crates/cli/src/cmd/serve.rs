//! `apr serve`: the session web API.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use apr_core::service::SessionManager;
use apr_core::store::TrajectoryWriter;
use apr_core::TaskConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::CliError;
use crate::manifest::{self, Recorder};

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Completed games are appended here (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSpec {
    pub addr: SocketAddr,
    pub task: TaskConfig,
    pub out: Option<PathBuf>,
}

pub fn resolve(args: &ServeArgs) -> Result<ServeSpec, CliError> {
    let mut task: TaskConfig = config::load(args.task.as_deref())?;
    if let Some(seed) = args.seed {
        task.seed = seed;
    }
    Ok(ServeSpec { addr: args.addr, task, out: args.out.clone() })
}

pub fn run(spec: &ServeSpec) -> Result<(), CliError> {
    let recorder = Recorder::start("serve");
    let writer = spec.out.as_deref().map(TrajectoryWriter::open).transpose()?;
    let manager = SessionManager::new(spec.task.clone(), writer).map_err(|e| CliError::Usage(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(format!("cannot start runtime: {e}")))?;
    runtime
        .block_on(apr_service::serve(spec.addr, Arc::new(manager)))
        .map_err(|e| CliError::Usage(format!("{}: {e}", spec.addr)))?;
    if let Some(out) = &spec.out {
        recorder.finish(
            &manifest::for_file(out),
            spec,
            vec![],
            vec![out.clone()],
            BTreeMap::from([("task".to_string(), spec.task.seed)]),
        )?;
    }
    Ok(())
}
