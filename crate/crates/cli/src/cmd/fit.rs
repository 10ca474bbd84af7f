//! `apr fit`: maximum-likelihood fits of the mechanistic model, one per
//! (agent, condition) group found in the input files.

use std::collections::BTreeMap;
use std::path::PathBuf;

use apr_core::fit::{self, FitConfig, FitResult};
use apr_core::metrics::group_by_agent;
use apr_core::store;
use apr_core::TaskConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::CliError;
use crate::manifest::{self, Recorder};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Trajectory files (JSON lines).
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Fit settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training fraction of games; the rest is held out.
    #[arg(long, conflicts_with = "no_split")]
    pub split: Option<f64>,
    /// Fit on all games without a held-out set.
    #[arg(long)]
    pub no_split: bool,
    #[arg(long)]
    pub starts: Option<usize>,
    /// Seeds the restarts and the split.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model label for the table; only valid with a single group.
    #[arg(long)]
    pub model: Option<String>,
    /// Reasoning label for the table; only valid with a single group.
    #[arg(long)]
    pub reasoning: Option<String>,
    #[arg(long, default_value = "fit")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub task: TaskConfig,
    pub fit: FitConfig,
    pub inputs: Vec<PathBuf>,
    pub model: Option<String>,
    pub reasoning: Option<String>,
    pub out_dir: PathBuf,
}

pub fn resolve(args: &FitArgs) -> Result<FitSpec, CliError> {
    let mut fit: FitConfig = config::load(args.config.as_deref())?;
    if let Some(f) = args.split {
        fit.train_fraction = Some(f);
    }
    if args.no_split {
        fit.train_fraction = None;
    }
    if let Some(n) = args.starts {
        fit.n_starts = n;
    }
    if let Some(s) = args.seed {
        fit.seed = s;
        fit.split_seed = s;
    }
    fit.validate()?;
    Ok(FitSpec {
        task: config::load(args.task.as_deref())?,
        fit,
        inputs: args.inputs.clone(),
        model: args.model.clone(),
        reasoning: args.reasoning.clone(),
        out_dir: args.out_dir.clone(),
    })
}

pub fn run(spec: &FitSpec) -> Result<(), CliError> {
    let recorder = Recorder::start("fit");
    let mut data = Vec::new();
    for path in &spec.inputs {
        data.extend(store::read_trajectories(path, &spec.task)?);
    }
    let groups = group_by_agent(&data);
    if groups.is_empty() {
        return Err(CliError::Data("no trajectories in the input".into()));
    }
    if groups.len() > 1 && (spec.model.is_some() || spec.reasoning.is_some()) {
        return Err(CliError::Usage(format!(
            "--model/--reasoning need a single (agent, condition) group; found {}",
            groups.len()
        )));
    }
    let mut results: Vec<FitResult> = Vec::new();
    for ((agent, condition), games) in &groups {
        let mut r = fit::fit(games, &spec.task, &spec.fit).map_err(|e| match e {
            fit::FitError::Diverged { .. } => CliError::Numeric(format!("{agent}/{condition}: {e}")),
            other => CliError::from(other),
        })?;
        r.model = spec.model.clone().unwrap_or_else(|| agent.clone());
        r.reasoning = spec.reasoning.clone().unwrap_or_else(|| condition.clone());
        if !r.train_nll.is_finite() {
            return Err(CliError::Numeric(format!("{agent}/{condition}: non-finite NLL")));
        }
        tracing::info!(
            agent = %agent,
            condition = %condition,
            beta = r.params.beta,
            kappa_f = r.params.kappa_f,
            train_nll = r.train_nll,
            converged = r.diagnostics.converged,
            "fitted"
        );
        results.push(r);
    }
    std::fs::create_dir_all(&spec.out_dir).map_err(CliError::io(&spec.out_dir))?;
    let fit_path = spec.out_dir.join("fit.json");
    manifest::write_json(&fit_path, &results)?;
    let table_path = spec.out_dir.join("params.tsv");
    manifest::write_text(&table_path, &store::export_param_table(&results)?)?;
    recorder.finish(
        &manifest::for_dir(&spec.out_dir),
        spec,
        spec.inputs.clone(),
        vec![fit_path, table_path],
        BTreeMap::from([("restarts".to_string(), spec.fit.seed), ("split".to_string(), spec.fit.split_seed)]),
    )?;
    Ok(())
}
