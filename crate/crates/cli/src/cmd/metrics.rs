//! `apr metrics`: success, loss decomposition and invalid rates per agent.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use apr_core::agents::ppo::PpoSampler;
use apr_core::agents::{self, MapFinal, Paired};
use apr_core::fit::FitResult;
use apr_core::mech::bias_entropy;
use apr_core::metrics::{self, AgentReport, Reference};
use apr_core::store;
use apr_core::TaskConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::agent;
use crate::config;
use crate::error::CliError;
use crate::manifest::{self, Recorder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    None,
    /// Exact DP+MAP value.
    Dp,
    /// Greedy PPO+MAP success measured over fresh games.
    Ppo { checkpoint: PathBuf, count_scale: f64, games: usize },
}

impl FromStr for ReferenceSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ReferenceSpec::None),
            "dp" => Ok(ReferenceSpec::Dp),
            _ => match s.strip_prefix("ppo:") {
                Some(p) if !p.is_empty() => {
                    Ok(ReferenceSpec::Ppo { checkpoint: PathBuf::from(p), count_scale: 1.0, games: 10_000 })
                }
                _ => Err(format!("expected dp, none or ppo:<checkpoint>, got {s:?}")),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Reference for the sampling loss: dp, none or ppo:<checkpoint>.
    #[arg(long, default_value = "dp")]
    pub reference: ReferenceSpec,
    /// Games used to measure a PPO reference.
    #[arg(long, default_value_t = 10_000)]
    pub reference_games: usize,
    /// Observation count scale of a PPO reference checkpoint.
    #[arg(long, default_value_t = 1.0)]
    pub count_scale: f64,
    /// Fit results (`fit.json`) used to fill in bias entropies.
    #[arg(long = "fit")]
    pub fits: Vec<PathBuf>,
    /// Report file (JSON); a table is written to `<stem>.tsv` beside it.
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    pub task: TaskConfig,
    pub inputs: Vec<PathBuf>,
    pub reference: ReferenceSpec,
    pub fits: Vec<PathBuf>,
    pub out: PathBuf,
}

pub fn resolve(args: &MetricsArgs) -> Result<MetricsSpec, CliError> {
    let reference = match args.reference.clone() {
        ReferenceSpec::Ppo { checkpoint, .. } => {
            ReferenceSpec::Ppo { checkpoint, count_scale: args.count_scale, games: args.reference_games }
        }
        other => other,
    };
    Ok(MetricsSpec {
        task: config::load(args.task.as_deref())?,
        inputs: args.inputs.clone(),
        reference,
        fits: args.fits.clone(),
        out: args.out.clone(),
    })
}

pub fn table_path(out: &Path) -> PathBuf {
    out.with_extension("tsv")
}

pub fn read_fits(paths: &[PathBuf]) -> Result<Vec<FitResult>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
        let fits: Vec<FitResult> =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        out.extend(fits);
    }
    Ok(out)
}

fn reference(spec: &MetricsSpec) -> Result<Option<Reference>, CliError> {
    let task = &spec.task;
    Ok(match &spec.reference {
        ReferenceSpec::None => None,
        ReferenceSpec::Dp => Some(Reference {
            label: "dp+map".into(),
            success: agent::solve(task)?.root_value(),
            config_digest: task.digest(),
        }),
        ReferenceSpec::Ppo { checkpoint, count_scale, games } => {
            let policy = agent::load_ppo(checkpoint, *count_scale, task)?;
            let (stats, _) =
                agents::evaluate_agent(task, *games, || Paired::new(PpoSampler::greedy(policy.clone()), MapFinal));
            Some(Reference { label: "ppo-greedy+map".into(), success: stats.rate(), config_digest: task.digest() })
        }
    })
}

pub fn run(spec: &MetricsSpec) -> Result<(), CliError> {
    let recorder = Recorder::start("metrics");
    let mut data = Vec::new();
    for path in &spec.inputs {
        data.extend(store::read_trajectories(path, &spec.task)?);
    }
    let fits = read_fits(&spec.fits)?;
    let reference = reference(spec)?;
    let mut reports = Vec::new();
    for ((agent, condition), games) in metrics::group_by_agent(&data) {
        let mut r = AgentReport::build(&games, &spec.task, reference.as_ref())?;
        if let Some(f) = fits.iter().find(|f| f.model == agent && f.reasoning == condition) {
            r.bias_entropy_s = Some(bias_entropy(&f.params.omega_s));
            r.bias_entropy_f = Some(bias_entropy(&f.params.omega_f));
        }
        for w in &r.warnings {
            tracing::warn!(agent = %agent, condition = %condition, "{w}");
        }
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(CliError::Data("no trajectories in the input".into()));
    }
    manifest::write_json(&spec.out, &reports)?;
    let table = table_path(&spec.out);
    manifest::write_text(&table, &metrics::report_table(&reports))?;
    let mut inputs = spec.inputs.clone();
    inputs.extend(spec.fits.iter().cloned());
    if let ReferenceSpec::Ppo { checkpoint, .. } = &spec.reference {
        inputs.push(checkpoint.clone());
    }
    recorder.finish(
        &manifest::for_file(&spec.out),
        spec,
        inputs,
        vec![spec.out.clone(), table],
        BTreeMap::from([("reference".to_string(), spec.task.seed)]),
    )?;
    Ok(())
}
