//! `apr simulate`: roll out the mechanistic model or a reference agent.

use std::collections::BTreeMap;
use std::path::PathBuf;

use apr_core::agents;
use apr_core::mech::{MechAgent, MechParams};
use apr_core::store;
use apr_core::TaskConfig;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agent::{self, FinalKind, SamplerSpec};
use crate::config::{self, ParamsFile};
use crate::error::CliError;
use crate::manifest::{self, Recorder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentKind {
    Mech,
    Random,
    Greedy,
    Dp,
    Ppo,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Agent to simulate.
    #[arg(long, value_enum, default_value = "mech")]
    pub agent: AgentKind,
    /// Final rule paired with a reference sampler.
    #[arg(long = "final", value_enum, default_value = "map")]
    pub final_rule: FinalKind,
    /// Model parameters (TOML) for `--agent mech`.
    #[arg(long, conflicts_with = "fixture")]
    pub params: Option<PathBuf>,
    /// Tabulated parameter row for `--agent mech`, as MODEL/REASONING.
    #[arg(long)]
    pub fixture: Option<String>,
    /// PPO checkpoint for `--agent ppo`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Observation count scale the checkpoint was trained with.
    #[arg(long, default_value_t = 1.0)]
    pub count_scale: f64,
    /// Sample PPO actions instead of taking the argmax.
    #[arg(long)]
    pub stochastic: bool,
    #[arg(long, default_value_t = 10_000)]
    pub games: usize,
    /// Master seed; overrides the task file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Agent id written to the trajectories.
    #[arg(long)]
    pub agent_id: Option<String>,
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, default_value = "sim.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    Mech { params: MechParams, agent_id: String },
    Reference { sampler: SamplerSpec, final_rule: FinalKind, agent_id: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub task: TaskConfig,
    pub agent: AgentSpec,
    pub games: usize,
    pub condition: String,
    pub out: PathBuf,
}

pub fn resolve(args: &SimulateArgs) -> Result<SimulateSpec, CliError> {
    let mut task: TaskConfig = config::load(args.task.as_deref())?;
    if let Some(seed) = args.seed {
        task.seed = seed;
    }
    let mut condition = args.condition.clone();
    let agent = match args.agent {
        AgentKind::Mech => {
            let file = match (&args.params, &args.fixture) {
                (Some(p), _) => ParamsFile::read(p)?,
                (None, Some(f)) => ParamsFile::fixture(f)?,
                (None, None) => return Err(CliError::Usage("--agent mech needs --params or --fixture".into())),
            };
            condition = condition.or_else(|| file.condition.clone());
            let agent_id = args.agent_id.clone().or_else(|| file.agent_id.clone()).unwrap_or_else(|| "mech".into());
            AgentSpec::Mech { params: file.params(), agent_id }
        }
        kind => {
            if args.params.is_some() || args.fixture.is_some() {
                return Err(CliError::Usage("--params/--fixture only apply to --agent mech".into()));
            }
            let sampler = match kind {
                AgentKind::Random => SamplerSpec::Random,
                AgentKind::Greedy => SamplerSpec::Greedy,
                AgentKind::Dp => SamplerSpec::Dp,
                AgentKind::Ppo => SamplerSpec::Ppo {
                    checkpoint: args
                        .checkpoint
                        .clone()
                        .ok_or_else(|| CliError::Usage("--agent ppo needs --checkpoint".into()))?,
                    count_scale: args.count_scale,
                    greedy: !args.stochastic,
                },
                AgentKind::Mech => unreachable!(),
            };
            AgentSpec::Reference { sampler, final_rule: args.final_rule, agent_id: args.agent_id.clone() }
        }
    };
    Ok(SimulateSpec {
        task,
        agent,
        games: args.games,
        condition: condition.unwrap_or_else(|| "base".into()),
        out: args.out.clone(),
    })
}

pub fn run(spec: &SimulateSpec) -> Result<(), CliError> {
    let recorder = Recorder::start("simulate");
    let task = &spec.task;
    task.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut inputs = Vec::new();
    let trajectories = match &spec.agent {
        AgentSpec::Mech { params, agent_id } => {
            if params.k() != task.k_arms {
                return Err(CliError::Usage(format!(
                    "parameters are for {} arms, task has {}",
                    params.k(),
                    task.k_arms
                )));
            }
            let agent = MechAgent::new(params.clone(), task)
                .map_err(|e| CliError::Usage(e.to_string()))?
                .with_label(agent_id.clone());
            agents::play_games(task, spec.games, || agent.clone(), &spec.condition)
        }
        AgentSpec::Reference { sampler, final_rule, agent_id } => {
            if let SamplerSpec::Ppo { checkpoint, .. } = sampler {
                inputs.push(checkpoint.clone());
            }
            let proto = agent::paired(agent::build_sampler(sampler, task)?, *final_rule);
            let mut out = agents::play_games(task, spec.games, || proto.clone(), &spec.condition);
            if let Some(id) = agent_id {
                out.iter_mut().for_each(|t| t.agent_id = id.clone());
            }
            out
        }
    };
    store::write_trajectories(&spec.out, &trajectories)?;
    let stats = apr_core::metrics::success_rate(&trajectories);
    tracing::info!(games = spec.games, success = stats.rate(), out = %spec.out.display(), "simulated");
    recorder.finish(
        &manifest::for_file(&spec.out),
        spec,
        inputs,
        vec![spec.out.clone()],
        BTreeMap::from([("task".to_string(), task.seed)]),
    )?;
    Ok(())
}
