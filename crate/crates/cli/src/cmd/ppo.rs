//! `apr train-ppo`: train a PPO sampler and evaluate it with a MAP final.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use apr_core::agents::dp::DpSampler;
use apr_core::agents::ppo::{self, PpoConfig, PpoSampler, Trainer};
use apr_core::agents::{self, MapFinal, Paired, RandomSampler};
use apr_core::metrics::SuccessStats;
use apr_core::TaskConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::agent;
use crate::config;
use crate::error::CliError;
use crate::manifest::{self, Recorder};

#[derive(Debug, Args)]
pub struct TrainPpoArgs {
    /// PPO hyperparameters (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Total environment steps; overrides the config file.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Training seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Games per evaluation agent (0 skips evaluation).
    #[arg(long, default_value_t = 10_000)]
    pub eval_games: usize,
    /// Also save `policy_<steps>.bin` every this many steps.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long, default_value = "ppo")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPpoSpec {
    pub task: TaskConfig,
    pub ppo: PpoConfig,
    pub eval_games: usize,
    pub checkpoint_every: Option<u64>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub agent: String,
    pub games: usize,
    pub success: f64,
    pub ci95: f64,
}

impl EvalEntry {
    fn new(agent: &str, stats: &SuccessStats) -> Self {
        EvalEntry { agent: agent.into(), games: stats.overall.n, success: stats.rate(), ci95: stats.overall.ci95() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoEval {
    pub steps: u64,
    pub agents: Vec<EvalEntry>,
    /// Exact expected success of DP sampling with a MAP final.
    pub dp_value: f64,
    /// `dp_value` minus greedy PPO+MAP success.
    pub gap_to_dp: f64,
    /// Greedy PPO+MAP minus random+MAP success.
    pub gain_over_random: f64,
}

pub fn resolve(args: &TrainPpoArgs) -> Result<TrainPpoSpec, CliError> {
    let mut ppo: PpoConfig = config::load(args.config.as_deref())?;
    if let Some(s) = args.steps {
        ppo.total_steps = s;
    }
    if let Some(s) = args.seed {
        ppo.seed = s;
    }
    Ok(TrainPpoSpec {
        task: config::load(args.task.as_deref())?,
        ppo,
        eval_games: args.eval_games,
        checkpoint_every: args.checkpoint_every,
        out_dir: args.out_dir.clone(),
    })
}

/// Evaluates greedy and stochastic PPO, random and DP samplers, all with a MAP final.
pub fn evaluate(task: &TaskConfig, policy: Arc<ppo::PpoPolicy>, games: usize, steps: u64) -> Result<PpoEval, CliError> {
    let dp = agent::solve(task)?;
    let (greedy, _) = agents::evaluate_agent(task, games, || Paired::new(PpoSampler::greedy(policy.clone()), MapFinal));
    let (stoch, _) = agents::evaluate_agent(task, games, || Paired::new(PpoSampler::new(policy.clone()), MapFinal));
    let (random, _) = agents::evaluate_agent(task, games, || Paired::new(RandomSampler, MapFinal));
    let (dps, _) = agents::evaluate_agent(task, games, || Paired::new(DpSampler::new(dp.clone()), MapFinal));
    Ok(PpoEval {
        steps,
        dp_value: dp.root_value(),
        gap_to_dp: dp.root_value() - greedy.rate(),
        gain_over_random: greedy.rate() - random.rate(),
        agents: vec![
            EvalEntry::new("ppo-greedy+map", &greedy),
            EvalEntry::new("ppo+map", &stoch),
            EvalEntry::new("random+map", &random),
            EvalEntry::new("dp+map", &dps),
        ],
    })
}

pub fn run(spec: &TrainPpoSpec) -> Result<(), CliError> {
    let recorder = Recorder::start("train-ppo");
    std::fs::create_dir_all(&spec.out_dir).map_err(CliError::io(&spec.out_dir))?;
    let mut trainer = Trainer::new(&spec.task, &spec.ppo)?;
    let mut outputs = Vec::new();
    let mut next_ckpt = spec.checkpoint_every.filter(|&n| n > 0);
    let mut save_err = None;
    let curve = trainer.train_until(spec.ppo.total_steps, |p, policy| {
        if p.iteration % 10 == 0 {
            tracing::info!(steps = p.steps, success = p.success_rate, invalid = p.invalid_rate, "ppo");
        }
        if let (Some(at), Some(every)) = (next_ckpt, spec.checkpoint_every) {
            if p.steps >= at {
                let path = spec.out_dir.join(format!("policy_{at}.bin"));
                match policy.save(&path) {
                    Ok(()) => outputs.push(path),
                    Err(e) => save_err = Some(CliError::Data(e.to_string())),
                }
                next_ckpt = Some(at + every);
            }
        }
    })?;
    if let Some(e) = save_err {
        return Err(e);
    }
    let policy = Arc::new(trainer.into_policy());
    let path = spec.out_dir.join("policy.bin");
    policy.save(&path).map_err(|e| CliError::Data(e.to_string()))?;
    outputs.push(path);
    let path = spec.out_dir.join("curves.tsv");
    manifest::write_text(&path, &ppo::curves_tsv(&curve))?;
    outputs.push(path);
    if spec.eval_games > 0 {
        let steps = curve.last().map_or(0, |p| p.steps);
        let eval = evaluate(&spec.task, policy, spec.eval_games, steps)?;
        tracing::info!(gap_to_dp = eval.gap_to_dp, gain_over_random = eval.gain_over_random, "evaluated");
        let path = spec.out_dir.join("eval.json");
        manifest::write_json(&path, &eval)?;
        outputs.push(path);
    }
    recorder.finish(
        &manifest::for_dir(&spec.out_dir),
        spec,
        vec![],
        outputs,
        BTreeMap::from([("train".to_string(), spec.ppo.seed), ("eval".to_string(), spec.task.seed)]),
    )?;
    Ok(())
}
