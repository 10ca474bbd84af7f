//! Runtime selection of reference agents.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use apr_core::agents::dp::{self, DpPolicy, DpSampler};
use apr_core::agents::ppo::{PpoPolicy, PpoSampler};
use apr_core::agents::{
    AntiMapFinal, FinalRule, GreedyMapSampler, MapFinal, Observation, Paired, RandomFinal, RandomSampler, Sampler,
};
use apr_core::rng::StreamRng;
use apr_core::TaskConfig;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FinalKind {
    Map,
    Random,
    Antimap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    Random,
    Greedy,
    Dp,
    Ppo {
        checkpoint: PathBuf,
        count_scale: f64,
        greedy: bool,
    },
}

#[derive(Debug, Clone)]
pub enum AnySampler {
    Random(RandomSampler),
    Greedy(GreedyMapSampler),
    Dp(DpSampler),
    Ppo(PpoSampler),
}

impl Sampler for AnySampler {
    fn id(&self) -> String {
        match self {
            AnySampler::Random(s) => s.id(),
            AnySampler::Greedy(s) => s.id(),
            AnySampler::Dp(s) => s.id(),
            AnySampler::Ppo(s) => s.id(),
        }
    }

    fn choose(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        match self {
            AnySampler::Random(s) => s.choose(obs, rng),
            AnySampler::Greedy(s) => s.choose(obs, rng),
            AnySampler::Dp(s) => s.choose(obs, rng),
            AnySampler::Ppo(s) => s.choose(obs, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub enum AnyFinal {
    Map(MapFinal),
    Random(RandomFinal),
    AntiMap(AntiMapFinal),
}

impl FinalRule for AnyFinal {
    fn id(&self) -> String {
        match self {
            AnyFinal::Map(f) => f.id(),
            AnyFinal::Random(f) => f.id(),
            AnyFinal::AntiMap(f) => f.id(),
        }
    }

    fn choose(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        match self {
            AnyFinal::Map(f) => f.choose(obs, rng),
            AnyFinal::Random(f) => f.choose(obs, rng),
            AnyFinal::AntiMap(f) => f.choose(obs, rng),
        }
    }
}

impl From<FinalKind> for AnyFinal {
    fn from(k: FinalKind) -> Self {
        match k {
            FinalKind::Map => AnyFinal::Map(MapFinal),
            FinalKind::Random => AnyFinal::Random(RandomFinal),
            FinalKind::Antimap => AnyFinal::AntiMap(AntiMapFinal),
        }
    }
}

pub fn load_ppo(path: &Path, count_scale: f64, task: &TaskConfig) -> Result<Arc<PpoPolicy>, CliError> {
    let policy = PpoPolicy::load(path, count_scale).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if policy.k() != task.k_arms {
        return Err(CliError::Data(format!(
            "{}: checkpoint is for {} arms, task has {}",
            path.display(),
            policy.k(),
            task.k_arms
        )));
    }
    Ok(Arc::new(policy))
}

pub fn solve(task: &TaskConfig) -> Result<Arc<DpPolicy>, CliError> {
    Ok(Arc::new(dp::solve_dp(task)?))
}

/// Builds the sampler once (solving or loading what it needs).
pub fn build_sampler(spec: &SamplerSpec, task: &TaskConfig) -> Result<AnySampler, CliError> {
    Ok(match spec {
        SamplerSpec::Random => AnySampler::Random(RandomSampler),
        SamplerSpec::Greedy => AnySampler::Greedy(GreedyMapSampler),
        SamplerSpec::Dp => AnySampler::Dp(DpSampler::new(solve(task)?)),
        SamplerSpec::Ppo { checkpoint, count_scale, greedy } => {
            let policy = load_ppo(checkpoint, *count_scale, task)?;
            AnySampler::Ppo(if *greedy { PpoSampler::greedy(policy) } else { PpoSampler::new(policy) })
        }
    })
}

pub fn paired(sampler: AnySampler, final_rule: FinalKind) -> Paired<AnySampler, AnyFinal> {
    Paired::new(sampler, final_rule.into())
}
