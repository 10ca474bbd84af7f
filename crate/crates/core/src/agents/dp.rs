//! Exact dynamic-programming sampler.
//!
//! The planner state is the vector of per-arm (red, green) counts; with a
//! policy that never picks an occluded arm the number of completed rounds is
//! the sum of those counts. The unknown horizon enters through the
//! termination hazard `P(N = t | N ≥ t)`, and occlusion masks are
//! marginalised with the environment's mask distribution, so the mask never
//! has to be carried in the state.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use super::{Observation, Sampler};
use crate::bayes::{self, LlrConstants};
use crate::env::{ArmCounts, ArmSet, TaskConfig};
use crate::rng::StreamRng;

/// Largest supported horizon: counts are packed four bits per field.
pub const MAX_HORIZON: usize = 15;
/// Largest supported arm count: keys hold `2K` four-bit fields in a `u32`.
pub const MAX_ARMS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("DP supports 2..={MAX_ARMS} arms and horizons up to {MAX_HORIZON}; got k={k}, n_max={n_max}")]
    Capacity { k: usize, n_max: usize },
    #[error(transparent)]
    Config(#[from] crate::env::EnvError),
}

/// Probability the game ends after `t` completed rounds, given it lasted that long.
pub fn hazard(config: &TaskConfig, t: usize) -> f64 {
    if t < config.n_min {
        0.0
    } else if t >= config.n_max {
        1.0
    } else {
        1.0 / (config.n_max - t + 1) as f64
    }
}

/// Packs counts as `red_0, green_0, red_1, …`, four bits each.
fn pack(counts: &[ArmCounts]) -> Option<u32> {
    let mut key = 0u32;
    for (i, c) in counts.iter().enumerate() {
        if c.red > 15 || c.green > 15 {
            return None;
        }
        key |= c.red << (8 * i);
        key |= c.green << (8 * i + 4);
    }
    Some(key)
}

fn unpack(key: u32, k: usize) -> Vec<ArmCounts> {
    (0..k)
        .map(|i| ArmCounts {
            red: (key >> (8 * i)) & 0xF,
            green: (key >> (8 * i + 4)) & 0xF,
        })
        .collect()
}

/// All ways to place `total` observations into `parts` four-bit fields.
fn compositions(total: u32, parts: usize) -> Vec<u32> {
    fn rec(remaining: u32, field: usize, parts: usize, key: u32, out: &mut Vec<u32>) {
        // field i sits at bit 4i once red/green are interleaved per arm
        if field + 1 == parts {
            out.push(key | remaining << (4 * field));
            return;
        }
        for v in 0..=remaining {
            rec(remaining - v, field + 1, parts, key | v << (4 * field), out);
        }
    }
    let mut out = Vec::new();
    rec(total, 0, parts, 0, &mut out);
    out
}

#[derive(Debug, Clone)]
struct Level {
    keys: Vec<u32>,
    index: HashMap<u32, u32>,
    value: Vec<f64>,
    /// Arms ranked by continuation value, two bits per slot, best first.
    order: Vec<u8>,
}

/// Value and action tables for every reachable count state.
#[derive(Debug, Clone)]
pub struct DpPolicy {
    config: TaskConfig,
    levels: Vec<Level>,
}

/// Solves the sampling problem by backward induction.
pub fn solve_dp(config: &TaskConfig) -> Result<DpPolicy, DpError> {
    config.validate()?;
    let k = config.k_arms;
    if !(2..=MAX_ARMS).contains(&k) || config.n_max > MAX_HORIZON {
        return Err(DpError::Capacity { k, n_max: config.n_max });
    }
    let llr = LlrConstants::from_config(config);
    let masks = config.mask_distribution();
    let (ab, au) = (config.alpha_biased, config.alpha_unbiased);

    let mut levels: Vec<Level> = Vec::with_capacity(config.n_max + 1);
    for t in (0..=config.n_max).rev() {
        let keys = compositions(t as u32, 2 * k);
        let hz = hazard(config, t);
        let next = levels.last();
        let rows: Vec<(f64, u8)> = keys
            .par_iter()
            .map(|&key| {
                let counts = unpack(key, k);
                let p = bayes::posterior_from_counts(&counts, &llr);
                let stop = p.iter().copied().fold(0.0, f64::max);
                let Some(next) = next.filter(|_| hz < 1.0) else {
                    return (stop, 0);
                };
                let q: Vec<f64> = (0..k)
                    .map(|a| {
                        let p_red = au + (ab - au) * p[a];
                        let red = next.value[next.index[&(key + (1 << (8 * a)))] as usize];
                        let green = next.value[next.index[&(key + (1 << (8 * a + 4)))] as usize];
                        p_red * red + (1.0 - p_red) * green
                    })
                    .collect();
                // Symmetric states differ only by summation-order rounding, so
                // rank on a 1e-12 grid; the stable sort keeps the lowest index first.
                let grid: Vec<i64> = q.iter().map(|v| (v * 1e12).round() as i64).collect();
                let mut ranked: Vec<usize> = (0..k).collect();
                ranked.sort_by_key(|&a| std::cmp::Reverse(grid[a]));
                let order = ranked.iter().enumerate().fold(0u8, |acc, (slot, &a)| acc | (a as u8) << (2 * slot));
                let cont: f64 = masks
                    .iter()
                    .map(|(mask, w)| {
                        let best = ranked.iter().find(|&&a| mask.contains(a)).expect("non-empty mask");
                        w * q[*best]
                    })
                    .sum();
                (hz * stop + (1.0 - hz) * cont, order)
            })
            .collect();
        let index = keys.iter().enumerate().map(|(i, &key)| (key, i as u32)).collect();
        let (value, order) = rows.into_iter().unzip();
        levels.push(Level { keys, index, value, order });
    }
    levels.reverse();
    Ok(DpPolicy { config: config.clone(), levels })
}

impl DpPolicy {
    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn n_states(&self) -> usize {
        self.levels.iter().map(|l| l.keys.len()).sum()
    }

    /// Expected success of DP sampling with a MAP final from the empty state.
    pub fn root_value(&self) -> f64 {
        self.levels[0].value[0]
    }

    fn locate(&self, counts: &[ArmCounts]) -> Option<(&Level, usize)> {
        let t: u32 = counts.iter().map(|c| c.total()).sum();
        let level = self.levels.get(t as usize)?;
        let i = *level.index.get(&pack(counts)?)?;
        Some((level, i as usize))
    }

    /// `V(counts, t)` with `t` the number of counted observations.
    pub fn value(&self, counts: &[ArmCounts]) -> Option<f64> {
        self.locate(counts).map(|(l, i)| l.value[i])
    }

    /// Best available arm in a count state.
    pub fn action(&self, counts: &[ArmCounts], available: ArmSet) -> Option<usize> {
        let (level, i) = self.locate(counts)?;
        let order = level.order[i];
        (0..self.config.k_arms)
            .map(|slot| ((order >> (2 * slot)) & 0b11) as usize)
            .find(|&a| available.contains(a))
    }

    /// Iterates `(counts, value)` over one level.
    pub fn level_values(&self, t: usize) -> impl Iterator<Item = (Vec<ArmCounts>, f64)> + '_ {
        let k = self.config.k_arms;
        let level = &self.levels[t];
        level.keys.iter().zip(&level.value).map(move |(&key, &v)| (unpack(key, k), v))
    }
}

/// Sampler backed by a solved [`DpPolicy`]. Falls back to the greedy MAP arm
/// in states the table does not cover (e.g. after an abstention).
#[derive(Debug, Clone)]
pub struct DpSampler {
    policy: Arc<DpPolicy>,
}

impl DpSampler {
    pub fn new(policy: Arc<DpPolicy>) -> Self {
        DpSampler { policy }
    }
}

impl Sampler for DpSampler {
    fn id(&self) -> String {
        "dp".into()
    }

    fn choose(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        self.policy
            .action(obs.counts, obs.available)
            .or_else(|| super::GreedyMapSampler.choose(obs, rng))
    }
}
