//! Four-parameter mechanistic model of sampling and inference.
//!
//! Memory: `h_t = (1 − β) h_{t−1} + Δh_t` on the centred log-evidence state.
//! Strategy: internal posterior `softmax(κ_x h)`, separately for sampling and
//! the final choice. Choice bias `ω_x` and the occlusion mask (occluded arms
//! weighted by `1/θ`) multiply the internal posterior before renormalizing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, Agent, Observation};
use crate::bayes::{self, LlrConstants};
use crate::env::{ArmSet, Outcome, TaskConfig, Trajectory};
use crate::rng::StreamRng;
use crate::util::sample_categorical;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("policy has no positive mass")]
    DegeneratePolicy,
}

/// Fitted or hand-set model parameters. θ is stored as `log_theta`, the
/// scale the fitted tables report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechParams {
    pub beta: f64,
    pub kappa_s: f64,
    pub kappa_f: f64,
    pub omega_s: Vec<f64>,
    pub omega_f: Vec<f64>,
    pub log_theta: f64,
}

impl MechParams {
    /// Exact-Bayes memory, posterior-proportional choices, no bias.
    pub fn neutral(k: usize) -> Self {
        MechParams {
            beta: 0.0,
            kappa_s: 1.0,
            kappa_f: 1.0,
            omega_s: bayes::uniform(k),
            omega_f: bayes::uniform(k),
            log_theta: 0.0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.log_theta.exp()
    }

    pub fn k(&self) -> usize {
        self.omega_s.len()
    }

    pub fn validate(&self) -> Result<(), MechError> {
        let bad = |m: String| Err(MechError::InvalidParams(m));
        if !(-1.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [-1, 1], got {}", self.beta));
        }
        if !(self.kappa_s >= 0.0 && self.kappa_f >= 0.0) {
            return bad("kappas must be non-negative".into());
        }
        if !self.log_theta.is_finite() {
            return bad("log theta must be finite".into());
        }
        if self.omega_s.len() != self.omega_f.len() || self.omega_s.len() < 2 {
            return bad("bias vectors must share a length of at least 2".into());
        }
        for (name, w) in [("omega_s", &self.omega_s), ("omega_f", &self.omega_f)] {
            if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                return bad(format!("{name} must lie on the simplex"));
            }
        }
        Ok(())
    }

    /// Renormalizes both bias vectors (table entries are rounded to 3 decimals).
    pub fn normalized(mut self) -> Self {
        for w in [&mut self.omega_s, &mut self.omega_f] {
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
        }
        self
    }
}

/// Leaky memory state, always zero-sum.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub h: Vec<f64>,
}

impl MemoryState {
    /// Centred log of a uniform prior, i.e. zeros.
    pub fn new(k: usize) -> Self {
        MemoryState { h: vec![0.0; k] }
    }
}

/// `h' = (1 − β) h + Δh`.
pub fn memory_update(h: &[f64], dh: &[f64], beta: f64) -> Vec<f64> {
    let rho = 1.0 - beta;
    h.iter().zip(dh).map(|(a, d)| rho * a + d).collect()
}

/// `softmax(κ h)`.
pub fn internal_posterior(h: &[f64], kappa: f64) -> Vec<f64> {
    let scaled: Vec<f64> = h.iter().map(|x| kappa * x).collect();
    bayes::softmax(&scaled)
}

/// Available arms weigh 1, occluded arms `1/θ`.
pub fn occlusion_mask(available: ArmSet, k: usize, theta: f64) -> Vec<f64> {
    (0..k).map(|j| if available.contains(j) { 1.0 } else { 1.0 / theta }).collect()
}

/// `π ∝ internal ⊙ ω ⊙ m`.
pub fn policy(internal: &[f64], omega: &[f64], mask: &[f64]) -> Result<Vec<f64>, MechError> {
    let u: Vec<f64> = internal
        .iter()
        .zip(omega)
        .zip(mask)
        .map(|((p, w), m)| p * w * m)
        .collect();
    let total: f64 = u.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(MechError::DegeneratePolicy);
    }
    Ok(u.into_iter().map(|x| x / total).collect())
}

/// Entropy in nats, with `0 log 0 = 0`.
pub fn bias_entropy(omega: &[f64]) -> f64 {
    -omega.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
}

/// Log-space policy, usable when the product form would underflow.
pub(crate) fn log_policy(h: &[f64], kappa: f64, log_omega: &[f64], log_mask: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = (0..h.len())
        .map(|j| kappa * h[j] + log_omega[j] + log_mask[j])
        .collect();
    let lse = bayes::log_sum_exp(&z);
    z.into_iter().map(|x| x - lse).collect()
}

/// The model as a playing agent.
#[derive(Debug, Clone)]
pub struct MechAgent {
    params: MechParams,
    llr: LlrConstants,
    log_omega_s: Vec<f64>,
    log_omega_f: Vec<f64>,
    memory: MemoryState,
    label: String,
}

impl MechAgent {
    pub fn new(params: MechParams, config: &TaskConfig) -> Result<Self, MechError> {
        params.validate()?;
        if params.k() != config.k_arms {
            return Err(MechError::InvalidParams(format!(
                "parameters are for {} arms, task has {}",
                params.k(),
                config.k_arms
            )));
        }
        Ok(MechAgent {
            log_omega_s: params.omega_s.iter().map(|w| w.ln()).collect(),
            log_omega_f: params.omega_f.iter().map(|w| w.ln()).collect(),
            llr: LlrConstants::from_config(config),
            memory: MemoryState::new(config.k_arms),
            label: "mech".into(),
            params,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }

    fn draw(&self, log_pi: &[f64], rng: &mut StreamRng) -> usize {
        let pi: Vec<f64> = log_pi.iter().map(|x| x.exp()).collect();
        sample_categorical(&pi, rng)
    }

    /// Sampling policy at the current (pre-observation) memory state.
    pub fn sampling_policy(&self, available: ArmSet) -> Vec<f64> {
        let k = self.params.k();
        let log_mask: Vec<f64> = (0..k)
            .map(|j| if available.contains(j) { 0.0 } else { -self.params.log_theta })
            .collect();
        log_policy(&self.memory.h, self.params.kappa_s, &self.log_omega_s, &log_mask)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    /// Final policy from the current memory, all arms available.
    pub fn final_policy(&self) -> Vec<f64> {
        let zeros = vec![0.0; self.params.k()];
        log_policy(&self.memory.h, self.params.kappa_f, &self.log_omega_f, &zeros)
            .into_iter()
            .map(f64::exp)
            .collect()
    }
}

impl Agent for MechAgent {
    fn id(&self) -> String {
        self.label.clone()
    }

    fn begin_game(&mut self) {
        self.memory = MemoryState::new(self.params.k());
    }

    fn sample(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        let k = self.params.k();
        let log_mask: Vec<f64> = (0..k)
            .map(|j| if obs.available.contains(j) { 0.0 } else { -self.params.log_theta })
            .collect();
        let lp = log_policy(&self.memory.h, self.params.kappa_s, &self.log_omega_s, &log_mask);
        Some(self.draw(&lp, rng))
    }

    fn observe(&mut self, arm: Option<usize>, outcome: Option<Outcome>) {
        // Invalid rounds carry no evidence and leave memory untouched.
        if let (Some(a), Some(o)) = (arm, outcome) {
            let dh = self.llr.centered_increment(a, o, self.params.k());
            self.memory.h = memory_update(&self.memory.h, &dh, self.params.beta);
        }
    }

    fn decide(&mut self, _obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        let zeros = vec![0.0; self.params.k()];
        let lp = log_policy(&self.memory.h, self.params.kappa_f, &self.log_omega_f, &zeros);
        Some(self.draw(&lp, rng))
    }
}

/// Rolls out `n_games` games of the model. Game `i` uses the game seed
/// derived from `(config.seed, i)`, so results do not depend on scheduling.
pub fn simulate(
    params: &MechParams,
    config: &TaskConfig,
    n_games: usize,
) -> Result<Vec<Trajectory>, MechError> {
    let agent = MechAgent::new(params.clone(), config)?;
    Ok(agents::play_games(config, n_games, || agent.clone(), "sim"))
}
