//! Proximal policy optimization for the sampling phase.
//!
//! The policy sees per-arm (red, green) counts multiplied by `count_scale`
//! followed by the 0/1 availability mask (`3K` inputs), and emits one logit
//! per arm.
//! The final answer is always MAP on the evidence; the episode reward is
//! `reward_correct` when that answer is right, plus `reward_invalid_sample`
//! for every occluded pick. Rewards are multiplied by `reward_scale` before
//! entering the returns.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::nn::{self, Adam, CheckpointError, Mlp, Trace};
use super::{Observation, Sampler};
use crate::bayes::{self, LlrConstants};
use crate::env::{ArmCounts, ArmSet, EnvError, Game, Phase, TaskConfig};
use crate::rng::{self, Stream, StreamRng};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite {what} at iteration {iteration} (step {steps}): {detail}")]
    NonFinite { iteration: usize, steps: u64, what: &'static str, detail: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint shape {found:?} does not fit a {k}-arm task")]
    Shape { k: usize, found: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub total_steps: u64,
    pub learning_rate: f64,
    /// Parallel environments; one rollout is `n_envs × n_steps` transitions.
    pub n_envs: usize,
    pub n_steps: usize,
    pub n_epochs: usize,
    pub minibatch_size: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub reward_scale: f64,
    /// Multiplier applied to the raw counts in the observation.
    pub count_scale: f64,
    pub normalize_advantage: bool,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            total_steps: 5_000_000,
            learning_rate: 2e-5,
            n_envs: 8,
            n_steps: 256,
            n_epochs: 10,
            minibatch_size: 128,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            ent_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            reward_scale: 0.01,
            count_scale: 1.0,
            normalize_advantage: true,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn rollout_len(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.to_string()));
        if self.n_envs == 0 || self.n_steps == 0 || self.n_epochs == 0 || self.minibatch_size == 0 {
            return bad("n_envs, n_steps, n_epochs and minibatch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.clip_range > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("learning_rate, clip_range and max_grad_norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.ent_coef < 0.0 || self.vf_coef < 0.0 || !(self.reward_scale > 0.0) || !(self.count_scale > 0.0) {
            return bad("coefficients must be non-negative and reward_scale, count_scale positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be non-empty and positive");
        }
        Ok(())
    }
}

pub fn obs_dim(k: usize) -> usize {
    3 * k
}

/// Network input for a count state and availability mask.
pub fn observation(counts: &[ArmCounts], available: ArmSet, scale: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * counts.len());
    for c in counts {
        x.push(c.red as f64 * scale);
        x.push(c.green as f64 * scale);
    }
    x.extend((0..counts.len()).map(|a| if available.contains(a) { 1.0 } else { 0.0 }));
    x
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = bayes::log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// Trained actor and critic.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoPolicy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub count_scale: f64,
}

impl PpoPolicy {
    pub fn new(k: usize, count_scale: f64, hidden: &[usize], rng: &mut StreamRng) -> Self {
        let mut sizes = vec![obs_dim(k)];
        sizes.extend_from_slice(hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(k);
        sizes.push(1);
        let gain = std::f64::consts::SQRT_2;
        PpoPolicy {
            actor: Mlp::new(&actor_sizes, gain, 0.01, rng),
            critic: Mlp::new(&sizes, gain, 1.0, rng),
            count_scale,
        }
    }

    pub fn k(&self) -> usize {
        *self.actor.sizes().last().expect("sizes")
    }

    pub fn logits(&self, counts: &[ArmCounts], available: ArmSet) -> Vec<f64> {
        self.actor.forward(&observation(counts, available, self.count_scale))
    }

    /// Deterministic action: argmax over all logits, lowest index on ties.
    pub fn act(&self, counts: &[ArmCounts], available: ArmSet) -> usize {
        bayes::map_choice(&self.logits(counts, available))
    }

    pub fn save(&self, path: &Path) -> Result<(), PpoError> {
        let mut buf = Vec::new();
        nn::write_checkpoint(&mut buf, &[&self.actor, &self.critic]).map_err(CheckpointError::from)?;
        std::fs::write(path, buf).map_err(CheckpointError::from)?;
        Ok(())
    }

    pub fn load(path: &Path, count_scale: f64) -> Result<Self, PpoError> {
        let bytes = std::fs::read(path).map_err(CheckpointError::from)?;
        let mut nets = nn::read_checkpoint(&mut bytes.as_slice(), 2)?;
        let critic = nets.pop().expect("two networks");
        let actor = nets.pop().expect("two networks");
        let k = *actor.sizes().last().expect("sizes");
        let fits = actor.sizes()[0] == obs_dim(k)
            && critic.sizes()[0] == obs_dim(k)
            && critic.sizes().last() == Some(&1);
        if !fits {
            return Err(PpoError::Shape { k, found: actor.sizes().to_vec() });
        }
        Ok(PpoPolicy { actor, critic, count_scale })
    }
}

/// Sampler backed by a trained policy: draws from the action distribution,
/// or takes its argmax when `greedy`.
#[derive(Debug, Clone)]
pub struct PpoSampler {
    policy: Arc<PpoPolicy>,
    greedy: bool,
}

impl PpoSampler {
    pub fn new(policy: Arc<PpoPolicy>) -> Self {
        PpoSampler { policy, greedy: false }
    }

    pub fn greedy(policy: Arc<PpoPolicy>) -> Self {
        PpoSampler { policy, greedy: true }
    }
}

impl Sampler for PpoSampler {
    fn id(&self) -> String {
        if self.greedy { "ppo-greedy".into() } else { "ppo".into() }
    }

    fn choose(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        if self.greedy {
            Some(self.policy.act(obs.counts, obs.available))
        } else {
            Some(nn::sample_logits(&self.policy.logits(obs.counts, obs.available), rng))
        }
    }
}

/// Coefficient of `∂ log π(a)` in the gradient of the clipped surrogate
/// `min(r A, clip(r, 1 ± ε) A)`. Zero when the clipped branch is active.
pub fn surrogate_grad_coeff(ratio: f64, adv: f64, clip: f64) -> f64 {
    if (adv > 0.0 && ratio > 1.0 + clip) || (adv < 0.0 && ratio < 1.0 - clip) {
        0.0
    } else {
        ratio * adv
    }
}

/// Per-sample surrogate value.
pub fn surrogate(ratio: f64, adv: f64, clip: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

/// `(A − mean) / (std + 1e-8)` with the unbiased standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// One minibatch of training data.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Loss `policy + ent_coef · (−entropy) + vf_coef · value` on a batch, with
/// its gradients for actor and critic parameters.
pub fn loss_and_grads(policy: &PpoPolicy, batch: &Batch, cfg: &PpoConfig) -> (LossStats, Vec<f64>, Vec<f64>) {
    let n = batch.actions.len() as f64;
    let mut ga = vec![0.0; policy.actor.n_params()];
    let mut gc = vec![0.0; policy.critic.n_params()];
    let mut s = LossStats::default();
    for i in 0..batch.actions.len() {
        let x = &batch.obs[i];
        let a = batch.actions[i];
        let trace: Trace = policy.actor.trace(x);
        let logp = log_softmax(trace.output());
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let entropy = -p.iter().zip(&logp).map(|(pi, li)| pi * li).sum::<f64>();
        let log_ratio = logp[a] - batch.old_logp[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        s.policy -= surrogate(ratio, adv, cfg.clip_range) / n;
        s.entropy += entropy / n;
        s.approx_kl += ((ratio - 1.0) - log_ratio) / n;
        if (ratio - 1.0).abs() > cfg.clip_range {
            s.clip_fraction += 1.0 / n;
        }
        let coeff = surrogate_grad_coeff(ratio, adv, cfg.clip_range);
        let dlogits: Vec<f64> = (0..p.len())
            .map(|j| {
                let onehot = if j == a { 1.0 } else { 0.0 };
                let d_policy = -coeff * (onehot - p[j]);
                let d_entropy = cfg.ent_coef * p[j] * (logp[j] + entropy);
                (d_policy + d_entropy) / n
            })
            .collect();
        policy.actor.backward(&trace, &dlogits, &mut ga);

        let ct = policy.critic.trace(x);
        let err = ct.output()[0] - batch.returns[i];
        s.value += err * err / n;
        policy.critic.backward(&ct, &[cfg.vf_coef * 2.0 * err / n], &mut gc);
    }
    s.total = s.policy - cfg.ent_coef * s.entropy + cfg.vf_coef * s.value;
    (s, ga, gc)
}

/// Training diagnostics for one rollout/update iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub steps: u64,
    pub episodes: usize,
    /// Mean unscaled episode return of episodes finished in this rollout.
    pub mean_return: f64,
    pub success_rate: f64,
    pub invalid_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

pub fn curves_tsv(points: &[CurvePoint]) -> String {
    let mut out = String::from(
        "iteration\tsteps\tepisodes\tmean_return\tsuccess_rate\tinvalid_rate\tpolicy_loss\tvalue_loss\tentropy\tapprox_kl\tclip_fraction\tgrad_norm\n",
    );
    for p in points {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.5}\t{:.6}\t{:.6}\t{:.5}\t{:.6}\t{:.4}\t{:.5}",
            p.iteration,
            p.steps,
            p.episodes,
            p.mean_return,
            p.success_rate,
            p.invalid_rate,
            p.policy_loss,
            p.value_loss,
            p.entropy,
            p.approx_kl,
            p.clip_fraction,
            p.grad_norm
        );
    }
    out
}

struct EnvSlot {
    game: Game,
    episodes: u64,
    ret: f64,
}

/// Stateful trainer; one call to [`Trainer::iterate`] is one rollout plus update.
pub struct Trainer {
    task: TaskConfig,
    cfg: PpoConfig,
    llr: LlrConstants,
    policy: PpoPolicy,
    opt_actor: Adam,
    opt_critic: Adam,
    envs: Vec<EnvSlot>,
    rng: StreamRng,
    steps: u64,
    iteration: usize,
}

fn env_seed(master: u64, env: usize, episode: u64) -> u64 {
    rng::game_seed(rng::game_seed(master, env as u64), episode)
}

impl Trainer {
    pub fn new(task: &TaskConfig, cfg: &PpoConfig) -> Result<Self, PpoError> {
        task.validate()?;
        cfg.validate()?;
        let mut init_rng = rng::stream(cfg.seed, Stream::Auxiliary);
        let policy = PpoPolicy::new(task.k_arms, cfg.count_scale, &cfg.hidden, &mut init_rng);
        let envs = (0..cfg.n_envs)
            .map(|e| {
                Ok(EnvSlot { game: Game::new(task, env_seed(cfg.seed, e, 0))?, episodes: 0, ret: 0.0 })
            })
            .collect::<Result<Vec<_>, EnvError>>()?;
        Ok(Trainer {
            llr: LlrConstants::from_config(task),
            opt_actor: Adam::new(policy.actor.n_params(), cfg.learning_rate),
            opt_critic: Adam::new(policy.critic.n_params(), cfg.learning_rate),
            task: task.clone(),
            cfg: cfg.clone(),
            policy,
            envs,
            rng: rng::stream(cfg.seed, Stream::Agent),
            steps: 0,
            iteration: 0,
        })
    }

    pub fn policy(&self) -> &PpoPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> PpoPolicy {
        self.policy
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn non_finite(&self, what: &'static str, detail: String) -> PpoError {
        PpoError::NonFinite { iteration: self.iteration, steps: self.steps, what, detail }
    }

    /// Collects one rollout and runs the PPO epochs on it.
    pub fn iterate(&mut self) -> Result<CurvePoint, PpoError> {
        let cfg = self.cfg.clone();
        let (n_envs, n_steps) = (cfg.n_envs, cfg.n_steps);
        let total = n_envs * n_steps;
        let mut obs = Vec::with_capacity(total);
        let mut actions = Vec::with_capacity(total);
        let mut logps = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut rewards = Vec::with_capacity(total);
        let mut dones = Vec::with_capacity(total);
        let (mut episodes, mut successes, mut invalid, mut ret_sum) = (0usize, 0usize, 0usize, 0.0);

        for _ in 0..n_steps {
            for e in 0..n_envs {
                let state = self.envs[e].game.state();
                let x = observation(&state.counts, state.available, cfg.count_scale);
                let logits = self.policy.actor.forward(&x);
                let value = self.policy.critic.forward(&x)[0];
                if !value.is_finite() || logits.iter().any(|l| !l.is_finite()) {
                    return Err(self.non_finite("network output", format!("logits {logits:?}, value {value}")));
                }
                let a = nn::sample_logits(&logits, &mut self.rng);
                let logp = log_softmax(&logits)[a];
                let slot = &mut self.envs[e];
                let step = slot.game.step(Some(a))?;
                let mut reward = 0.0;
                if !step.valid {
                    reward += self.task.reward_invalid_sample as f64;
                    invalid += 1;
                }
                let done = slot.game.state().phase == Phase::Inference;
                if done {
                    let counts = &slot.game.state().counts;
                    let answer = bayes::map_choice(&bayes::posterior_from_counts(counts, &self.llr));
                    let result = slot.game.finalize(Some(answer))?;
                    if result.correct {
                        reward += self.task.reward_correct as f64;
                        successes += 1;
                    }
                }
                slot.ret += reward;
                if done {
                    episodes += 1;
                    ret_sum += slot.ret;
                    slot.ret = 0.0;
                    slot.episodes += 1;
                    slot.game = Game::new(&self.task, env_seed(cfg.seed, e, slot.episodes))?;
                }
                obs.push(x);
                actions.push(a);
                logps.push(logp);
                values.push(value);
                rewards.push(reward * cfg.reward_scale);
                dones.push(done);
            }
        }
        self.steps += total as u64;

        // GAE; buffer index is step * n_envs + env
        let mut advantages = vec![0.0; total];
        for e in 0..n_envs {
            let state = self.envs[e].game.state();
            let x = observation(&state.counts, state.available, cfg.count_scale);
            let mut next_value = self.policy.critic.forward(&x)[0];
            let mut next_adv = 0.0;
            for s in (0..n_steps).rev() {
                let i = s * n_envs + e;
                let live = if dones[i] { 0.0 } else { 1.0 };
                let delta = rewards[i] + cfg.gamma * next_value * live - values[i];
                next_adv = delta + cfg.gamma * cfg.gae_lambda * live * next_adv;
                advantages[i] = next_adv;
                next_value = values[i];
            }
        }
        let returns: Vec<f64> = advantages.iter().zip(&values).map(|(a, v)| a + v).collect();

        let mut order: Vec<usize> = (0..total).collect();
        let mut acc = LossStats::default();
        let mut grad_norm = 0.0;
        let mut n_updates = 0usize;
        for _ in 0..cfg.n_epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(cfg.minibatch_size) {
                let mut batch = Batch {
                    obs: chunk.iter().map(|&i| obs[i].clone()).collect(),
                    actions: chunk.iter().map(|&i| actions[i]).collect(),
                    old_logp: chunk.iter().map(|&i| logps[i]).collect(),
                    advantages: chunk.iter().map(|&i| advantages[i]).collect(),
                    returns: chunk.iter().map(|&i| returns[i]).collect(),
                };
                if cfg.normalize_advantage {
                    normalize_advantages(&mut batch.advantages);
                }
                let (stats, mut ga, mut gc) = loss_and_grads(&self.policy, &batch, &cfg);
                if !stats.total.is_finite() {
                    return Err(self.non_finite("loss", format!("{stats:?}")));
                }
                grad_norm = nn::clip_grad_norm(&mut [&mut ga, &mut gc], cfg.max_grad_norm);
                if !grad_norm.is_finite() {
                    return Err(self.non_finite("gradient", format!("norm {grad_norm}")));
                }
                self.opt_actor.step(&mut self.policy.actor.params, &ga);
                self.opt_critic.step(&mut self.policy.critic.params, &gc);
                acc.policy += stats.policy;
                acc.value += stats.value;
                acc.entropy += stats.entropy;
                acc.approx_kl += stats.approx_kl;
                acc.clip_fraction += stats.clip_fraction;
                n_updates += 1;
            }
        }
        let m = n_updates.max(1) as f64;
        let point = CurvePoint {
            iteration: self.iteration,
            steps: self.steps,
            episodes,
            mean_return: if episodes > 0 { ret_sum / episodes as f64 } else { 0.0 },
            success_rate: if episodes > 0 { successes as f64 / episodes as f64 } else { 0.0 },
            invalid_rate: invalid as f64 / total as f64,
            policy_loss: acc.policy / m,
            value_loss: acc.value / m,
            entropy: acc.entropy / m,
            approx_kl: acc.approx_kl / m,
            clip_fraction: acc.clip_fraction / m,
            grad_norm,
        };
        self.iteration += 1;
        Ok(point)
    }

    /// Iterates until at least `steps` transitions have been collected.
    pub fn train_until(
        &mut self,
        steps: u64,
        mut on_iteration: impl FnMut(&CurvePoint, &PpoPolicy),
    ) -> Result<Vec<CurvePoint>, PpoError> {
        let mut curve = Vec::new();
        while self.steps < steps {
            let p = self.iterate()?;
            on_iteration(&p, &self.policy);
            curve.push(p);
        }
        Ok(curve)
    }
}

/// Trains for `cfg.total_steps` transitions.
pub fn train_ppo(task: &TaskConfig, cfg: &PpoConfig) -> Result<(PpoPolicy, Vec<CurvePoint>), PpoError> {
    let mut trainer = Trainer::new(task, cfg)?;
    let curve = trainer.train_until(cfg.total_steps, |p, _| {
        tracing::debug!(iteration = p.iteration, steps = p.steps, success = p.success_rate, invalid = p.invalid_rate, "ppo");
    })?;
    Ok((trainer.into_policy(), curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> PpoConfig {
        PpoConfig { n_envs: 2, n_steps: 32, minibatch_size: 16, n_epochs: 2, ..PpoConfig::default() }
    }

    #[test]
    fn observation_layout() {
        let counts = vec![
            ArmCounts { red: 3, green: 0 },
            ArmCounts { red: 0, green: 15 },
            ArmCounts::default(),
            ArmCounts { red: 1, green: 1 },
        ];
        let x = observation(&counts, ArmSet::from_iter([0, 3]), 1.0 / 15.0);
        assert_eq!(x.len(), 12);
        assert_eq!(&x[..4], &[0.2, 0.0, 0.0, 1.0]);
        assert_eq!(&observation(&counts, ArmSet::full(4), 1.0)[..4], &[3.0, 0.0, 0.0, 15.0]);
        assert_eq!(&x[8..], &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn clipped_branch_has_zero_gradient() {
        let eps = 0.2;
        assert_eq!(surrogate_grad_coeff(1.3, 1.0, eps), 0.0);
        assert_eq!(surrogate_grad_coeff(0.7, -1.0, eps), 0.0);
        // on the pessimistic side the unclipped term stays active
        assert_eq!(surrogate_grad_coeff(0.7, 1.0, eps), 0.7);
        assert_eq!(surrogate_grad_coeff(1.3, -1.0, eps), -1.3);
        assert_eq!(surrogate_grad_coeff(1.1, 2.0, eps), 2.2);
        // numerical slope of the surrogate agrees
        for (r, a) in [(1.3, 1.0), (0.7, -1.0), (0.7, 1.0), (1.3, -1.0), (1.1, 2.0)] {
            let h = 1e-7;
            let slope = (surrogate(r + h, a, eps) - surrogate(r - h, a, eps)) / (2.0 * h);
            // d/dlogp = r · d/dr
            assert!((slope * r - surrogate_grad_coeff(r, a, eps)).abs() < 1e-6);
        }
    }

    #[test]
    fn advantage_normalization_preserves_order() {
        let raw = vec![0.3, -1.2, 5.0, 0.0, 0.31, -7.5];
        let mut norm = raw.clone();
        normalize_advantages(&mut norm);
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            idx
        };
        assert_eq!(rank(&raw), rank(&norm));
        let mean: f64 = norm.iter().sum::<f64>() / norm.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let task = TaskConfig::default();
        let cfg = small_cfg();
        let mut rng = rng::stream(11, Stream::Auxiliary);
        let mut policy = PpoPolicy::new(4, 1.0 / 15.0, &[16, 16], &mut rng);
        // larger output weights so the policy is far from uniform
        for p in &mut policy.actor.params {
            *p *= 3.0;
        }
        let mut trainer = Trainer::new(&task, &cfg).unwrap();
        trainer.policy = policy.clone();
        let mut batch = Batch::default();
        let mut game_rng = rng::stream(5, Stream::Auxiliary);
        for i in 0..24 {
            let counts: Vec<ArmCounts> = (0..4)
                .map(|_| ArmCounts { red: rand::Rng::random_range(&mut game_rng, 0..4), green: rand::Rng::random_range(&mut game_rng, 0..3) })
                .collect();
            let x = observation(&counts, ArmSet::from_bits(1 + (i as u32 % 15)), 1.0 / 15.0);
            let lp = log_softmax(&policy.actor.forward(&x));
            let a = i % 4;
            batch.obs.push(x);
            batch.actions.push(a);
            // old log-probs perturbed so some ratios fall outside the clip range
            batch.old_logp.push(lp[a] + 0.4 * ((i as f64) * 1.7).sin());
            batch.advantages.push(((i as f64) * 0.9).cos());
            batch.returns.push(((i as f64) * 0.3).sin());
        }
        let (_, ga, gc) = loss_and_grads(&policy, &batch, &cfg);
        let loss = |p: &PpoPolicy| loss_and_grads(p, &batch, &cfg).0.total;
        let h = 1e-6;
        let mut checked = 0;
        for (net, grad) in [(0, &ga), (1, &gc)] {
            let n = if net == 0 { policy.actor.n_params() } else { policy.critic.n_params() };
            for i in (0..n).step_by(7) {
                let mut plus = policy.clone();
                let mut minus = policy.clone();
                if net == 0 {
                    plus.actor.params[i] += h;
                    minus.actor.params[i] -= h;
                } else {
                    plus.critic.params[i] += h;
                    minus.critic.params[i] -= h;
                }
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6);
                assert!(rel < 1e-3 || (fd - grad[i]).abs() < 1e-8, "net {net} param {i}: fd {fd} analytic {}", grad[i]);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let task = TaskConfig::default();
        let cfg = PpoConfig { total_steps: 256, ..small_cfg() };
        let (a, ca) = train_ppo(&task, &cfg).unwrap();
        let (b, cb) = train_ppo(&task, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_eq!(ca.len(), 4);
        assert!(ca.iter().all(|p| p.policy_loss.is_finite() && p.value_loss.is_finite()));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = rng::stream(2, Stream::Auxiliary);
        let policy = PpoPolicy::new(4, 1.0, &[64, 64], &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        policy.save(&path).unwrap();
        let back = PpoPolicy::load(&path, 1.0).unwrap();
        assert_eq!(back.actor.sizes(), &[12, 64, 64, 4]);
        assert_eq!(back.critic.sizes(), &[12, 64, 64, 1]);
        let counts = vec![ArmCounts { red: 2, green: 1 }; 4];
        let avail = ArmSet::full(4);
        for (x, y) in policy.logits(&counts, avail).iter().zip(back.logits(&counts, avail)) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
