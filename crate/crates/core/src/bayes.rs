//! Normative Bayesian observer.
//!
//! The posterior over the biased arm is kept in four equivalent forms: the
//! probability vector `p`, the unnormalized log-posterior `ell`, the
//! log-ratio accumulator `q` (which only moves the sampled coordinate) and
//! the centred log state `h` (zero-sum). All four agree under softmax; the
//! centred form is the one the mechanistic model leaks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ArmCounts, Outcome, TaskConfig, Trajectory, TrajectoryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("likelihood vector has no positive mass against the prior")]
    DegenerateLikelihood,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// log Σ exp(v).
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Subtracts the mean so the vector sums to zero.
pub fn center(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

fn bernoulli(rate: f64, outcome: Outcome) -> f64 {
    if outcome.is_red() {
        rate
    } else {
        1.0 - rate
    }
}

/// `L_k = P(outcome | action, z = k)`.
pub fn likelihood_vector(action: usize, outcome: Outcome, config: &TaskConfig) -> Vec<f64> {
    (0..config.k_arms)
        .map(|k| {
            let rate = if k == action { config.alpha_biased } else { config.alpha_unbiased };
            bernoulli(rate, outcome)
        })
        .collect()
}

/// One Bayes step: `p' ∝ p ⊙ L`.
pub fn posterior_update(p: &[f64], likelihood: &[f64]) -> Result<Vec<f64>, BayesError> {
    let joint: Vec<f64> = p.iter().zip(likelihood).map(|(a, b)| a * b).collect();
    let total: f64 = joint.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(BayesError::DegenerateLikelihood);
    }
    Ok(joint.into_iter().map(|x| x / total).collect())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn map_choice(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    best
}

pub fn uniform(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Outcome-specific log-evidence increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlrConstants {
    /// `ln(α_B / α_U)`
    pub r: f64,
    /// `ln((1 − α_B) / (1 − α_U))`
    pub g: f64,
}

impl LlrConstants {
    pub fn new(alpha_biased: f64, alpha_unbiased: f64) -> Self {
        LlrConstants {
            r: (alpha_biased / alpha_unbiased).ln(),
            g: ((1.0 - alpha_biased) / (1.0 - alpha_unbiased)).ln(),
        }
    }

    pub fn from_config(config: &TaskConfig) -> Self {
        Self::new(config.alpha_biased, config.alpha_unbiased)
    }

    /// Single-step log-likelihood ratio δ.
    pub fn increment(&self, outcome: Outcome) -> f64 {
        if outcome.is_red() {
            self.r
        } else {
            self.g
        }
    }

    /// Centred increment `δ · (e_action − 1/K)`.
    pub fn centered_increment(&self, action: usize, outcome: Outcome, k: usize) -> Vec<f64> {
        let delta = self.increment(outcome);
        let mut dh = vec![-delta / k as f64; k];
        dh[action] += delta;
        dh
    }
}

/// Posterior from per-arm counts alone (count sufficiency).
pub fn posterior_from_counts(counts: &[ArmCounts], llr: &LlrConstants) -> Vec<f64> {
    let logits: Vec<f64> = counts
        .iter()
        .map(|c| llr.r * c.red as f64 + llr.g * c.green as f64)
        .collect();
    softmax(&logits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub p: Vec<f64>,
    pub ell: Vec<f64>,
    pub q: Vec<f64>,
    pub h: Vec<f64>,
}

impl BeliefState {
    pub fn prior(prior: &[f64]) -> Self {
        let logp: Vec<f64> = prior.iter().map(|x| x.ln()).collect();
        BeliefState {
            p: prior.to_vec(),
            h: center(&logp),
            ell: logp.clone(),
            q: logp,
        }
    }

    /// Largest disagreement between `p` and the softmax of each log form.
    pub fn consistency_error(&self) -> f64 {
        [&self.ell, &self.q, &self.h]
            .iter()
            .map(|v| {
                softmax(v)
                    .iter()
                    .zip(&self.p)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Incremental observer maintaining all four representations.
#[derive(Debug, Clone)]
pub struct BeliefTracker {
    config: TaskConfig,
    llr: LlrConstants,
    state: BeliefState,
}

impl BeliefTracker {
    pub fn new(config: &TaskConfig) -> Self {
        Self::with_prior(config, &uniform(config.k_arms))
    }

    pub fn with_prior(config: &TaskConfig, prior: &[f64]) -> Self {
        BeliefTracker {
            config: config.clone(),
            llr: LlrConstants::from_config(config),
            state: BeliefState::prior(prior),
        }
    }

    pub fn state(&self) -> &BeliefState {
        &self.state
    }

    pub fn update(&mut self, action: usize, outcome: Outcome) -> Result<(), BayesError> {
        let k = self.config.k_arms;
        let lik = likelihood_vector(action, outcome, &self.config);
        let s = &mut self.state;
        s.p = posterior_update(&s.p, &lik)?;
        for (e, l) in s.ell.iter_mut().zip(&lik) {
            *e += l.ln();
        }
        s.q[action] += self.llr.increment(outcome);
        for (h, d) in s.h.iter_mut().zip(self.llr.centered_increment(action, outcome, k)) {
            *h += d;
        }
        Ok(())
    }
}

/// Beliefs before the first round and after every round (`N + 1` entries).
/// Invalid rounds repeat the previous belief.
pub fn unroll_posteriors(
    traj: &Trajectory,
    config: &TaskConfig,
) -> Result<Vec<BeliefState>, BayesError> {
    traj.validate(config.k_arms)?;
    let mut tracker = BeliefTracker::new(config);
    let mut out = Vec::with_capacity(traj.rounds.len() + 1);
    out.push(tracker.state().clone());
    for r in &traj.rounds {
        if let (true, Some(a), Some(o)) = (r.valid, r.choice, r.outcome) {
            tracker.update(a, o)?;
        }
        debug_assert!(tracker.state().consistency_error() < 1e-10);
        out.push(tracker.state().clone());
    }
    Ok(out)
}

/// Final posterior `p_N` from the valid evidence of a trajectory.
pub fn final_posterior(traj: &Trajectory, config: &TaskConfig) -> Vec<f64> {
    posterior_from_counts(&traj.counts(config.k_arms), &LlrConstants::from_config(config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> TaskConfig {
        TaskConfig::default()
    }

    #[test]
    fn likelihood_examples() {
        let c = cfg();
        assert_eq!(likelihood_vector(0, Outcome::Red, &c), vec![0.9, 0.5, 0.5, 0.5]);
        let green = likelihood_vector(0, Outcome::Green, &c);
        for (a, b) in green.iter().zip([0.1, 0.5, 0.5, 0.5]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn equal_rates_give_flat_likelihood() {
        // validate() forbids α_B = α_U; the likelihood itself is still defined.
        let mut c = cfg();
        c.alpha_biased = 0.5;
        let l = likelihood_vector(2, Outcome::Red, &c);
        assert!(l.iter().all(|x| *x == l[0]));
        let p = posterior_update(&uniform(4), &l).unwrap();
        assert_eq!(p, uniform(4));
        let llr = LlrConstants::new(0.5, 0.5);
        assert_eq!(llr.increment(Outcome::Red), 0.0);
        assert!(llr.centered_increment(1, Outcome::Green, 4).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn hand_bayes_examples() {
        let p = posterior_update(&uniform(4), &[0.9, 0.5, 0.5, 0.5]).unwrap();
        let expect = [0.9 / 2.4, 0.5 / 2.4, 0.5 / 2.4, 0.5 / 2.4];
        for (a, b) in p.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(p[0], 0.375, epsilon = 1e-15);
        let p = posterior_update(&uniform(4), &[0.1, 0.5, 0.5, 0.5]).unwrap();
        for (a, b) in p.iter().zip([0.0625, 0.3125, 0.3125, 0.3125]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(posterior_update(&uniform(4), &[0.0; 4]).is_err());
    }

    #[test]
    fn map_tie_break() {
        assert_eq!(map_choice(&[0.375, 0.208, 0.208, 0.208]), 0);
        assert_eq!(map_choice(&uniform(4)), 0);
        assert_eq!(map_choice(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn llr_values() {
        let llr = LlrConstants::from_config(&cfg());
        assert_abs_diff_eq!(llr.increment(Outcome::Red), 0.587_786_664_902_119, epsilon = 1e-12);
        assert_abs_diff_eq!(llr.increment(Outcome::Green), -1.609_437_912_434_100, epsilon = 1e-12);
        assert!(llr.r > 0.0 && llr.g < 0.0);
        let dh = llr.centered_increment(2, Outcome::Red, 4);
        assert_abs_diff_eq!(dh.iter().sum::<f64>(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn three_reds_closed_form() {
        let c = cfg();
        let mut t = BeliefTracker::new(&c);
        for _ in 0..3 {
            t.update(1, Outcome::Red).unwrap();
        }
        let expect = 0.9f64.powi(3) * 0.25 / (0.9f64.powi(3) * 0.25 + 3.0 * 0.5f64.powi(3) * 0.25);
        assert_abs_diff_eq!(t.state().p[1], expect, epsilon = 1e-14);
        // 0.729 / 1.104
        assert_abs_diff_eq!(t.state().p[1], 0.660326, epsilon = 1e-6);
        assert!(t.state().consistency_error() < 1e-12);
    }

    #[test]
    fn normalization_drift_after_many_updates() {
        let c = cfg();
        let mut p = uniform(4);
        for i in 0..1000 {
            let o = if i % 3 == 0 { Outcome::Green } else { Outcome::Red };
            p = posterior_update(&p, &likelihood_vector(i % 4, o, &c)).unwrap();
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
