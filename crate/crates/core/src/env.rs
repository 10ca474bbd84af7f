//! The active probabilistic reasoning task.
//!
//! One of `k_arms` buttons is biased towards RED. During `N` sampling rounds
//! (N uniform in `n_min..=n_max`, hidden from the agent) the agent picks one
//! available button per round and sees its colour; some buttons are occluded
//! each round. A final inference round asks which button is biased.
//!
//! Two conventions exist for picks that are not available: [`Game::step`]
//! consumes the round without evidence (LLM and RL drivers), while
//! [`Game::try_step`] rejects the pick and leaves the round untouched (the
//! human interface).

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{self, Stream, StreamRng};

/// Upper bound on `k_arms` imposed by the letter encoding and [`ArmSet`].
pub const MAX_ARMS: usize = 26;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid task configuration: {0}")]
    InvalidConfig(String),
    #[error("protocol error: operation requires phase {expected}, game is in {actual}")]
    Protocol { expected: Phase, actual: Phase },
    #[error("arm {letter} is not available (allowed: {allowed})")]
    Unavailable { letter: char, allowed: String },
    #[error("arm index {0} out of range")]
    ArmOutOfRange(usize),
}

/// Letter for an arm index (0 → 'A').
pub fn arm_letter(arm: usize) -> char {
    debug_assert!(arm < MAX_ARMS);
    (b'A' + arm as u8) as char
}

/// Arm index for a letter, case-insensitive.
pub fn letter_arm(letter: char) -> Option<usize> {
    let up = letter.to_ascii_uppercase();
    up.is_ascii_uppercase().then(|| (up as u8 - b'A') as usize)
}

/// Set of arm indices as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ArmSet(u32);

impl ArmSet {
    pub const fn empty() -> Self {
        ArmSet(0)
    }

    pub fn full(k: usize) -> Self {
        ArmSet(((1u64 << k) - 1) as u32)
    }

    pub const fn from_bits(bits: u32) -> Self {
        ArmSet(bits)
    }

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, arm: usize) -> bool {
        arm < 32 && self.0 & (1 << arm) != 0
    }

    pub fn insert(&mut self, arm: usize) {
        self.0 |= 1 << arm;
    }

    pub fn remove(&mut self, arm: usize) {
        self.0 &= !(1 << arm);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&i| self.0 & (1 << i) != 0)
    }

    /// Comma-separated letters, e.g. `"A, C"`.
    pub fn letters(self) -> String {
        self.iter()
            .map(|a| arm_letter(a).to_string())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl FromIterator<usize> for ArmSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut set = ArmSet::empty();
        for a in iter {
            set.insert(a);
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "RED")]
    Red,
    #[serde(rename = "GREEN")]
    Green,
}

impl Outcome {
    pub fn is_red(self) -> bool {
        matches!(self, Outcome::Red)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Red => "RED",
            Outcome::Green => "GREEN",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Distribution of the number of occluded arms per round. Occluded identities
/// are always drawn uniformly without replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OcclusionPolicy {
    /// Count uniform over `0..=occlusion_max`.
    #[default]
    UniformCount,
    /// Count `j` drawn with probability proportional to `weights[j]`.
    CountWeights { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub k_arms: usize,
    pub alpha_biased: f64,
    pub alpha_unbiased: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub occlusion_max: usize,
    pub occlusion_policy: OcclusionPolicy,
    pub reward_correct: i64,
    pub reward_wrong: i64,
    /// Per-round penalty used by the RL environment for unavailable picks.
    pub reward_invalid_sample: i64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            k_arms: 4,
            alpha_biased: 0.9,
            alpha_unbiased: 0.5,
            n_min: 2,
            n_max: 15,
            occlusion_max: 3,
            occlusion_policy: OcclusionPolicy::UniformCount,
            reward_correct: 100,
            reward_wrong: -100,
            reward_invalid_sample: -10,
            seed: 0,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.k_arms < 2 || self.k_arms > MAX_ARMS {
            return bad(format!("k_arms must be in 2..={MAX_ARMS}, got {}", self.k_arms));
        }
        let (ab, au) = (self.alpha_biased, self.alpha_unbiased);
        if !(0.0 < au && au < ab && ab < 1.0) {
            return bad(format!(
                "need 0 < alpha_unbiased < alpha_biased < 1, got {au} and {ab}"
            ));
        }
        if self.n_min < 2 || self.n_min > self.n_max {
            return bad(format!(
                "need 2 <= n_min <= n_max, got {}..={}",
                self.n_min, self.n_max
            ));
        }
        if self.occlusion_max >= self.k_arms {
            return bad(format!(
                "occlusion_max must leave one arm available (k_arms = {}, occlusion_max = {})",
                self.k_arms, self.occlusion_max
            ));
        }
        if let OcclusionPolicy::CountWeights { weights } = &self.occlusion_policy {
            if weights.len() != self.occlusion_max + 1 {
                return bad(format!(
                    "occlusion weights need {} entries, got {}",
                    self.occlusion_max + 1,
                    weights.len()
                ));
            }
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0)
                || weights.iter().sum::<f64>() <= 0.0
            {
                return bad("occlusion weights must be non-negative with positive sum".into());
            }
        }
        Ok(())
    }

    /// Probability of each occlusion count `0..=occlusion_max`.
    pub fn occlusion_count_distribution(&self) -> Vec<f64> {
        match &self.occlusion_policy {
            OcclusionPolicy::UniformCount => {
                vec![1.0 / (self.occlusion_max + 1) as f64; self.occlusion_max + 1]
            }
            OcclusionPolicy::CountWeights { weights } => {
                let total: f64 = weights.iter().sum();
                weights.iter().map(|w| w / total).collect()
            }
        }
    }

    /// Every availability mask with non-zero probability, with its probability.
    pub fn mask_distribution(&self) -> Vec<(ArmSet, f64)> {
        let counts = self.occlusion_count_distribution();
        let k = self.k_arms;
        let mut out = Vec::new();
        for bits in 1u32..(1u32 << k) {
            let set = ArmSet::from_bits(bits);
            let occluded = k - set.len();
            if occluded > self.occlusion_max || counts[occluded] == 0.0 {
                continue;
            }
            out.push((set, counts[occluded] / binomial(k, occluded)));
        }
        out
    }

    /// Short content hash of every field that affects game dynamics or
    /// scoring. The seed is excluded so datasets from different runs of the
    /// same task compare as equal.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.seed = 0;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hex::encode(&hash[..8])
    }

    pub fn all_arms(&self) -> ArmSet {
        ArmSet::full(self.k_arms)
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Draws one availability mask: occlusion count from the configured
/// distribution, then occluded identities uniformly without replacement.
pub fn draw_availability(config: &TaskConfig, rng: &mut StreamRng) -> ArmSet {
    let probs = config.occlusion_count_distribution();
    let u: f64 = rng.random();
    let mut n_occluded = probs.len() - 1;
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            n_occluded = j;
            break;
        }
    }
    let mut available = config.all_arms();
    let mut pool: Vec<usize> = (0..config.k_arms).collect();
    for _ in 0..n_occluded {
        let idx = rng.random_range(0..pool.len());
        available.remove(pool.swap_remove(idx));
    }
    available
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sampling,
    Inference,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Sampling => "sampling",
            Phase::Inference => "inference",
            Phase::Done => "done",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArmCounts {
    pub red: u32,
    pub green: u32,
}

impl ArmCounts {
    pub fn total(self) -> u32 {
        self.red + self.green
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    pub biased_arm: usize,
    pub horizon: usize,
    /// Current round, 1-based; equals `horizon + 1` once sampling is over.
    pub round: usize,
    pub counts: Vec<ArmCounts>,
    pub available: ArmSet,
    pub phase: Phase,
}

/// Result of one sampling round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    pub outcome: Option<Outcome>,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinalResult {
    pub valid: bool,
    pub correct: bool,
    pub score: i64,
}

/// One logged sampling round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round {
    pub t: usize,
    pub available: ArmSet,
    /// Chosen arm; `None` when the response named no arm at all.
    pub choice: Option<usize>,
    pub valid: bool,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinalDecision {
    pub choice: Option<usize>,
    pub valid: bool,
    pub correct: bool,
    pub score: i64,
}

/// A complete logged game.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub game_id: String,
    pub agent_id: String,
    pub condition: String,
    pub config_digest: String,
    /// Game seed, when the game came from this crate's environment.
    pub seed: Option<u64>,
    pub biased_arm: usize,
    pub horizon: usize,
    pub rounds: Vec<Round>,
    pub final_decision: FinalDecision,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid trajectory field `{field}`: {reason}")]
pub struct TrajectoryError {
    pub field: &'static str,
    pub reason: String,
}

impl Trajectory {
    /// Checks the structural invariants for a task with `k_arms` arms.
    pub fn validate(&self, k_arms: usize) -> Result<(), TrajectoryError> {
        let err = |field, reason: String| Err(TrajectoryError { field, reason });
        if self.biased_arm >= k_arms {
            return err("z", format!("arm {} out of range", self.biased_arm));
        }
        if self.rounds.len() != self.horizon {
            return err(
                "rounds",
                format!("{} rounds recorded but N = {}", self.rounds.len(), self.horizon),
            );
        }
        for (i, r) in self.rounds.iter().enumerate() {
            if r.t != i + 1 {
                return err("t", format!("round {} has t = {}", i + 1, r.t));
            }
            if r.available.is_empty() || r.available.bits() >> k_arms != 0 {
                return err("available", format!("round {} has an invalid availability set", r.t));
            }
            if let Some(c) = r.choice {
                if c >= k_arms {
                    return err("choice", format!("round {} chose arm {c}", r.t));
                }
            }
            if r.outcome.is_some() != r.valid {
                return err(
                    "outcome",
                    format!("round {}: outcome must be present iff the choice is valid", r.t),
                );
            }
            if r.valid && !r.choice.is_some_and(|c| r.available.contains(c)) {
                return err("valid", format!("round {} is valid but its choice is not available", r.t));
            }
        }
        let f = &self.final_decision;
        if let Some(c) = f.choice {
            if c >= k_arms {
                return err("final.choice", format!("arm {c} out of range"));
            }
        }
        if f.valid != f.choice.is_some() {
            return err("final.valid", "a final decision is valid iff it names an arm".into());
        }
        let expected = f.valid && f.choice == Some(self.biased_arm);
        if f.correct != expected {
            return err("final.correct", format!("recorded {} but should be {expected}", f.correct));
        }
        Ok(())
    }

    /// Valid (arm, outcome) evidence in round order.
    pub fn evidence(&self) -> impl Iterator<Item = (usize, Outcome)> + '_ {
        self.rounds
            .iter()
            .filter(|r| r.valid)
            .filter_map(|r| Some((r.choice?, r.outcome?)))
    }

    /// Per-arm colour counts over valid rounds.
    pub fn counts(&self, k_arms: usize) -> Vec<ArmCounts> {
        let mut counts = vec![ArmCounts::default(); k_arms];
        for (arm, outcome) in self.evidence() {
            match outcome {
                Outcome::Red => counts[arm].red += 1,
                Outcome::Green => counts[arm].green += 1,
            }
        }
        counts
    }
}

/// A running game with its private random streams and log.
#[derive(Debug, Clone)]
pub struct Game {
    config: TaskConfig,
    seed: u64,
    state: GameState,
    occlusion_rng: StreamRng,
    emission_rng: StreamRng,
    rounds: Vec<Round>,
    final_decision: Option<FinalDecision>,
}

/// Spec-level entry point: a fresh game state drawn from `rng`.
pub fn new_game(config: &TaskConfig, rng: &mut StreamRng) -> Result<GameState, EnvError> {
    Ok(Game::new(config, rng.random())?.state)
}

impl Game {
    pub fn new(config: &TaskConfig, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        let mut gen = rng::stream(seed, Stream::Generation);
        let biased_arm = gen.random_range(0..config.k_arms);
        let horizon = gen.random_range(config.n_min..=config.n_max);
        let mut occlusion_rng = rng::stream(seed, Stream::Occlusion);
        let available = draw_availability(config, &mut occlusion_rng);
        Ok(Game {
            config: config.clone(),
            seed,
            state: GameState {
                biased_arm,
                horizon,
                round: 1,
                counts: vec![ArmCounts::default(); config.k_arms],
                available,
                phase: Phase::Sampling,
            },
            occlusion_rng,
            emission_rng: rng::stream(seed, Stream::Emission),
            rounds: Vec::with_capacity(horizon),
            final_decision: None,
        })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    fn expect_phase(&self, expected: Phase) -> Result<(), EnvError> {
        if self.state.phase != expected {
            return Err(EnvError::Protocol { expected, actual: self.state.phase });
        }
        Ok(())
    }

    /// Plays one sampling round. A pick that is unavailable (or `None`)
    /// consumes the round and reveals nothing.
    pub fn step(&mut self, action: Option<usize>) -> Result<StepResult, EnvError> {
        self.expect_phase(Phase::Sampling)?;
        if let Some(a) = action {
            if a >= self.config.k_arms {
                return Err(EnvError::ArmOutOfRange(a));
            }
        }
        // One emission draw per round keeps outcomes aligned with round
        // numbers regardless of earlier validity.
        let u: f64 = self.emission_rng.random();
        let result = match action {
            Some(a) if self.state.available.contains(a) => {
                let rate = if a == self.state.biased_arm {
                    self.config.alpha_biased
                } else {
                    self.config.alpha_unbiased
                };
                let outcome = if u < rate { Outcome::Red } else { Outcome::Green };
                match outcome {
                    Outcome::Red => self.state.counts[a].red += 1,
                    Outcome::Green => self.state.counts[a].green += 1,
                }
                StepResult { outcome: Some(outcome), valid: true }
            }
            _ => StepResult { outcome: None, valid: false },
        };
        self.rounds.push(Round {
            t: self.state.round,
            available: self.state.available,
            choice: action,
            valid: result.valid,
            outcome: result.outcome,
        });
        self.state.round += 1;
        if self.state.round > self.state.horizon {
            self.state.phase = Phase::Inference;
            self.state.available = self.config.all_arms();
        } else {
            self.state.available = draw_availability(&self.config, &mut self.occlusion_rng);
        }
        Ok(result)
    }

    /// Plays one sampling round under the rejection convention: an
    /// unavailable pick is refused and the round is not consumed.
    pub fn try_step(&mut self, arm: usize) -> Result<StepResult, EnvError> {
        self.expect_phase(Phase::Sampling)?;
        if arm >= self.config.k_arms {
            return Err(EnvError::ArmOutOfRange(arm));
        }
        if !self.state.available.contains(arm) {
            return Err(EnvError::Unavailable {
                letter: arm_letter(arm),
                allowed: self.state.available.letters(),
            });
        }
        self.step(Some(arm))
    }

    /// Scores the final decision. `None` is an invalid final and scores as wrong.
    pub fn finalize(&mut self, choice: Option<usize>) -> Result<FinalResult, EnvError> {
        self.expect_phase(Phase::Inference)?;
        if let Some(c) = choice {
            if c >= self.config.k_arms {
                return Err(EnvError::ArmOutOfRange(c));
            }
        }
        let valid = choice.is_some();
        let correct = choice == Some(self.state.biased_arm);
        let score = if correct { self.config.reward_correct } else { self.config.reward_wrong };
        self.final_decision = Some(FinalDecision { choice, valid, correct, score });
        self.state.phase = Phase::Done;
        Ok(FinalResult { valid, correct, score })
    }

    /// Consumes a finished game into its log.
    pub fn into_trajectory(
        self,
        game_id: impl Into<String>,
        agent_id: impl Into<String>,
        condition: impl Into<String>,
    ) -> Result<Trajectory, EnvError> {
        self.expect_phase(Phase::Done)?;
        Ok(Trajectory {
            game_id: game_id.into(),
            agent_id: agent_id.into(),
            condition: condition.into(),
            config_digest: self.config.digest(),
            seed: Some(self.seed),
            biased_arm: self.state.biased_arm,
            horizon: self.state.horizon,
            rounds: self.rounds,
            final_decision: self.final_decision.expect("done games carry a final decision"),
        })
    }
}

/// Replays a trajectory's recorded choices through a fresh game with the
/// same seed and returns the regenerated log.
pub fn replay(config: &TaskConfig, traj: &Trajectory) -> Result<Trajectory, EnvError> {
    let seed = traj
        .seed
        .ok_or_else(|| EnvError::InvalidConfig("trajectory carries no game seed".into()))?;
    let mut game = Game::new(config, seed)?;
    for r in &traj.rounds {
        game.step(r.choice)?;
    }
    game.finalize(traj.final_decision.choice)?;
    game.into_trajectory(&traj.game_id, &traj.agent_id, &traj.condition)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TaskConfig {
        TaskConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
    }

    #[test]
    fn config_invariants_rejected() {
        let mut c = cfg();
        c.alpha_unbiased = 0.95;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.n_min = 1;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.n_min = 16;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.occlusion_max = 4;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.occlusion_policy = OcclusionPolicy::CountWeights { weights: vec![1.0, 1.0] };
        assert!(c.validate().is_err());
        assert!(matches!(Game::new(&c, 0), Err(EnvError::InvalidConfig(_))));
    }

    #[test]
    fn new_game_ranges_and_determinism() {
        let c = cfg();
        for s in 0..200 {
            let g = Game::new(&c, s).unwrap();
            assert!(g.state().biased_arm < 4);
            assert!((2..=15).contains(&g.state().horizon));
            assert_eq!(g.state().round, 1);
            assert!(!g.state().available.is_empty());
        }
        let a = Game::new(&c, 42).unwrap();
        let b = Game::new(&c, 42).unwrap();
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn no_occlusion_means_all_available() {
        let mut c = cfg();
        c.occlusion_max = 0;
        let mut r = rng::stream(1, Stream::Occlusion);
        for _ in 0..100 {
            assert_eq!(draw_availability(&c, &mut r), ArmSet::full(4));
        }
    }

    #[test]
    fn availability_never_empty() {
        let c = cfg();
        let mut r = rng::stream(2, Stream::Occlusion);
        for _ in 0..10_000 {
            let a = draw_availability(&c, &mut r);
            assert!((1..=4).contains(&a.len()));
        }
    }

    #[test]
    fn degenerate_bias_always_red() {
        let mut c = cfg();
        c.alpha_biased = 0.999_999_999_999;
        c.occlusion_max = 0;
        for s in 0..50 {
            let mut g = Game::new(&c, s).unwrap();
            let z = g.state().biased_arm;
            while g.state().phase == Phase::Sampling {
                assert_eq!(g.step(Some(z)).unwrap().outcome, Some(Outcome::Red));
            }
        }
    }

    #[test]
    fn occluded_pick_consumes_round_without_evidence() {
        let c = cfg();
        let (mut g, arm) = (0..)
            .find_map(|s| {
                let g = Game::new(&c, s).unwrap();
                let occluded = (0..4).find(|&a| !g.state().available.contains(a))?;
                Some((g, occluded))
            })
            .unwrap();
        let before = g.state().counts.clone();
        let r = g.step(Some(arm)).unwrap();
        assert_eq!(r, StepResult { outcome: None, valid: false });
        assert_eq!(g.state().counts, before);
        assert_eq!(g.state().round, 2);
    }

    #[test]
    fn try_step_rejects_without_consuming() {
        let c = cfg();
        let (mut g, arm) = (0..)
            .find_map(|s| {
                let g = Game::new(&c, s).unwrap();
                let occluded = (0..4).find(|&a| !g.state().available.contains(a))?;
                Some((g, occluded))
            })
            .unwrap();
        let before = g.state().clone();
        assert!(matches!(g.try_step(arm), Err(EnvError::Unavailable { .. })));
        assert_eq!(g.state(), &before);
    }

    #[test]
    fn protocol_errors() {
        let c = cfg();
        let mut g = Game::new(&c, 3).unwrap();
        assert!(matches!(g.finalize(Some(0)), Err(EnvError::Protocol { .. })));
        while g.state().phase == Phase::Sampling {
            g.step(Some(g.state().available.iter().next().unwrap())).unwrap();
        }
        assert!(matches!(g.step(Some(0)), Err(EnvError::Protocol { .. })));
        g.finalize(Some(0)).unwrap();
        assert!(matches!(g.finalize(Some(0)), Err(EnvError::Protocol { .. })));
    }

    #[test]
    fn finalize_scoring() {
        let c = cfg();
        let play = |choice: &dyn Fn(usize) -> Option<usize>| {
            let mut g = Game::new(&c, 11).unwrap();
            while g.state().phase == Phase::Sampling {
                g.step(None).unwrap();
            }
            let z = g.state().biased_arm;
            g.finalize(choice(z)).unwrap()
        };
        assert_eq!(play(&|z| Some(z)), FinalResult { valid: true, correct: true, score: 100 });
        assert_eq!(
            play(&|z| Some((z + 1) % 4)),
            FinalResult { valid: true, correct: false, score: -100 }
        );
        assert_eq!(play(&|_| None), FinalResult { valid: false, correct: false, score: -100 });
    }

    #[test]
    fn trajectory_matches_counts_and_validates() {
        let c = cfg();
        let mut g = Game::new(&c, 5).unwrap();
        let mut i = 0;
        while g.state().phase == Phase::Sampling {
            g.step(Some(i % 4)).unwrap();
            i += 1;
        }
        let counts = g.state().counts.clone();
        g.finalize(Some(1)).unwrap();
        let t = g.into_trajectory("g0", "test", "base").unwrap();
        t.validate(4).unwrap();
        assert_eq!(t.counts(4), counts);
        let valid = t.rounds.iter().filter(|r| r.valid).count() as u32;
        assert_eq!(counts.iter().map(|c| c.total()).sum::<u32>(), valid);
    }

    #[test]
    fn mask_distribution_sums_to_one() {
        let c = cfg();
        let d = c.mask_distribution();
        assert_eq!(d.len(), 15);
        let total: f64 = d.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // single-arm masks: 1/4 of the mass split four ways
        let single = d.iter().find(|(m, _)| m.len() == 1).unwrap().1;
        assert!((single - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn digest_ignores_seed() {
        let mut a = cfg();
        let b = cfg();
        a.seed = 99;
        assert_eq!(a.digest(), b.digest());
        a.alpha_biased = 0.8;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn letters_round_trip() {
        for a in 0..4 {
            assert_eq!(letter_arm(arm_letter(a)), Some(a));
        }
        assert_eq!(letter_arm('c'), Some(2));
        assert_eq!(letter_arm('1'), None);
        assert_eq!(ArmSet::from_iter([0, 2]).letters(), "A, C");
    }
}
