//! Reference agents and the game loop that drives them.
//!
//! An [`Agent`] plays both phases. Most reference agents are a [`Sampler`]
//! paired with a [`FinalRule`]; the mechanistic model implements [`Agent`]
//! directly because both phases share its memory.

pub mod dp;
pub mod nn;
pub mod ppo;

use rand::Rng;
use rayon::prelude::*;

use crate::bayes::{self, LlrConstants};
use crate::env::{ArmCounts, ArmSet, Game, Outcome, Phase, TaskConfig, Trajectory};
use crate::metrics::{self, SuccessStats};
use crate::rng::{self, Stream, StreamRng};

/// What an agent may see: never the horizon or the biased arm.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub config: &'a TaskConfig,
    /// 1-based round index; `horizon + 1` at the final decision.
    pub round: usize,
    pub counts: &'a [ArmCounts],
    pub available: ArmSet,
}

impl Observation<'_> {
    pub fn posterior(&self) -> Vec<f64> {
        bayes::posterior_from_counts(self.counts, &LlrConstants::from_config(self.config))
    }
}

pub trait Agent: Send {
    fn id(&self) -> String;

    fn begin_game(&mut self) {}

    /// Sampling pick; `None` abstains (an invalid round).
    fn sample(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize>;

    /// Called after every sampling round with the pick and what it revealed.
    fn observe(&mut self, _arm: Option<usize>, _outcome: Option<Outcome>) {}

    /// Final identification; `None` is an invalid final.
    fn decide(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize>;
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn begin_game(&mut self) {
        (**self).begin_game()
    }
    fn sample(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        (**self).sample(obs, rng)
    }
    fn observe(&mut self, arm: Option<usize>, outcome: Option<Outcome>) {
        (**self).observe(arm, outcome)
    }
    fn decide(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        (**self).decide(obs, rng)
    }
}

pub trait Sampler: Send {
    fn id(&self) -> String;
    fn choose(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize>;
}

pub trait FinalRule: Send {
    fn id(&self) -> String;
    fn choose(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize>;
}

/// A sampler and a final rule acting as one agent.
#[derive(Debug, Clone)]
pub struct Paired<S, F> {
    pub sampler: S,
    pub final_rule: F,
}

impl<S: Sampler, F: FinalRule> Paired<S, F> {
    pub fn new(sampler: S, final_rule: F) -> Self {
        Paired { sampler, final_rule }
    }
}

impl<S: Sampler, F: FinalRule> Agent for Paired<S, F> {
    fn id(&self) -> String {
        format!("{}+{}", self.sampler.id(), self.final_rule.id())
    }

    fn sample(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        self.sampler.choose(obs, rng)
    }

    fn decide(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        self.final_rule.choose(obs, rng)
    }
}

/// Uniform pick over the available arms.
pub fn random_sampler(available: ArmSet, rng: &mut StreamRng) -> usize {
    let n = available.len();
    debug_assert!(n > 0);
    available.iter().nth(rng.random_range(0..n)).expect("availability is non-empty")
}

/// MAP over the full posterior.
pub fn map_final(belief: &[f64]) -> usize {
    bayes::map_choice(belief)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomSampler;

impl Sampler for RandomSampler {
    fn id(&self) -> String {
        "random".into()
    }
    fn choose(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        Some(random_sampler(obs.available, rng))
    }
}

/// Samples the available arm with the highest current posterior.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyMapSampler;

impl Sampler for GreedyMapSampler {
    fn id(&self) -> String {
        "greedy".into()
    }
    fn choose(&mut self, obs: &Observation<'_>, _rng: &mut StreamRng) -> Option<usize> {
        let p = obs.posterior();
        obs.available
            .iter()
            .fold(None, |best: Option<usize>, a| match best {
                Some(b) if p[b] >= p[a] => Some(b),
                _ => Some(a),
            })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MapFinal;

impl FinalRule for MapFinal {
    fn id(&self) -> String {
        "map".into()
    }
    fn choose(&mut self, obs: &Observation<'_>, _rng: &mut StreamRng) -> Option<usize> {
        Some(map_final(&obs.posterior()))
    }
}

/// Uniform final pick, ignoring the evidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomFinal;

impl FinalRule for RandomFinal {
    fn id(&self) -> String {
        "random".into()
    }
    fn choose(&mut self, obs: &Observation<'_>, rng: &mut StreamRng) -> Option<usize> {
        Some(rng.random_range(0..obs.config.k_arms))
    }
}

/// Picks the least likely arm. Only useful as a worst-case inference probe.
#[derive(Debug, Clone, Copy, Default)]
pub struct AntiMapFinal;

impl FinalRule for AntiMapFinal {
    fn id(&self) -> String {
        "antimap".into()
    }
    fn choose(&mut self, obs: &Observation<'_>, _rng: &mut StreamRng) -> Option<usize> {
        let p = obs.posterior();
        let neg: Vec<f64> = p.iter().map(|x| -x).collect();
        Some(bayes::map_choice(&neg))
    }
}

/// Plays one full game with the given game seed.
pub fn play_game<A: Agent + ?Sized>(
    config: &TaskConfig,
    seed: u64,
    agent: &mut A,
    game_id: &str,
    condition: &str,
) -> Trajectory {
    let mut game = Game::new(config, seed).expect("config validated by caller");
    let mut agent_rng = rng::stream(seed, Stream::Agent);
    agent.begin_game();
    while game.state().phase == Phase::Sampling {
        let state = game.state();
        let obs = Observation {
            config,
            round: state.round,
            counts: &state.counts,
            available: state.available,
        };
        let pick = agent.sample(&obs, &mut agent_rng);
        let result = game.step(pick).expect("sampling phase");
        agent.observe(pick, result.outcome);
    }
    let state = game.state();
    let obs = Observation {
        config,
        round: state.round,
        counts: &state.counts,
        available: state.available,
    };
    let choice = agent.decide(&obs, &mut agent_rng);
    game.finalize(choice).expect("inference phase");
    let id = agent.id();
    game.into_trajectory(game_id, id, condition).expect("game is done")
}

/// Plays `n_games` games in parallel. Game `i` always uses
/// `rng::game_seed(config.seed, i)` and a freshly reset agent, so the output
/// is identical for any thread count.
pub fn play_games<A, F>(config: &TaskConfig, n_games: usize, factory: F, condition: &str) -> Vec<Trajectory>
where
    A: Agent,
    F: Fn() -> A + Sync + Send,
{
    config.validate().expect("invalid task configuration");
    (0..n_games)
        .into_par_iter()
        .map_init(&factory, |agent, i| {
            let seed = rng::game_seed(config.seed, i as u64);
            play_game(config, seed, agent, &format!("g{i:06}"), condition)
        })
        .collect()
}

/// Success statistics of an agent over `n_games` fresh games.
pub fn evaluate_agent<A, F>(config: &TaskConfig, n_games: usize, factory: F) -> (SuccessStats, Vec<Trajectory>)
where
    A: Agent,
    F: Fn() -> A + Sync + Send,
{
    let trajectories = play_games(config, n_games, factory, "base");
    (metrics::success_rate(&trajectories), trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_arm_available_is_forced() {
        let mut rng = rng::stream(0, Stream::Agent);
        let only = ArmSet::from_iter([2]);
        for _ in 0..100 {
            assert_eq!(random_sampler(only, &mut rng), 2);
        }
    }

    #[test]
    fn greedy_prefers_highest_available_posterior() {
        let config = TaskConfig::default();
        let counts = [
            ArmCounts { red: 3, green: 0 },
            ArmCounts { red: 2, green: 0 },
            ArmCounts::default(),
            ArmCounts::default(),
        ];
        let mut rng = rng::stream(0, Stream::Agent);
        let obs = |available| Observation { config: &config, round: 6, counts: &counts, available };
        assert_eq!(GreedyMapSampler.choose(&obs(ArmSet::full(4)), &mut rng), Some(0));
        assert_eq!(GreedyMapSampler.choose(&obs(ArmSet::from_iter([1, 2])), &mut rng), Some(1));
        // ties resolve to the lowest available index
        assert_eq!(GreedyMapSampler.choose(&obs(ArmSet::from_iter([2, 3])), &mut rng), Some(2));
    }

    #[test]
    fn play_games_is_deterministic() {
        let config = TaskConfig { seed: 5, ..TaskConfig::default() };
        let make = || Paired::new(RandomSampler, MapFinal);
        let a = play_games(&config, 50, make, "base");
        let b = play_games(&config, 50, make, "base");
        assert_eq!(a, b);
        for t in &a {
            t.validate(4).unwrap();
            assert_eq!(t.agent_id, "random+map");
        }
    }

    #[test]
    fn anti_map_picks_least_likely() {
        let config = TaskConfig::default();
        let counts = [
            ArmCounts { red: 3, green: 0 },
            ArmCounts { red: 0, green: 2 },
            ArmCounts::default(),
            ArmCounts::default(),
        ];
        let obs = Observation { config: &config, round: 6, counts: &counts, available: ArmSet::full(4) };
        let mut rng = rng::stream(0, Stream::Agent);
        assert_eq!(AntiMapFinal.choose(&obs, &mut rng), Some(1));
        assert_eq!(MapFinal.choose(&obs, &mut rng), Some(0));
    }
}
