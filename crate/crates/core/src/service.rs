//! Session manager for live human play, independent of any transport.
//!
//! Humans cannot make invalid picks: an occluded or unknown letter is
//! rejected with the allowed set and the round is not consumed. Finishing a
//! game persists its trajectory and immediately deals the next one.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{arm_letter, letter_arm, EnvError, Game, Outcome, Phase, TaskConfig};
use crate::rng;
use crate::store::{StoreError, TrajectoryRecord, TrajectoryWriter};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("letter {letter:?} rejected; allowed: {allowed:?}")]
    Rejected { letter: String, allowed: Vec<String> },
    #[error("protocol error: request needs phase {expected}, session is in {actual}")]
    Protocol { expected: Phase, actual: Phase },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Env(EnvError),
}

impl From<EnvError> for ServiceError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Protocol { expected, actual } => ServiceError::Protocol { expected, actual },
            other => ServiceError::Env(other),
        }
    }
}

/// Per-session overrides a client may request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    /// Master seed; game `j` of the session uses `game_seed(seed, j)`.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSession {
    pub participant_id: Option<String>,
    pub condition: Option<String>,
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observed {
    pub letter: String,
    pub outcome: Outcome,
}

/// Everything a client needs to draw the current screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub session_id: String,
    pub participant_id: String,
    /// 1-based game number within the session.
    pub trial: usize,
    pub phase: Phase,
    /// Current sampling round; during inference, the number of rounds played plus one.
    pub round: usize,
    pub available: Vec<String>,
    /// Accepted picks of the current game, in order.
    pub history: Vec<Observed>,
    pub games_completed: usize,
    pub total_score: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceResult {
    pub round: usize,
    pub letter: String,
    pub outcome: Outcome,
    pub next: RoundView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub trial: usize,
    pub letter: String,
    pub correct: bool,
    pub biased: String,
    pub score: i64,
    pub total_score: i64,
    /// First round of the next game.
    pub next: RoundView,
}

#[derive(Debug)]
struct Session {
    id: String,
    participant_id: String,
    condition: String,
    master_seed: u64,
    trial: usize,
    game: Game,
    completed: Vec<TrajectoryRecord>,
    total_score: i64,
    created_ms: u64,
    updated_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub participant_id: String,
    pub condition: String,
    pub games_completed: usize,
    pub created_ms: u64,
    pub updated_ms: u64,
}

impl Session {
    fn view(&self) -> RoundView {
        let state = self.game.state();
        RoundView {
            session_id: self.id.clone(),
            participant_id: self.participant_id.clone(),
            trial: self.trial,
            phase: state.phase,
            round: state.round,
            available: state.available.iter().map(|a| arm_letter(a).to_string()).collect(),
            history: self
                .game
                .rounds()
                .iter()
                .filter_map(|r| Some(Observed { letter: arm_letter(r.choice?).to_string(), outcome: r.outcome? }))
                .collect(),
            games_completed: self.completed.len(),
            total_score: self.total_score,
        }
    }

    fn game_seed(&self) -> u64 {
        rng::game_seed(self.master_seed, self.trial as u64 - 1)
    }
}

/// Thread-safe registry of sessions. Requests for one session are
/// serialized by that session's lock; different sessions never share state.
#[derive(Debug)]
pub struct SessionManager {
    config: TaskConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    writer: Option<TrajectoryWriter>,
}

impl SessionManager {
    /// `writer` receives every finished game; `None` keeps them in memory only.
    pub fn new(config: TaskConfig, writer: Option<TrajectoryWriter>) -> Result<Self, ServiceError> {
        config.validate()?;
        Ok(SessionManager { config, sessions: Mutex::new(HashMap::new()), writer })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let session = self.get(id)?;
        let mut s = session.lock().unwrap_or_else(|p| p.into_inner());
        let out = f(&mut s)?;
        s.updated_ms = now_ms();
        Ok(out)
    }

    pub fn create_session(&self, req: CreateSession) -> Result<RoundView, ServiceError> {
        let participant_id = req.participant_id.unwrap_or_else(|| "anonymous".into());
        if participant_id.is_empty() || participant_id.len() > 128 {
            return Err(ServiceError::BadRequest("participant_id must have 1..=128 characters".into()));
        }
        let id = format!("{:032x}", rand::random::<u128>());
        let master_seed = req.overrides.seed.unwrap_or_else(rand::random);
        let game = Game::new(&self.config, rng::game_seed(master_seed, 0))?;
        let t = now_ms();
        let session = Session {
            id: id.clone(),
            participant_id,
            condition: req.condition.unwrap_or_else(|| "base".into()),
            master_seed,
            trial: 1,
            game,
            completed: Vec::new(),
            total_score: 0,
            created_ms: t,
            updated_ms: t,
        };
        let view = session.view();
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub fn round(&self, id: &str) -> Result<RoundView, ServiceError> {
        self.with(id, |s| Ok(s.view()))
    }

    pub fn info(&self, id: &str) -> Result<SessionInfo, ServiceError> {
        self.with(id, |s| {
            Ok(SessionInfo {
                session_id: s.id.clone(),
                participant_id: s.participant_id.clone(),
                condition: s.condition.clone(),
                games_completed: s.completed.len(),
                created_ms: s.created_ms,
                updated_ms: s.updated_ms,
            })
        })
    }

    fn arm(&self, letter: &str, allowed: impl Fn(usize) -> bool, allowed_list: Vec<String>) -> Result<usize, ServiceError> {
        let mut chars = letter.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => letter_arm(c).filter(|&a| a < self.config.k_arms && allowed(a)),
            _ => None,
        }
        .ok_or_else(|| ServiceError::Rejected { letter: letter.to_string(), allowed: allowed_list })
    }

    pub fn post_choice(&self, id: &str, letter: &str) -> Result<ChoiceResult, ServiceError> {
        self.with(id, |s| {
            let state = s.game.state();
            if state.phase != Phase::Sampling {
                return Err(ServiceError::Protocol { expected: Phase::Sampling, actual: state.phase });
            }
            let available = state.available;
            let allowed = available.iter().map(|a| arm_letter(a).to_string()).collect();
            let arm = self.arm(letter, |a| available.contains(a), allowed)?;
            let round = state.round;
            let result = s.game.try_step(arm)?;
            Ok(ChoiceResult {
                round,
                letter: arm_letter(arm).to_string(),
                outcome: result.outcome.expect("accepted picks reveal an outcome"),
                next: s.view(),
            })
        })
    }

    pub fn post_final(&self, id: &str, letter: &str) -> Result<FinalResult, ServiceError> {
        self.with(id, |s| {
            let phase = s.game.state().phase;
            if phase != Phase::Inference {
                return Err(ServiceError::Protocol { expected: Phase::Inference, actual: phase });
            }
            let allowed = (0..self.config.k_arms).map(|a| arm_letter(a).to_string()).collect();
            let arm = self.arm(letter, |_| true, allowed)?;
            let result = s.game.finalize(Some(arm))?;
            let biased = s.game.state().biased_arm;
            let trial = s.trial;
            s.trial += 1;
            let next = Game::new(&self.config, s.game_seed())?;
            let done = std::mem::replace(&mut s.game, next);
            let traj = done.into_trajectory(format!("{}-{trial:04}", s.id), s.participant_id.clone(), s.condition.clone())?;
            let record = TrajectoryRecord::from_trajectory(&traj);
            if let Some(w) = &self.writer {
                w.append(&record)?;
            }
            s.completed.push(record);
            s.total_score += result.score;
            Ok(FinalResult {
                trial,
                letter: arm_letter(arm).to_string(),
                correct: result.correct,
                biased: arm_letter(biased).to_string(),
                score: result.score,
                total_score: s.total_score,
                next: s.view(),
            })
        })
    }

    /// Finished games of a session, oldest first.
    pub fn export(&self, id: &str) -> Result<Vec<TrajectoryRecord>, ServiceError> {
        self.with(id, |s| Ok(s.completed.clone()))
    }
}
