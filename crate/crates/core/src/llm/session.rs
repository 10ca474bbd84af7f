//! Full games against a chat endpoint.
//!
//! Each trial is one conversation: the rules as the system message, then one
//! user message per round. Feedback on a round opens the next user message,
//! so the model always sees the running history of the current trial.
//! Invalid replies consume their round without evidence.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::parse::{parse_response, Classification};
use super::prompt::{FinalVerdict, PromptContext, PromptKind};
use super::{ChatEndpoint, ChatMessage, ChatRequest, EndpointError, LlmError, ProtocolConfig};
use crate::env::{Game, Phase, TaskConfig};
use crate::rng;
use crate::store::{TrajectoryRecord, TrajectoryWriter};

/// One request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    /// Sampling round, or `None` for the final question.
    pub round: Option<usize>,
    /// Content of the user message sent.
    pub prompt: String,
    /// Raw reply text; `None` when every attempt failed.
    pub response: Option<String>,
    pub class: Option<Classification>,
    pub attempts: u32,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub game_id: String,
    pub model: String,
    pub system: String,
    pub exchanges: Vec<Exchange>,
    pub final_feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameLog {
    pub record: TrajectoryRecord,
    pub transcript: Transcript,
}

/// Shared spacing between requests across all games of a session.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn new(interval: Duration) -> Self {
        RateLimiter { interval, next: Mutex::new(Instant::now()) }
    }

    /// Blocks until the next request slot.
    pub fn wait(&self) {
        let mut next = self.next.lock().unwrap_or_else(|p| p.into_inner());
        let now = Instant::now();
        if *next > now {
            std::thread::sleep(*next - now);
        }
        *next = Instant::now() + self.interval;
    }

    /// Holds every caller back for at least `delay`.
    pub fn penalize(&self, delay: Duration) {
        let mut next = self.next.lock().unwrap_or_else(|p| p.into_inner());
        *next = (*next).max(Instant::now() + delay);
    }
}

/// Sends `messages`, retrying retryable failures with exponential backoff.
fn request(
    protocol: &ProtocolConfig,
    endpoint: &dyn ChatEndpoint,
    limiter: &RateLimiter,
    messages: &[ChatMessage],
) -> (Result<String, EndpointError>, u32) {
    let req = ChatRequest {
        model: protocol.model.clone(),
        messages: messages.to_vec(),
        temperature: protocol.temperature,
        max_tokens: protocol.max_tokens,
        reasoning_effort: protocol.reasoning_effort.as_param(),
    };
    let mut attempt = 0;
    loop {
        limiter.wait();
        let result = endpoint.complete(&req);
        attempt += 1;
        let err = match result {
            Ok(text) => return (Ok(text), attempt),
            Err(EndpointError::Fatal(m)) => return (Err(EndpointError::Fatal(m)), attempt),
            Err(e) => e,
        };
        if attempt > protocol.max_retries {
            return (Err(err), attempt);
        }
        let delay = match &err {
            EndpointError::RateLimited { retry_after: Some(d) } => *d,
            _ => protocol.backoff(attempt - 1),
        };
        tracing::warn!(error = %err, attempt, ?delay, "retrying chat request");
        limiter.penalize(delay);
    }
}

/// Plays one game; `trial` is the 1-based number shown in prompts.
pub fn play_llm_game(
    protocol: &ProtocolConfig,
    endpoint: &dyn ChatEndpoint,
    limiter: &RateLimiter,
    config: &TaskConfig,
    seed: u64,
    trial: usize,
    game_id: &str,
) -> Result<GameLog, LlmError> {
    let t = &protocol.templates;
    let k = config.k_arms;
    let mut game = Game::new(config, seed)?;
    let system = t.build(PromptKind::Rules, &PromptContext { n_rounds: Some(game.state().horizon), ..Default::default() })?;
    let mut messages = vec![ChatMessage::system(system.clone())];
    let mut exchanges = Vec::new();
    let mut pending: Option<String> = None;
    let mut aborted: Option<String> = None;
    let with_feedback = |pending: &mut Option<String>, prompt: String| match pending.take() {
        Some(f) => format!("{f}\n\n{prompt}"),
        None => prompt,
    };

    while game.state().phase == Phase::Sampling {
        let (round, available) = (game.state().round, game.state().available);
        if aborted.is_some() {
            game.step(None)?;
            continue;
        }
        let ctx = PromptContext {
            trial: Some(trial),
            current_round: Some(round),
            available: Some(available),
            ..Default::default()
        };
        let prompt = with_feedback(&mut pending, t.build(PromptKind::Round, &ctx)?);
        messages.push(ChatMessage::user(prompt.clone()));
        let (reply, attempts) = request(protocol, endpoint, limiter, &messages);
        match reply {
            Ok(text) => {
                let parsed = parse_response(&text, available, k, protocol.parse_mode);
                messages.push(ChatMessage::assistant(text.clone()));
                let pick = match parsed.class {
                    Classification::Valid | Classification::Occluded => parsed.arm,
                    _ => None,
                };
                let step = game.step(pick)?;
                let fb = PromptContext { answer: Some(parsed.echo()), result: Some(step.outcome), ..ctx };
                pending = Some(t.build(PromptKind::RoundFeedback, &fb)?);
                exchanges.push(Exchange {
                    round: Some(round),
                    prompt,
                    response: Some(text),
                    class: Some(parsed.class),
                    attempts,
                    error: None,
                });
            }
            Err(e) => {
                tracing::error!(game_id, round, error = %e, "aborting game");
                exchanges.push(Exchange { round: Some(round), prompt, response: None, class: None, attempts, error: Some(e.to_string()) });
                aborted = Some(format!("round {round}: {e}"));
                game.step(None)?;
            }
        }
    }

    let mut final_feedback = None;
    if aborted.is_some() {
        game.finalize(None)?;
    } else {
        let ctx = PromptContext { trial: Some(trial), k_arms: Some(k), ..Default::default() };
        let prompt = with_feedback(&mut pending, t.build(PromptKind::Final, &ctx)?);
        messages.push(ChatMessage::user(prompt.clone()));
        let (reply, attempts) = request(protocol, endpoint, limiter, &messages);
        match reply {
            Ok(text) => {
                let parsed = parse_response(&text, config.all_arms(), k, protocol.parse_mode);
                let choice = (parsed.class == Classification::Valid).then_some(parsed.arm).flatten();
                let result = game.finalize(choice)?;
                let verdict = match (result.valid, result.correct) {
                    (false, _) => FinalVerdict::Invalid,
                    (true, true) => FinalVerdict::Correct,
                    (true, false) => FinalVerdict::Incorrect { biased_arm: game.state().biased_arm },
                };
                let fb = PromptContext { answer: Some(parsed.echo()), verdict: Some(verdict), score: Some(result.score), ..ctx };
                final_feedback = Some(t.build(PromptKind::FinalFeedback, &fb)?);
                exchanges.push(Exchange { round: None, prompt, response: Some(text), class: Some(parsed.class), attempts, error: None });
            }
            Err(e) => {
                tracing::error!(game_id, error = %e, "aborting game at the final question");
                exchanges.push(Exchange { round: None, prompt, response: None, class: None, attempts, error: Some(e.to_string()) });
                aborted = Some(format!("final: {e}"));
                game.finalize(None)?;
            }
        }
    }

    let traj = game.into_trajectory(game_id, protocol.model.clone(), protocol.condition.clone())?;
    let mut record = TrajectoryRecord::from_trajectory(&traj);
    record.aborted = aborted;
    Ok(GameLog {
        record,
        transcript: Transcript {
            game_id: game_id.to_string(),
            model: protocol.model.clone(),
            system,
            exchanges,
            final_feedback,
        },
    })
}

/// Plays `n_games` games with up to `protocol.parallelism` in flight. Game
/// `i` uses `rng::game_seed(config.seed, i)`; results come back in game order
/// and are handed to `sink` as each game finishes.
pub fn run_session_with(
    protocol: &ProtocolConfig,
    endpoint: &dyn ChatEndpoint,
    config: &TaskConfig,
    n_games: usize,
    sink: &(dyn Fn(&GameLog) -> Result<(), LlmError> + Sync),
) -> Result<Vec<GameLog>, LlmError> {
    protocol.validate()?;
    config.validate()?;
    let limiter = RateLimiter::new(Duration::from_millis(protocol.min_request_interval_ms));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<GameLog, LlmError>>>> = (0..n_games).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..protocol.parallelism.min(n_games.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_games {
                    break;
                }
                let seed = rng::game_seed(config.seed, i as u64);
                let log = play_llm_game(protocol, endpoint, &limiter, config, seed, i + 1, &format!("g{i:06}"))
                    .and_then(|log| sink(&log).map(|_| log));
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(log);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|p| p.into_inner()).expect("every game ran"))
        .collect()
}

pub fn run_session(
    protocol: &ProtocolConfig,
    endpoint: &dyn ChatEndpoint,
    config: &TaskConfig,
    n_games: usize,
) -> Result<Vec<GameLog>, LlmError> {
    run_session_with(protocol, endpoint, config, n_games, &|_| Ok(()))
}

/// Runs a session, appending trajectories to `trajectories` and transcripts
/// to `transcripts` (both JSON lines) as games finish. Each trajectory names
/// its transcript as `<transcript file name>#<game id>`.
pub fn run_session_to_files(
    protocol: &ProtocolConfig,
    endpoint: &dyn ChatEndpoint,
    config: &TaskConfig,
    n_games: usize,
    trajectories: &Path,
    transcripts: &Path,
) -> Result<Vec<GameLog>, LlmError> {
    let writer = TrajectoryWriter::open(trajectories)?;
    let transcript_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(transcripts)
        .map_err(|source| LlmError::Io { path: transcripts.to_path_buf(), source })?;
    let transcript_file = Mutex::new(transcript_file);
    let name = transcripts.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let sink = |log: &GameLog| -> Result<(), LlmError> {
        use std::io::Write;
        let mut line = serde_json::to_vec(&log.transcript).expect("transcripts serialize");
        line.push(b'\n');
        transcript_file
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .write_all(&line)
            .map_err(|source| LlmError::Io { path: transcripts.to_path_buf(), source })?;
        let mut record = log.record.clone();
        record.transcript = Some(format!("{name}#{}", log.record.game_id));
        writer.append(&record)?;
        Ok(())
    };
    let mut logs = run_session_with(protocol, endpoint, config, n_games, &sink)?;
    for log in &mut logs {
        log.record.transcript = Some(format!("{name}#{}", log.record.game_id));
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::FnEndpoint;

    fn protocol() -> ProtocolConfig {
        ProtocolConfig { backoff_base_ms: 1, backoff_max_ms: 2, max_retries: 2, ..ProtocolConfig::default() }
    }

    #[test]
    fn out_of_vocabulary_everywhere() {
        let c = TaskConfig::default();
        let logs = run_session(&protocol(), &FnEndpoint(|_: &ChatRequest| Ok("E".into())), &c, 20).unwrap();
        for log in logs {
            let t = log.record.to_trajectory(4).unwrap();
            assert!(t.rounds.iter().all(|r| !r.valid && r.choice.is_none()));
            assert!(!t.final_decision.valid && t.final_decision.score == -100);
            assert_eq!(log.transcript.exchanges.len(), t.horizon + 1);
        }
    }

    #[test]
    fn exhausted_retries_abort_and_mark() {
        let c = TaskConfig::default();
        let ep = FnEndpoint(|_: &ChatRequest| Err(EndpointError::Timeout));
        let logs = run_session(&protocol(), &ep, &c, 3).unwrap();
        for log in logs {
            assert!(log.record.aborted.as_deref().unwrap().starts_with("round 1"));
            assert_eq!(log.transcript.exchanges[0].attempts, 3);
            let t = log.record.to_trajectory(4).unwrap();
            assert_eq!(t.rounds.len(), t.horizon);
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let c = TaskConfig::default();
        let calls = AtomicUsize::new(0);
        let ep = FnEndpoint(|_: &ChatRequest| {
            if calls.fetch_add(1, Ordering::SeqCst) % 2 == 0 {
                Err(EndpointError::RateLimited { retry_after: Some(Duration::from_millis(1)) })
            } else {
                Ok("A".into())
            }
        });
        let p = ProtocolConfig { parallelism: 1, ..protocol() };
        let logs = run_session(&p, &ep, &c, 2).unwrap();
        assert!(logs.iter().all(|l| l.record.aborted.is_none()));
        assert!(logs[0].transcript.exchanges.iter().all(|e| e.attempts == 2));
    }

    #[test]
    fn conversation_carries_feedback() {
        let c = TaskConfig::default();
        let seen = Mutex::new(Vec::new());
        let ep = FnEndpoint(|req: &ChatRequest| {
            seen.lock().unwrap().push(req.messages.clone());
            Ok("A".into())
        });
        let p = ProtocolConfig { parallelism: 1, ..protocol() };
        run_session(&p, &ep, &c, 1).unwrap();
        let seen = seen.into_inner().unwrap();
        assert_eq!(seen[0].len(), 2);
        assert_eq!(seen[1].len(), 4);
        assert!(seen[1][3].content.starts_with("Trial 1, Round 1: Available cues"));
        assert!(seen[1][3].content.contains("You chose \"A\" and saw \""));
        assert_eq!(seen[1][2].content, "A");
    }
}
