use std::path::PathBuf;

use apr_core::agents::{self, GreedyMapSampler, MapFinal, Paired};
use apr_core::bayes::{self, LlrConstants};
use apr_core::env::{self, ArmCounts, Game, Outcome};
use apr_core::llm::prompt::{FinalVerdict, PromptContext, PromptKind, Templates};
use apr_core::llm::{self, ChatRequest, Classification, FnEndpoint, ParseMode, ProtocolConfig};
use apr_core::{metrics, rng, store, ArmSet, TaskConfig};
use serde::Deserialize;

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn ctx() -> PromptContext {
    PromptContext {
        trial: Some(3),
        current_round: Some(2),
        available: Some(ArmSet::from_iter([0, 2])),
        k_arms: Some(4),
        ..Default::default()
    }
}

#[test]
fn prompts_match_golden_files() {
    let t = Templates::default();
    let rules = PromptContext { n_rounds: Some(7), ..Default::default() };
    let cases = [
        ("rules.txt", PromptKind::Rules, rules),
        ("round.txt", PromptKind::Round, ctx()),
        (
            "round_feedback.txt",
            PromptKind::RoundFeedback,
            PromptContext { answer: Some("C".into()), result: Some(Some(Outcome::Red)), ..ctx() },
        ),
        (
            "round_feedback_invalid.txt",
            PromptKind::RoundFeedback,
            PromptContext { answer: Some("B".into()), result: Some(None), ..ctx() },
        ),
        ("final.txt", PromptKind::Final, ctx()),
        (
            "final_feedback_correct.txt",
            PromptKind::FinalFeedback,
            PromptContext { answer: Some("D".into()), verdict: Some(FinalVerdict::Correct), score: Some(100), ..ctx() },
        ),
        (
            "final_feedback_incorrect.txt",
            PromptKind::FinalFeedback,
            PromptContext {
                answer: Some("A".into()),
                verdict: Some(FinalVerdict::Incorrect { biased_arm: 3 }),
                score: Some(-100),
                ..ctx()
            },
        ),
        (
            "final_feedback_invalid.txt",
            PromptKind::FinalFeedback,
            PromptContext { answer: Some("maybe D".into()), verdict: Some(FinalVerdict::Invalid), score: Some(-100), ..ctx() },
        ),
    ];
    for (file, kind, c) in cases {
        assert_eq!(t.build(kind, &c).unwrap(), golden(file), "{file}");
    }
    assert!(golden("round.txt").contains("Available cues A, C"));
    assert!(golden("final_feedback_correct.txt").contains("You received 100 points"));
}

#[derive(Deserialize)]
struct Case {
    raw: String,
    available: String,
    class: Classification,
    letter: Option<char>,
}

pub fn corpus() -> Vec<(String, ArmSet, Classification, Option<usize>)> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/parse_corpus.jsonl");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let c: Case = serde_json::from_str(l).unwrap();
            let avail = c.available.chars().filter_map(env::letter_arm).collect();
            (c.raw, avail, c.class, c.letter.and_then(env::letter_arm))
        })
        .collect()
}

#[test]
fn parser_agrees_with_labelled_corpus() {
    let cases = corpus();
    assert_eq!(cases.len(), 50);
    for (raw, avail, class, arm) in cases {
        let p = llm::parse_response(&raw, avail, 4, ParseMode::Strict);
        assert_eq!((p.class, p.arm), (class, arm), "{raw:?}");
    }
}

fn last_user(req: &ChatRequest) -> &str {
    &req.messages.iter().rev().find(|m| m.role == "user").unwrap().content
}

/// Reads trial and round number from the current prompt line.
fn prompt_position(line: &str) -> (usize, Option<usize>) {
    let head = line.split(':').next().unwrap();
    let mut nums = head.split(|c: char| !c.is_ascii_digit()).filter(|s| !s.is_empty()).map(|s| s.parse().unwrap());
    (nums.next().unwrap(), nums.next())
}

#[test]
fn scripted_endpoint_reproduces_the_implied_game() {
    let config = TaskConfig { seed: 21, ..TaskConfig::default() };
    let script = |trial: usize, round: usize| ((trial * 7 + round * 3) % 5) as u8;
    let letter = |v: u8| if v < 4 { ((b'A' + v) as char).to_string() } else { "pass".into() };
    let ep = FnEndpoint(move |req: &ChatRequest| {
        let line = last_user(req).lines().last().unwrap().to_string();
        let (trial, round) = prompt_position(&line);
        Ok(letter(script(trial, round.unwrap_or(0))))
    });
    let protocol = ProtocolConfig { model: "scripted".into(), ..ProtocolConfig::default() };
    let logs = llm::run_session(&protocol, &ep, &config, 50).unwrap();
    for (i, log) in logs.iter().enumerate() {
        let mut game = Game::new(&config, rng::game_seed(config.seed, i as u64)).unwrap();
        while game.state().phase == env::Phase::Sampling {
            let v = script(i + 1, game.state().round);
            game.step((v < 4).then_some(v as usize)).unwrap();
        }
        let v = script(i + 1, 0);
        game.finalize((v < 4).then_some(v as usize)).unwrap();
        let expected = game.into_trajectory(format!("g{i:06}"), "scripted", "base").unwrap();
        assert_eq!(log.record.to_trajectory(4).unwrap(), expected);
    }
}

#[test]
fn greedy_oracle_endpoint_matches_local_agent() {
    let config = TaskConfig { seed: 4, ..TaskConfig::default() };
    let llr = LlrConstants::from_config(&config);
    let ep = FnEndpoint(move |req: &ChatRequest| {
        let mut counts = vec![ArmCounts::default(); 4];
        for m in req.messages.iter().filter(|m| m.role == "user") {
            for line in m.content.lines() {
                let Some(rest) = line.split("You chose \"").nth(1) else { continue };
                let arm = env::letter_arm(rest.chars().next().unwrap()).unwrap();
                if rest.contains("saw \"RED\"") {
                    counts[arm].red += 1;
                } else if rest.contains("saw \"GREEN\"") {
                    counts[arm].green += 1;
                }
            }
        }
        let p = bayes::posterior_from_counts(&counts, &llr);
        let line = last_user(req).lines().last().unwrap();
        let arm = match line.split("Available cues ").nth(1) {
            Some(rest) => {
                let list = rest.split('.').next().unwrap();
                let avail: Vec<usize> = list.split(", ").map(|s| env::letter_arm(s.chars().next().unwrap()).unwrap()).collect();
                *avail.iter().fold(None, |best: Option<&usize>, a| match best {
                    Some(b) if p[*b] >= p[*a] => Some(b),
                    _ => Some(a),
                }).unwrap()
            }
            None => bayes::map_choice(&p),
        };
        Ok(env::arm_letter(arm).to_string())
    });
    let n = 2000;
    let logs = llm::run_session(&ProtocolConfig::default(), &ep, &config, n).unwrap();
    let remote: Vec<_> = logs.iter().map(|l| l.record.to_trajectory(4).unwrap()).collect();
    let (local, _) = agents::evaluate_agent(&config, n, || Paired::new(GreedyMapSampler, MapFinal));
    let remote_rate = metrics::success_rate(&remote).rate();
    let half_width = 1.96 * (2.0 * local.rate() * (1.0 - local.rate()) / n as f64).sqrt();
    assert!((remote_rate - local.rate()).abs() <= half_width, "{remote_rate} vs {}", local.rate());
}

#[test]
fn session_files_round_trip_through_store() {
    let config = TaskConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("run.jsonl");
    let transcripts = dir.path().join("run.transcripts.jsonl");
    let ep = FnEndpoint(|req: &ChatRequest| {
        Ok(if last_user(req).contains("Which do you choose") { "b" } else { "C" }.to_string())
    });
    let logs = llm::run_session_to_files(&ProtocolConfig::default(), &ep, &config, 12, &traj, &transcripts).unwrap();
    let mut back = store::read_trajectories(&traj, &config).unwrap();
    back.sort_by(|a, b| a.game_id.cmp(&b.game_id));
    let expected: Vec<_> = logs.iter().map(|l| l.record.to_trajectory(4).unwrap()).collect();
    assert_eq!(back, expected);
    let records = store::read_records(&traj).unwrap();
    assert!(records.iter().all(|r| r.transcript.as_deref().unwrap().starts_with("run.transcripts.jsonl#g")));
    assert_eq!(std::fs::read_to_string(&transcripts).unwrap().lines().count(), 12);
    assert!(apr_core::fit::Prepared::new(&back, &config).is_ok());
}
