//! Text templates for the chat protocol and their renderer.
//!
//! Placeholders are `{name}`; rendering fails on any placeholder without a
//! value, so a rendered prompt never contains a stray brace pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{arm_letter, ArmSet, Outcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("template `{template}` has no value for placeholder {{{name}}}")]
    Missing { template: &'static str, name: String },
    #[error("template `{template}` lacks required placeholder {{{name}}}")]
    Required { template: &'static str, name: &'static str },
    #[error("template `{template}` has an unterminated placeholder")]
    Unterminated { template: &'static str },
}

/// The full template set. Defaults reproduce the reference protocol text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Templates {
    pub rules: String,
    pub round: String,
    pub round_feedback: String,
    #[serde(rename = "final")]
    pub final_: String,
    pub final_feedback: String,
    pub label_correct: String,
    pub label_incorrect: String,
    pub label_invalid: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            rules: "Task\n\
                    - You will play a game with {n_rounds} rounds.\n\
                    - In each round, some cues are available: A, B, C, D.\n\
                    - One cue is biased: 90% one color / 10% the other. The others are 50/50.\n\
                    - Available cues may disappear at random, but at least one is always active.\n\
                    - Each round, respond with exactly one letter (A, B, C, or D). No markup or punctuation.\n\
                    - After {n_rounds} rounds, identify the biased cue.\n\
                    - Scoring: Correct +100 points, Wrong -100 points."
                .into(),
            round: "Trial {trial}, Round {current_round}: Available cues {available_cues}. \
                    Which do you choose? Respond with exactly one letter: A, B, C, or D."
                .into(),
            round_feedback: "Trial {trial}, Round {current_round}: Available cues {available_cues}. \
                             You chose \"{answer}\" and saw \"{result}\"."
                .into(),
            final_: "Trial {trial}: Based on all observed colors, which cue {letters} had the highest ratio of RED? \
                     Respond with exactly one letter: A, B, C, or D."
                .into(),
            final_feedback: "Trial {trial}: Based on all observed colors, which cue {letters} had the highest ratio of RED?\n\
                             You chose \"{answer}\" which was \"{feedback}\".\n\
                             You received {score} points."
                .into(),
            label_correct: "the biased cue".into(),
            label_incorrect: "not the biased cue. The biased cue was \"{biased}\".".into(),
            label_invalid: "an invalid choice".into(),
        }
    }
}

/// Which prompt to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Rules,
    Round,
    RoundFeedback,
    Final,
    FinalFeedback,
}

/// Result of a scored final decision, for feedback rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalVerdict {
    Correct,
    Incorrect { biased_arm: usize },
    Invalid,
}

/// Everything a prompt may refer to. Unused fields are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptContext {
    pub n_rounds: Option<usize>,
    pub trial: Option<usize>,
    pub current_round: Option<usize>,
    pub available: Option<ArmSet>,
    /// All arm letters offered in the final question.
    pub k_arms: Option<usize>,
    /// The answer as shown back to the model.
    pub answer: Option<String>,
    /// Round result: an outcome, or `None` for an invalid pick.
    pub result: Option<Option<Outcome>>,
    pub verdict: Option<FinalVerdict>,
    pub score: Option<i64>,
}

/// `"A, C"` style list.
pub fn letter_list(arms: impl IntoIterator<Item = usize>) -> String {
    arms.into_iter().map(|a| arm_letter(a).to_string()).collect::<Vec<_>>().join(", ")
}

/// Substitutes `{name}` placeholders from `values`.
pub fn render(template: &str, name: &'static str, values: &[(&str, String)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or(TemplateError::Unterminated { template: name })?;
        let key = &after[..close];
        let value = values
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| TemplateError::Missing { template: name, name: key.to_string() })?;
        out.push_str(&value.1);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        out.push(&after[..close]);
        rest = &after[close + 1..];
    }
    out
}

impl Templates {
    fn get(&self, kind: PromptKind) -> (&'static str, &str) {
        match kind {
            PromptKind::Rules => ("rules", &self.rules),
            PromptKind::Round => ("round", &self.round),
            PromptKind::RoundFeedback => ("round_feedback", &self.round_feedback),
            PromptKind::Final => ("final", &self.final_),
            PromptKind::FinalFeedback => ("final_feedback", &self.final_feedback),
        }
    }

    /// Checks that every template carries the placeholders it must fill.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let required: [(&'static str, &str, &[&'static str]); 6] = [
            ("rules", &self.rules, &["n_rounds"]),
            ("round", &self.round, &["current_round", "available_cues"]),
            ("round_feedback", &self.round_feedback, &["current_round", "available_cues", "answer", "result"]),
            ("final", &self.final_, &["letters"]),
            ("final_feedback", &self.final_feedback, &["letters", "answer", "feedback", "score"]),
            ("label_incorrect", &self.label_incorrect, &["biased"]),
        ];
        for (template, text, names) in required {
            let found = placeholders(text);
            for name in names {
                if !found.contains(name) {
                    return Err(TemplateError::Required { template, name });
                }
            }
        }
        Ok(())
    }

    fn feedback_label(&self, verdict: FinalVerdict) -> Result<String, TemplateError> {
        match verdict {
            FinalVerdict::Correct => Ok(self.label_correct.clone()),
            FinalVerdict::Invalid => Ok(self.label_invalid.clone()),
            FinalVerdict::Incorrect { biased_arm } => render(
                &self.label_incorrect,
                "label_incorrect",
                &[("biased", arm_letter(biased_arm).to_string())],
            ),
        }
    }

    /// Instantiates one prompt. Fails when the template needs a value that
    /// `ctx` does not provide.
    pub fn build(&self, kind: PromptKind, ctx: &PromptContext) -> Result<String, TemplateError> {
        let (name, template) = self.get(kind);
        let mut values: Vec<(&str, String)> = Vec::new();
        if let Some(n) = ctx.n_rounds {
            values.push(("n_rounds", n.to_string()));
        }
        if let Some(t) = ctx.trial {
            values.push(("trial", t.to_string()));
        }
        if let Some(r) = ctx.current_round {
            values.push(("current_round", r.to_string()));
        }
        if let Some(a) = ctx.available {
            values.push(("available_cues", letter_list(a.iter())));
        }
        if let Some(k) = ctx.k_arms {
            values.push(("letters", letter_list(0..k)));
        }
        if let Some(a) = &ctx.answer {
            values.push(("answer", a.clone()));
        }
        if let Some(r) = ctx.result {
            let text = match r {
                Some(o) => o.as_str().to_string(),
                None => self.label_invalid.clone(),
            };
            values.push(("result", text));
        }
        if let Some(v) = ctx.verdict {
            values.push(("feedback", self.feedback_label(v)?));
        }
        if let Some(s) = ctx.score {
            values.push(("score", s.to_string()));
        }
        render(template, name, &values)
    }
}
