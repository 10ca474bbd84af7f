//! Response classification. Every input string maps to exactly one class.

use serde::{Deserialize, Serialize};

use crate::env::{letter_arm, ArmSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// Trim whitespace; accept one letter, either case.
    #[default]
    Strict,
    /// Additionally strip surrounding punctuation, quotes and markup such as
    /// `**B**`, `"B"` or `B.`.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Valid,
    Occluded,
    OutOfVocabulary,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub raw: String,
    pub class: Classification,
    /// Arm named by the response, for valid and occluded letters.
    pub arm: Option<usize>,
}

impl ParsedResponse {
    pub fn empty() -> Self {
        ParsedResponse { raw: String::new(), class: Classification::Empty, arm: None }
    }

    /// The answer as echoed back in feedback: the upper-case letter when one
    /// was read, the trimmed text otherwise.
    pub fn echo(&self) -> String {
        match self.arm {
            Some(a) => crate::env::arm_letter(a).to_string(),
            None => self.raw.trim().to_string(),
        }
    }
}

fn is_wrapper(c: char) -> bool {
    c.is_whitespace() || (c.is_ascii_punctuation() && c != '{' && c != '}') || matches!(c, '“' | '”' | '‘' | '’')
}

/// Classifies `raw` against the arms in `available` for a `k_arms` task.
pub fn parse_response(raw: &str, available: ArmSet, k_arms: usize, mode: ParseMode) -> ParsedResponse {
    let mut text = raw.trim();
    if mode == ParseMode::Lenient {
        text = text.trim_matches(is_wrapper);
    }
    let (class, arm) = if text.is_empty() {
        (Classification::Empty, None)
    } else {
        let mut chars = text.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => match letter_arm(c).filter(|&a| a < k_arms) {
                Some(a) if available.contains(a) => (Classification::Valid, Some(a)),
                Some(a) => (Classification::Occluded, Some(a)),
                None => (Classification::OutOfVocabulary, None),
            },
            _ => (Classification::OutOfVocabulary, None),
        }
    };
    ParsedResponse { raw: raw.to_string(), class, arm }
}
