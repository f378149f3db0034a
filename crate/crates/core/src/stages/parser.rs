//! Structured-answer grammar.
//!
//! Fields are matched case-insensitively anywhere in the text:
//! `answer[:=]<0-4>`, `confidence[:=]<0-10>`, `reason[:=]<text>`. The reason
//! runs until the next field label or the end of the text. When a field is
//! repeated, the last valid occurrence wins.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::AnswerRecord;

static ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\banswer\s*[:=]\s*([0-4])\b").unwrap());
static CONFIDENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bconfidence\s*[:=]\s*(10|[0-9])\b").unwrap());
static LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(answer|confidence|reason)\s*[:=]").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Answer,
    Confidence,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub missing_fields: Vec<Field>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self
            .missing_fields
            .iter()
            .map(|m| match m {
                Field::Answer => "answer",
                Field::Confidence => "confidence",
            })
            .collect();
        write!(f, "missing or out-of-range fields: {}", names.join(", "))
    }
}

fn last_capture(re: &Regex, text: &str) -> Option<u8> {
    re.captures_iter(text).last().and_then(|c| c[1].parse().ok())
}

fn last_reason(text: &str) -> String {
    let labels: Vec<_> = LABEL.captures_iter(text).collect();
    let Some(pos) = labels.iter().rposition(|c| c[1].eq_ignore_ascii_case("reason")) else {
        return String::new();
    };
    let start = labels[pos].get(0).unwrap().end();
    let end = labels.get(pos + 1).map_or(text.len(), |c| c.get(0).unwrap().start());
    text[start..end].trim().to_string()
}

/// Parses a model reply; total over all inputs.
pub fn parse_answer_response(text: &str) -> Result<AnswerRecord, ParseError> {
    let answer = last_capture(&ANSWER, text);
    let confidence = last_capture(&CONFIDENCE, text);
    match (answer, confidence) {
        (Some(option_index), Some(confidence)) => Ok(AnswerRecord {
            option_index,
            confidence,
            reason: last_reason(text),
            raw_text: text.to_string(),
            parse_attempts: 1,
        }),
        _ => {
            let mut missing_fields = Vec::new();
            if answer.is_none() {
                missing_fields.push(Field::Answer);
            }
            if confidence.is_none() {
                missing_fields.push(Field::Confidence);
            }
            Err(ParseError { missing_fields })
        }
    }
}
