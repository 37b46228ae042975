//! Tagging through a chat-completion model: prompt construction, a retrying
//! client, a parser for the model's free-text answers, and confidence filtering.

mod client;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::goals::is_valid_goal;
use crate::ingest::Publication;

pub use client::{
    ChatClient, ChatMessage, ChatRequest, RetryPolicy, DEFAULT_MAX_TOKENS, DEFAULT_MODEL,
};
pub use parse::parse_llm_output;

/// Default minimum confidence (percent) for an assignment to be kept.
pub const DEFAULT_CONFIDENCE_MIN: u8 = 60;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server error (HTTP {status}): {body}")]
    Server { status: u16, body: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LlmError> },
    #[error("confidence {0} outside 0..=100")]
    OutOfRange(u32),
}

impl LlmError {
    /// Transport failures, 5xx and 429 are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::Server { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceLevel {
    Low,
    Medium,
    High,
}

impl ConfidenceLevel {
    /// Accepts high/medium/moderate/low in any case.
    pub fn parse(word: &str) -> Option<Self> {
        match word.to_ascii_lowercase().as_str() {
            "high" => Some(ConfidenceLevel::High),
            "medium" | "moderate" => Some(ConfidenceLevel::Medium),
            "low" => Some(ConfidenceLevel::Low),
            _ => None,
        }
    }
}

impl fmt::Display for ConfidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceLevel::Low => "Low",
            ConfidenceLevel::Medium => "Medium",
            ConfidenceLevel::High => "High",
        })
    }
}

/// Below 60 is Low, 60..80 Medium, 80 and above High.
pub fn classify_confidence(pct: u32) -> Result<ConfidenceLevel, LlmError> {
    match pct {
        0..=59 => Ok(ConfidenceLevel::Low),
        60..=79 => Ok(ConfidenceLevel::Medium),
        80..=100 => Ok(ConfidenceLevel::High),
        _ => Err(LlmError::OutOfRange(pct)),
    }
}

/// One goal asserted by the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalAssignment {
    pub goal: u8,
    pub confidence_pct: Option<u8>,
    pub level: Option<ConfidenceLevel>,
    pub reason: Option<String>,
}

impl GoalAssignment {
    pub fn new(goal: u8, confidence_pct: Option<u8>) -> Self {
        debug_assert!(is_valid_goal(goal as i64));
        GoalAssignment {
            goal,
            confidence_pct,
            level: None,
            reason: None,
        }
    }
}

/// Keeps assignments that carry a percentage of at least `min_pct`, in order.
pub fn filter_assignments(assignments: &[GoalAssignment], min_pct: u8) -> Vec<GoalAssignment> {
    assignments
        .iter()
        .filter(|a| a.confidence_pct.is_some_and(|p| p >= min_pct))
        .cloned()
        .collect()
}

pub fn build_prompt(publication: &Publication) -> String {
    format!(
        "Analyze the publication and determine the SDGs that it aligned with, provide the \
         confidence levels(%) for each assigned goal and the reason for assignment. Results \
         listed the goals in descending order of confidence level, with the highest confidence \
         goal listed first. Title: {}. Abstract: {}.",
        publication.title, publication.abstract_text
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmTagStatus {
    /// At least one goal with a numeric confidence.
    Ok,
    /// No goal mentioned at all.
    NoAnswer,
    /// Goals mentioned, but none with a percentage.
    Unscored,
    /// The request itself failed; retried on the next run.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmTagResult {
    pub publication_id: String,
    pub assignments: Vec<GoalAssignment>,
    pub raw_response: String,
    pub status: LlmTagStatus,
    pub error: Option<String>,
}

impl LlmTagResult {
    /// Parses and filters a raw answer. Kept assignments are ordered by
    /// confidence, highest first, ties by goal number.
    pub fn from_response(
        publication_id: impl Into<String>,
        raw: impl Into<String>,
        min_pct: u8,
    ) -> Self {
        let raw = raw.into();
        let parsed = parse_llm_output(&raw);
        let (status, mut assignments) = if parsed.is_empty() {
            (LlmTagStatus::NoAnswer, Vec::new())
        } else if parsed.iter().all(|a| a.confidence_pct.is_none()) {
            (LlmTagStatus::Unscored, Vec::new())
        } else {
            (LlmTagStatus::Ok, filter_assignments(&parsed, min_pct))
        };
        assignments.sort_by(|a, b| {
            b.confidence_pct
                .cmp(&a.confidence_pct)
                .then(a.goal.cmp(&b.goal))
        });
        LlmTagResult {
            publication_id: publication_id.into(),
            assignments,
            raw_response: raw,
            status,
            error: None,
        }
    }

    pub fn failed(publication_id: impl Into<String>, error: &LlmError) -> Self {
        LlmTagResult {
            publication_id: publication_id.into(),
            assignments: Vec::new(),
            raw_response: String::new(),
            status: LlmTagStatus::Failed,
            error: Some(error.to_string()),
        }
    }

    /// Answered results are not requested again on resume.
    pub fn is_answered(&self) -> bool {
        self.status != LlmTagStatus::Failed
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub goal: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<ConfidenceLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// One line of the LLM tag output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmTagRecord {
    pub id: String,
    pub method: String,
    pub status: LlmTagStatus,
    pub assignments: Vec<AssignmentRecord>,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&LlmTagResult> for LlmTagRecord {
    fn from(r: &LlmTagResult) -> Self {
        LlmTagRecord {
            id: r.publication_id.clone(),
            method: "llm".into(),
            status: r.status,
            assignments: r
                .assignments
                .iter()
                .map(|a| AssignmentRecord {
                    goal: a.goal,
                    confidence: a.confidence_pct,
                    level: a.level,
                    reason: a.reason.clone(),
                })
                .collect(),
            raw: r.raw_response.clone(),
            error: r.error.clone(),
        }
    }
}

impl TryFrom<LlmTagRecord> for LlmTagResult {
    type Error = LlmError;

    fn try_from(r: LlmTagRecord) -> Result<Self, Self::Error> {
        let assignments = r
            .assignments
            .into_iter()
            .map(|a| {
                if !is_valid_goal(a.goal as i64) {
                    return Err(LlmError::Protocol(format!("goal {} out of range", a.goal)));
                }
                if let Some(p) = a.confidence.filter(|p| *p > 100) {
                    return Err(LlmError::OutOfRange(p as u32));
                }
                Ok(GoalAssignment {
                    goal: a.goal,
                    confidence_pct: a.confidence,
                    level: a.level,
                    reason: a.reason,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LlmTagResult {
            publication_id: r.id,
            assignments,
            raw_response: r.raw,
            status: r.status,
            error: r.error,
        })
    }
}
