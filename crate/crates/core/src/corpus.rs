//! The SDG taxonomy: goals, their targets and indicators, and the per-goal
//! documents that get embedded.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::goals::{is_valid_goal, GOAL_COUNT};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus: {0}")]
    MalformedCorpus(#[from] serde_json::Error),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("unknown goal {0}; goals are numbered 1..=17")]
    UnknownGoal(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicator {
    pub code: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub code: String,
    pub text: String,
    #[serde(default)]
    pub indicators: Vec<Indicator>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub number: u8,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub targets: Vec<Target>,
}

/// A validated taxonomy with exactly 17 goals, stored in goal-number order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SdgCorpus {
    goals: Vec<Goal>,
}

#[derive(Deserialize)]
struct CorpusFile {
    goals: Vec<RawGoal>,
}

// Goal numbers are read wide so that out-of-range values surface as
// InvalidCorpus rather than a serde overflow message.
#[derive(Deserialize)]
struct RawGoal {
    number: i64,
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    targets: Vec<Target>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<SdgCorpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.parse()
}

impl std::str::FromStr for SdgCorpus {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let file: CorpusFile = serde_json::from_str(s)?;
        let goals = file
            .goals
            .into_iter()
            .map(|g| {
                if !is_valid_goal(g.number) {
                    return Err(CorpusError::InvalidCorpus(format!(
                        "goal number {} outside 1..=17",
                        g.number
                    )));
                }
                Ok(Goal {
                    number: g.number as u8,
                    name: g.name,
                    description: g.description,
                    targets: g.targets,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        SdgCorpus::new(goals)
    }
}

impl SdgCorpus {
    /// Validates the goals and orders them by number.
    pub fn new(mut goals: Vec<Goal>) -> Result<Self, CorpusError> {
        if goals.len() != GOAL_COUNT as usize {
            return Err(CorpusError::InvalidCorpus(format!(
                "expected {GOAL_COUNT} goals, found {}",
                goals.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for goal in &goals {
            if !seen.insert(goal.number) {
                return Err(CorpusError::InvalidCorpus(format!(
                    "duplicate goal number {}",
                    goal.number
                )));
            }
            validate_goal(goal)?;
        }
        goals.sort_by_key(|g| g.number);
        Ok(SdgCorpus { goals })
    }

    pub fn goals(&self) -> &[Goal] {
        &self.goals
    }

    pub fn goal(&self, number: i64) -> Result<&Goal, CorpusError> {
        if !is_valid_goal(number) {
            return Err(CorpusError::UnknownGoal(number));
        }
        Ok(&self.goals[number as usize - 1])
    }

    /// The text embedded for one goal: name, description, then every target
    /// followed by its indicators, one segment per line. Empty segments are skipped.
    pub fn goal_document(&self, number: i64) -> Result<String, CorpusError> {
        let goal = self.goal(number)?;
        let mut segments: Vec<&str> = vec![goal.name.trim(), goal.description.trim()];
        for target in &goal.targets {
            segments.push(target.text.trim());
            segments.extend(target.indicators.iter().map(|i| i.text.trim()));
        }
        segments.retain(|s| !s.is_empty());
        Ok(segments.join("\n"))
    }
}

fn validate_goal(goal: &Goal) -> Result<(), CorpusError> {
    if goal.name.trim().is_empty() {
        return Err(CorpusError::InvalidCorpus(format!(
            "goal {} has an empty name",
            goal.number
        )));
    }
    let goal_code = goal.number.to_string();
    let mut codes = BTreeSet::new();
    for target in &goal.targets {
        let parts: Vec<&str> = target.code.split('.').collect();
        if parts.len() != 2 || parts[0] != goal_code || parts[1].is_empty() {
            return Err(CorpusError::InvalidCorpus(format!(
                "target code {:?} does not belong to goal {}",
                target.code, goal.number
            )));
        }
        if !codes.insert(target.code.as_str()) {
            return Err(CorpusError::InvalidCorpus(format!(
                "duplicate target code {:?}",
                target.code
            )));
        }
        for indicator in &target.indicators {
            let valid = indicator
                .code
                .rsplit_once('.')
                .is_some_and(|(prefix, seq)| prefix == target.code && !seq.is_empty());
            if !valid {
                return Err(CorpusError::InvalidCorpus(format!(
                    "indicator code {:?} does not belong to target {}",
                    indicator.code, target.code
                )));
            }
            if !codes.insert(indicator.code.as_str()) {
                return Err(CorpusError::InvalidCorpus(format!(
                    "duplicate indicator code {:?}",
                    indicator.code
                )));
            }
        }
    }
    Ok(())
}
