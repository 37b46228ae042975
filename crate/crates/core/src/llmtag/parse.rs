//! Extraction of goal assignments from free-form model answers.
//!
//! Answers are split into numbered list items. Inside an item every goal
//! mention ("Goal 7", "SDG 11", "(SDG 11)", "Sustainable Development Goal 4")
//! claims the first confidence expression that follows it before the next
//! mention; a mention left without one may take an unclaimed expression that
//! precedes it. Text after the confidence expression becomes the reason.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::LazyLock;

use regex::{Captures, Regex};

use super::{ConfidenceLevel, GoalAssignment};
use crate::goals::is_valid_goal;

static MENTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:sustainable\s+development\s+goal|sdg|goal)\s*#?\s*(\d{1,2})\b").unwrap()
});

static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[\s.:;!?)\]])(\d{1,2})[.)]\s+").unwrap());

static ENDS_WITH_GOAL_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:goal|sdg)\s*#?\s*$").unwrap());

static CONFIDENCE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?xi)
        (?:confidence(?:\s+level)?(?:\s+of|\s+is)?\s*[:=\-]?\s*
            (?:(?P<a_lvl>high|medium|moderate|low)\s*[-:,]?\s*)?
            \(?\s*(?P<a_pct>\d{1,3})\s*%\s*\)?)
        | (?:(?P<b_pct>\d{1,3})\s*%\s*confidence(?:\s+level)?)
        | (?:\b(?P<e_lvl>high|medium|moderate|low)\s+confidence(?:\s+level)?\b
            (?:\s*[:\-(]?\s*\(?\s*(?P<e_pct>\d{1,3})\s*%\s*\)?)?)
        | (?:\(\s*(?P<c_pct>\d{1,3})\s*%\s*\))
        | (?:confidence(?:\s+level)?\s*[:=\-]?\s*(?P<d_lvl>high|medium|moderate|low)\b)
        ",
    )
    .unwrap()
});

static REASON_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^reasons?(?:\s+for\s+(?:the\s+)?assignment)?\s*[:\-]\s*").unwrap()
});

static DASH_SEPARATOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s[-–—]\s*|\s*[-–—]\s").unwrap());

#[derive(Debug)]
struct Mention {
    span: Range<usize>,
    goal: u8,
}

#[derive(Debug)]
struct Confidence {
    span: Range<usize>,
    pct: Option<u8>,
    level: Option<ConfidenceLevel>,
}

pub fn parse_llm_output(text: &str) -> Vec<GoalAssignment> {
    let mut found: Vec<GoalAssignment> = Vec::new();
    let mut index: HashMap<u8, usize> = HashMap::new();
    for item in split_items(text) {
        for assignment in parse_item(&text[item]) {
            match index.get(&assignment.goal) {
                None => {
                    index.insert(assignment.goal, found.len());
                    found.push(assignment);
                }
                Some(&i) => {
                    if rank(&assignment) > rank(&found[i]) {
                        found[i] = assignment;
                    }
                }
            }
        }
    }
    found
}

// Duplicate mentions resolve to the highest percentage; any percentage beats none.
fn rank(a: &GoalAssignment) -> (Option<u8>, bool) {
    (a.confidence_pct, a.level.is_some())
}

/// Byte ranges of numbered list items. Text before the first marker is its own item.
fn split_items(text: &str) -> Vec<Range<usize>> {
    let mut starts = vec![0];
    for caps in LIST_MARKER.captures_iter(text) {
        let digits = caps.get(1).expect("marker digits");
        if ENDS_WITH_GOAL_WORD.is_match(&text[..digits.start()]) {
            continue;
        }
        if digits.start() > 0 {
            starts.push(digits.start());
        }
    }
    starts.push(text.len());
    starts
        .windows(2)
        .map(|w| w[0]..w[1])
        .filter(|r| !r.is_empty())
        .collect()
}

fn capture_pct(caps: &Captures<'_>, names: &[&str]) -> Option<u8> {
    names
        .iter()
        .find_map(|n| caps.name(n))
        .and_then(|m| m.as_str().parse::<u32>().ok())
        .filter(|p| *p <= 100)
        .map(|p| p as u8)
}

fn capture_level(caps: &Captures<'_>, names: &[&str]) -> Option<ConfidenceLevel> {
    names
        .iter()
        .find_map(|n| caps.name(n))
        .and_then(|m| ConfidenceLevel::parse(m.as_str()))
}

fn parse_item(item: &str) -> Vec<GoalAssignment> {
    let mentions: Vec<Mention> = MENTION
        .captures_iter(item)
        .filter_map(|c| {
            let n: i64 = c[1].parse().ok()?;
            is_valid_goal(n).then(|| Mention {
                span: c.get(0).unwrap().range(),
                goal: n as u8,
            })
        })
        .collect();
    if mentions.is_empty() {
        return Vec::new();
    }
    let confidences: Vec<Confidence> = CONFIDENCE
        .captures_iter(item)
        .map(|c| Confidence {
            span: c.get(0).unwrap().range(),
            pct: capture_pct(&c, &["a_pct", "b_pct", "e_pct", "c_pct"]),
            level: capture_level(&c, &["a_lvl", "e_lvl", "d_lvl"]),
        })
        .filter(|c| c.pct.is_some() || c.level.is_some())
        .collect();

    let region_end = |i: usize| mentions.get(i + 1).map_or(item.len(), |m| m.span.start);

    // Pass 1: each mention takes the first expression after it, before the next mention.
    let mut claimed = vec![false; confidences.len()];
    let mut owner: Vec<Option<(usize, bool)>> = vec![None; mentions.len()];
    for (i, m) in mentions.iter().enumerate() {
        let end = region_end(i);
        if let Some(ci) = confidences
            .iter()
            .position(|c| c.span.start >= m.span.end && c.span.end <= end)
        {
            claimed[ci] = true;
            owner[i] = Some((ci, true));
        }
    }
    // Pass 2: unresolved mentions fall back to the nearest unclaimed expression before them.
    for (i, m) in mentions.iter().enumerate() {
        if owner[i].is_some() {
            continue;
        }
        if let Some(ci) = confidences
            .iter()
            .enumerate()
            .rev()
            .find(|(ci, c)| !claimed[*ci] && c.span.end <= m.span.start)
            .map(|(ci, _)| ci)
        {
            claimed[ci] = true;
            owner[i] = Some((ci, false));
        }
    }

    mentions
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let end = region_end(i);
            let cut_at_sentence = end < item.len();
            let (pct, level, reason) = match owner[i] {
                Some((ci, true)) => {
                    let c = &confidences[ci];
                    let reason = clean_reason(&item[c.span.end..end], cut_at_sentence)
                        .or_else(|| header_stripped_reason(&item[m.span.end..c.span.start], false));
                    (c.pct, c.level, reason)
                }
                Some((ci, false)) => {
                    let c = &confidences[ci];
                    (
                        c.pct,
                        c.level,
                        header_stripped_reason(&item[m.span.end..end], cut_at_sentence),
                    )
                }
                None => (
                    None,
                    None,
                    header_stripped_reason(&item[m.span.end..end], cut_at_sentence),
                ),
            };
            GoalAssignment {
                goal: m.goal,
                confidence_pct: pct,
                level,
                reason,
            }
        })
        .collect()
}

/// Drops a leading "Goal name -" header before cleaning.
fn header_stripped_reason(text: &str, cut_at_sentence: bool) -> Option<String> {
    let body = &text[DASH_SEPARATOR.find(text)?.end()..];
    clean_reason(body, cut_at_sentence)
}

fn clean_reason(text: &str, cut_at_sentence: bool) -> Option<String> {
    let mut text = text;
    if cut_at_sentence {
        // The region stops at another goal mention; keep only whole sentences.
        if let Some(pos) = text.rfind(['.', '!', '?']) {
            text = &text[..=pos];
        }
    }
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let trimmed =
        collapsed.trim_start_matches(|c: char| c.is_whitespace() || "-–—:;,.)".contains(c));
    let trimmed = REASON_LABEL.replace(trimmed, "");
    let trimmed = trimmed.trim();
    if trimmed.chars().any(char::is_alphanumeric) {
        Some(trimmed.to_string())
    } else {
        None
    }
}
