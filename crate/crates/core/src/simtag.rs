//! Similarity tagging: score publications against the 17 goal vectors,
//! keep the goals above a threshold, and tabulate score and goal distributions.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{CorpusError, SdgCorpus};
use crate::embed::{cosine_similarity, EmbedError, EmbeddingProvider, SimilarityScore, Vector};
use crate::goals::{all_goals, is_valid_goal, GOAL_COUNT};
use crate::ingest::{publication_text, Publication};

/// Default similarity threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Debug, Error)]
pub enum SimtagError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("cannot embed publication {id:?}: {source}")]
    EmbedPublication {
        id: String,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("no vector for goal {0}")]
    MissingGoalVector(u8),
    #[error("goal vectors were built by {found:?}, not {expected:?}")]
    ProviderMismatch { expected: String, found: String },
    #[error("score map must hold exactly the goals 1..=17")]
    IncompleteScores,
    #[error("tag result refers to unknown publication {0:?}")]
    UnknownPublication(String),
    #[error("invalid threshold {0}; expected a value in [0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid goal-vector cache: {0}")]
    Cache(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One embedding per goal, tagged with the provider that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalVectors {
    provider: String,
    dim: usize,
    vectors: Vec<Vector>,
}

impl GoalVectors {
    pub fn new(
        provider: String,
        dim: usize,
        vectors: BTreeMap<u8, Vector>,
    ) -> Result<Self, SimtagError> {
        let mut ordered = Vec::with_capacity(GOAL_COUNT as usize);
        for goal in all_goals() {
            let v = vectors
                .get(&goal)
                .ok_or(SimtagError::MissingGoalVector(goal))?;
            if v.dim() != dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: dim,
                    found: v.dim(),
                }
                .into());
            }
            ordered.push(v.clone());
        }
        if vectors.len() != GOAL_COUNT as usize {
            return Err(SimtagError::IncompleteScores);
        }
        Ok(GoalVectors {
            provider,
            dim,
            vectors: ordered,
        })
    }

    /// Embeds every goal document of `corpus` with `provider`.
    pub fn build(
        corpus: &SdgCorpus,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, SimtagError> {
        let docs = all_goals()
            .map(|g| corpus.goal_document(g as i64))
            .collect::<Result<Vec<_>, _>>()?;
        let vectors = provider.embed(&docs)?;
        let map = all_goals().zip(vectors).collect();
        GoalVectors::new(provider.identity(), provider.dim(), map)
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, goal: u8) -> Option<&Vector> {
        if is_valid_goal(goal as i64) {
            self.vectors.get(goal as usize - 1)
        } else {
            None
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimtagError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes the cache as pretty JSON with goals in numeric order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimtagError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

struct OrderedVectors<'a>(&'a [Vector]);

impl Serialize for OrderedVectors<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (goal, v) in all_goals().zip(self.0) {
            map.serialize_entry(&goal.to_string(), v)?;
        }
        map.end()
    }
}

impl Serialize for GoalVectors {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(3))?;
        map.serialize_entry("provider", &self.provider)?;
        map.serialize_entry("dim", &self.dim)?;
        map.serialize_entry("vectors", &OrderedVectors(&self.vectors))?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for GoalVectors {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            provider: String,
            dim: usize,
            vectors: BTreeMap<String, Vector>,
        }
        let raw = Raw::deserialize(d)?;
        let mut vectors = BTreeMap::new();
        for (key, v) in raw.vectors {
            let goal: u8 = key
                .parse()
                .ok()
                .filter(|g| is_valid_goal(*g as i64))
                .ok_or_else(|| D::Error::custom(format!("invalid goal key {key:?}")))?;
            vectors.insert(goal, v);
        }
        GoalVectors::new(raw.provider, raw.dim, vectors).map_err(D::Error::custom)
    }
}

/// Cosine scores of one publication against all 17 goals.
#[derive(Debug, Clone, PartialEq)]
pub struct SdgScoreVector {
    pub publication_id: String,
    scores: [SimilarityScore; GOAL_COUNT as usize],
}

impl SdgScoreVector {
    /// Builds a score vector from a goal→score map holding exactly the keys 1..=17.
    pub fn from_map(
        publication_id: impl Into<String>,
        map: &BTreeMap<u8, f64>,
    ) -> Result<Self, SimtagError> {
        if map.len() != GOAL_COUNT as usize || !all_goals().all(|g| map.contains_key(&g)) {
            return Err(SimtagError::IncompleteScores);
        }
        let mut scores = [SimilarityScore::new(0.0); GOAL_COUNT as usize];
        for (g, s) in map {
            scores[*g as usize - 1] = SimilarityScore::new(*s);
        }
        Ok(SdgScoreVector {
            publication_id: publication_id.into(),
            scores,
        })
    }

    pub fn get(&self, goal: u8) -> Option<SimilarityScore> {
        is_valid_goal(goal as i64).then(|| self.scores[goal as usize - 1])
    }

    /// (goal, score) pairs in goal order.
    pub fn iter(&self) -> impl Iterator<Item = (u8, SimilarityScore)> + '_ {
        all_goals().zip(self.scores.iter().copied())
    }
}

fn score_against(
    publication_id: &str,
    embedding: &Vector,
    goal_vectors: &GoalVectors,
) -> Result<SdgScoreVector, SimtagError> {
    let mut scores = [SimilarityScore::new(0.0); GOAL_COUNT as usize];
    for goal in all_goals() {
        let gv = goal_vectors
            .get(goal)
            .ok_or(SimtagError::MissingGoalVector(goal))?;
        scores[goal as usize - 1] = cosine_similarity(embedding, gv)?;
    }
    Ok(SdgScoreVector {
        publication_id: publication_id.to_string(),
        scores,
    })
}

fn check_provider(
    provider: &dyn EmbeddingProvider,
    goal_vectors: &GoalVectors,
) -> Result<(), SimtagError> {
    if provider.dim() != goal_vectors.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: goal_vectors.dim(),
            found: provider.dim(),
        }
        .into());
    }
    Ok(())
}

pub fn score_publication(
    provider: &dyn EmbeddingProvider,
    goal_vectors: &GoalVectors,
    publication: &Publication,
) -> Result<SdgScoreVector, SimtagError> {
    check_provider(provider, goal_vectors)?;
    let embedded = provider
        .embed(&[publication_text(publication)])
        .map_err(|source| SimtagError::EmbedPublication {
            id: publication.id.clone(),
            source,
        })?;
    let v = embedded
        .first()
        .ok_or_else(|| EmbedError::Protocol("provider returned no vector".into()))?;
    score_against(&publication.id, v, goal_vectors)
}

const SCORE_CHUNK: usize = 64;

/// Scores every publication using at most `parallelism` worker threads.
/// Results are ordered by publication id.
pub fn score_publications(
    provider: &dyn EmbeddingProvider,
    goal_vectors: &GoalVectors,
    pubs: &[Publication],
    parallelism: usize,
) -> Result<Vec<SdgScoreVector>, SimtagError> {
    check_provider(provider, goal_vectors)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| EmbedError::Transport(format!("cannot start worker pool: {e}")))?;
    let mut out = pool.install(|| -> Result<Vec<SdgScoreVector>, SimtagError> {
        let mut out = Vec::with_capacity(pubs.len());
        for chunk in pubs.chunks(SCORE_CHUNK) {
            let texts: Vec<String> = chunk.iter().map(publication_text).collect();
            let vectors = match provider.embed(&texts) {
                Ok(v) => v,
                Err(_) => return Err(locate_embed_failure(provider, chunk)),
            };
            let scored = chunk
                .par_iter()
                .zip(vectors.par_iter())
                .map(|(p, v)| score_against(&p.id, v, goal_vectors))
                .collect::<Result<Vec<_>, _>>()?;
            out.extend(scored);
        }
        Ok(out)
    })?;
    out.sort_by(|a, b| a.publication_id.cmp(&b.publication_id));
    Ok(out)
}

// Re-embeds one at a time so the error names the offending publication.
fn locate_embed_failure(provider: &dyn EmbeddingProvider, chunk: &[Publication]) -> SimtagError {
    for p in chunk {
        if let Err(source) = provider.embed(&[publication_text(p)]) {
            return SimtagError::EmbedPublication {
                id: p.id.clone(),
                source,
            };
        }
    }
    EmbedError::Protocol("batch embedding failed but every item succeeded alone".into()).into()
}

/// Threshold value plus whether a score equal to it is kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub value: f64,
    pub inclusive: bool,
}

impl Threshold {
    pub fn new(value: f64, inclusive: bool) -> Result<Self, SimtagError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(SimtagError::InvalidThreshold(value));
        }
        Ok(Threshold { value, inclusive })
    }

    pub fn inclusive(value: f64) -> Result<Self, SimtagError> {
        Self::new(value, true)
    }

    pub fn keeps(&self, score: f64) -> bool {
        if self.inclusive {
            score >= self.value
        } else {
            score > self.value
        }
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold {
            value: DEFAULT_THRESHOLD,
            inclusive: true,
        }
    }
}

/// Goals retained for one publication, best score first.
#[derive(Debug, Clone, PartialEq)]
pub struct TagResult {
    pub publication_id: String,
    pub tags: Vec<(u8, SimilarityScore)>,
    pub threshold: f64,
}

impl TagResult {
    pub fn is_relevant(&self) -> bool {
        !self.tags.is_empty()
    }
}

/// Keeps goals scoring at or above `threshold` (inclusive).
pub fn apply_threshold(scores: &SdgScoreVector, threshold: f64) -> TagResult {
    apply_threshold_with(
        scores,
        Threshold {
            value: threshold,
            inclusive: true,
        },
    )
}

pub fn apply_threshold_with(scores: &SdgScoreVector, threshold: Threshold) -> TagResult {
    let mut tags: Vec<(u8, SimilarityScore)> = scores
        .iter()
        .filter(|(_, s)| threshold.keeps(s.value()))
        .collect();
    tags.sort_by(|a, b| b.1.value().total_cmp(&a.1.value()).then(a.0.cmp(&b.0)));
    TagResult {
        publication_id: scores.publication_id.clone(),
        tags,
        threshold: threshold.value,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTag {
    pub goal: u8,
    pub score: f64,
}

/// One line of the similarity tag output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTagRecord {
    pub id: String,
    pub method: String,
    pub threshold: f64,
    pub tags: Vec<SimTag>,
}

impl From<&TagResult> for SimTagRecord {
    fn from(r: &TagResult) -> Self {
        SimTagRecord {
            id: r.publication_id.clone(),
            method: "similarity".into(),
            threshold: r.threshold,
            tags: r
                .tags
                .iter()
                .map(|(g, s)| SimTag {
                    goal: *g,
                    score: s.value(),
                })
                .collect(),
        }
    }
}

impl TryFrom<SimTagRecord> for TagResult {
    type Error = SimtagError;

    fn try_from(r: SimTagRecord) -> Result<Self, Self::Error> {
        let tags = r
            .tags
            .into_iter()
            .map(|t| {
                if is_valid_goal(t.goal as i64) {
                    Ok((t.goal, SimilarityScore::new(t.score)))
                } else {
                    Err(SimtagError::MissingGoalVector(t.goal))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(TagResult {
            publication_id: r.id,
            tags,
            threshold: r.threshold,
        })
    }
}

/// Edge value rounded so that bin labels print cleanly.
fn bin_edge(index: usize, width: f64) -> f64 {
    ((-1.0 + index as f64 * width) * 1e9).round() / 1e9
}

/// Number of bins of `width` covering [-1, 1].
pub fn bin_count(width: f64) -> usize {
    ((2.0 / width) - 1e-9).ceil().max(1.0) as usize
}

/// Histogram of scores over [-1, 1] as (lower edge, count). Bins are
/// half-open except the last, which also holds 1.0.
pub fn score_histogram(scores: &[f64], bin_width: f64) -> Vec<(f64, usize)> {
    assert!(
        bin_width > 0.0 && bin_width <= 1.0,
        "bin width must be in (0, 1], got {bin_width}"
    );
    let n = bin_count(bin_width);
    let mut counts = vec![0usize; n];
    for &s in scores {
        // The epsilon puts scores sitting on an edge (up to rounding) in the upper bin.
        let raw = ((s + 1.0) / bin_width + 1e-9).floor();
        let idx = if raw < 0.0 {
            0
        } else {
            (raw as usize).min(n - 1)
        };
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (bin_edge(i, bin_width), c))
        .collect()
}

/// For each goal, how many tagged publications of each type it received.
pub fn goal_distribution(
    results: &[TagResult],
    pubs: &[Publication],
) -> Result<BTreeMap<u8, BTreeMap<String, usize>>, SimtagError> {
    let types: HashMap<&str, &str> = pubs
        .iter()
        .map(|p| (p.id.as_str(), p.pub_type.as_str()))
        .collect();
    let mut out: BTreeMap<u8, BTreeMap<String, usize>> = BTreeMap::new();
    for r in results {
        let pub_type = types
            .get(r.publication_id.as_str())
            .ok_or_else(|| SimtagError::UnknownPublication(r.publication_id.clone()))?;
        for (goal, _) in &r.tags {
            *out.entry(*goal)
                .or_default()
                .entry(pub_type.to_string())
                .or_default() += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;

    fn scores(pairs: &[(u8, f64)], rest: f64) -> SdgScoreVector {
        let mut map: BTreeMap<u8, f64> = all_goals().map(|g| (g, rest)).collect();
        map.extend(pairs.iter().copied());
        SdgScoreVector::from_map("p1", &map).unwrap()
    }

    fn publication(id: &str, pub_type: &str) -> Publication {
        Publication {
            id: id.into(),
            title: format!("title {id}"),
            abstract_text: String::new(),
            pub_type: pub_type.into(),
            year: None,
            authors: vec![],
        }
    }

    #[test]
    fn threshold_keeps_inclusive_sorted() {
        let s = scores(&[(12, 0.44), (7, 0.41), (13, 0.30)], 0.1);
        let r = apply_threshold(&s, 0.4);
        let goals: Vec<_> = r.tags.iter().map(|t| t.0).collect();
        assert_eq!(goals, [12, 7]);
        assert!(apply_threshold(&scores(&[], 0.1), 0.4).tags.is_empty());
    }

    #[test]
    fn threshold_zero_keeps_everything_with_ties_by_goal() {
        let s = scores(&[(5, 0.9)], 0.2);
        let r = apply_threshold(&s, 0.0);
        assert_eq!(r.tags.len(), 17);
        let goals: Vec<_> = r.tags.iter().map(|t| t.0).collect();
        let mut expected = vec![5];
        expected.extend((1..=17).filter(|g| *g != 5));
        assert_eq!(goals, expected);
    }

    #[test]
    fn exclusive_threshold_drops_equal_scores() {
        let s = scores(&[(14, 0.40), (11, 0.6)], 0.1);
        let r = apply_threshold_with(&s, Threshold::new(0.4, false).unwrap());
        assert_eq!(r.tags.iter().map(|t| t.0).collect::<Vec<_>>(), [11]);
        assert!(Threshold::new(1.01, true).is_err());
        assert!(Threshold::new(-0.1, true).is_err());
    }

    #[test]
    fn from_map_needs_all_goals() {
        let map: BTreeMap<u8, f64> = (1..=16).map(|g| (g, 0.0)).collect();
        assert!(SdgScoreVector::from_map("x", &map).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = score_histogram(&[0.05, 0.05, 0.45], 0.1);
        assert_eq!(h.len(), 20);
        let count_at = |edge: f64| h.iter().find(|(e, _)| (*e - edge).abs() < 1e-12).unwrap().1;
        assert_eq!(count_at(0.0), 2);
        assert_eq!(count_at(0.4), 1);
        assert_eq!(h.iter().map(|b| b.1).sum::<usize>(), 3);
        assert!(score_histogram(&[], 0.1).iter().all(|b| b.1 == 0));
    }

    #[test]
    fn histogram_edges() {
        let h = score_histogram(&[0.4, 1.0, -1.0, 0.0], 0.1);
        let count_at = |edge: f64| h.iter().find(|(e, _)| (*e - edge).abs() < 1e-12).unwrap().1;
        // An upper edge belongs to the next bin, except for the closed final bin.
        assert_eq!(count_at(0.4), 1);
        assert_eq!(count_at(0.9), 1);
        assert_eq!(count_at(-1.0), 1);
        assert_eq!(count_at(0.0), 1);
    }

    #[test]
    fn distribution_by_type() {
        let pubs = [
            publication("a", "journal"),
            publication("b", "journal"),
            publication("c", "conference"),
        ];
        let tag = |id: &str, goals: &[u8]| TagResult {
            publication_id: id.into(),
            tags: goals
                .iter()
                .map(|g| (*g, SimilarityScore::new(0.5)))
                .collect(),
            threshold: 0.4,
        };
        let d = goal_distribution(&[tag("a", &[11, 4])], &pubs).unwrap();
        assert_eq!(d[&11]["journal"], 1);
        assert_eq!(d[&4]["journal"], 1);
        let d =
            goal_distribution(&[tag("a", &[11]), tag("b", &[11]), tag("c", &[4])], &pubs).unwrap();
        assert_eq!(d[&11]["journal"], 2);
        assert_eq!(d[&4]["conference"], 1);
        assert!(goal_distribution(&[tag("a", &[])], &pubs)
            .unwrap()
            .is_empty());
        assert!(matches!(
            goal_distribution(&[tag("zz", &[1])], &pubs),
            Err(SimtagError::UnknownPublication(_))
        ));
    }

    #[test]
    fn cache_round_trip_orders_keys_numerically() {
        let provider = HashEmbedder::new(8).unwrap();
        let vectors: BTreeMap<u8, Vector> = all_goals()
            .map(|g| {
                (
                    g,
                    crate::embed::hash_embed(&format!("goal {g} text"), 8).unwrap(),
                )
            })
            .collect();
        let gv = GoalVectors::new(provider.identity(), 8, vectors).unwrap();
        let text = serde_json::to_string(&gv).unwrap();
        let p1 = text.find("\"1\"").unwrap();
        let p2 = text.find("\"2\"").unwrap();
        let p10 = text.find("\"10\"").unwrap();
        assert!(p1 < p2 && p2 < p10);
        let back: GoalVectors = serde_json::from_str(&text).unwrap();
        assert_eq!(back, gv);
    }

    #[test]
    fn cache_missing_goal_rejected() {
        let text = r#"{"provider":"x","dim":2,"vectors":{"1":[1.0,0.0]}}"#;
        assert!(serde_json::from_str::<GoalVectors>(text).is_err());
    }
}
