//! Publication–goal connections from both taggers, their intersection, and
//! the consensus and co-occurrence statistics built on it.

use std::collections::{BTreeMap, BTreeSet};

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::goals::GoalSet;
use crate::llmtag::LlmTagResult;
use crate::simtag::TagResult;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Connection {
    pub publication_id: String,
    pub goal: u8,
}

impl Connection {
    pub fn new(publication_id: impl Into<String>, goal: u8) -> Self {
        Connection {
            publication_id: publication_id.into(),
            goal,
        }
    }
}

/// Anything that asserts goals for a publication.
pub trait Tagged {
    fn publication_id(&self) -> &str;
    fn goals(&self) -> Vec<u8>;
}

impl Tagged for TagResult {
    fn publication_id(&self) -> &str {
        &self.publication_id
    }

    fn goals(&self) -> Vec<u8> {
        self.tags.iter().map(|(g, _)| *g).collect()
    }
}

impl Tagged for LlmTagResult {
    fn publication_id(&self) -> &str {
        &self.publication_id
    }

    fn goals(&self) -> Vec<u8> {
        self.assignments.iter().map(|a| a.goal).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConnectionSet(BTreeSet<Connection>);

impl ConnectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: Connection) -> bool {
        self.0.insert(c)
    }

    pub fn contains(&self, c: &Connection) -> bool {
        self.0.contains(c)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Connection> {
        self.0.iter()
    }

    pub fn intersect(&self, other: &ConnectionSet) -> ConnectionSet {
        ConnectionSet(self.0.intersection(&other.0).cloned().collect())
    }

    pub fn union(&self, other: &ConnectionSet) -> ConnectionSet {
        ConnectionSet(self.0.union(&other.0).cloned().collect())
    }

    pub fn publication_ids(&self) -> BTreeSet<&str> {
        self.0.iter().map(|c| c.publication_id.as_str()).collect()
    }

    /// Goals per publication.
    pub fn by_publication(&self) -> BTreeMap<&str, GoalSet> {
        let mut out: BTreeMap<&str, GoalSet> = BTreeMap::new();
        for c in &self.0 {
            out.entry(c.publication_id.as_str())
                .or_default()
                .insert(c.goal);
        }
        out
    }

    /// Number of connections per goal.
    pub fn goal_counts(&self) -> BTreeMap<u8, usize> {
        let mut out = BTreeMap::new();
        for c in &self.0 {
            *out.entry(c.goal).or_default() += 1;
        }
        out
    }
}

impl FromIterator<Connection> for ConnectionSet {
    fn from_iter<I: IntoIterator<Item = Connection>>(iter: I) -> Self {
        ConnectionSet(iter.into_iter().collect())
    }
}

pub fn to_connections<'a, T: Tagged + 'a>(
    results: impl IntoIterator<Item = &'a T>,
) -> ConnectionSet {
    results
        .into_iter()
        .flat_map(|r| {
            let id = r.publication_id().to_string();
            r.goals()
                .into_iter()
                .map(move |g| Connection::new(id.clone(), g))
        })
        .collect()
}

pub fn intersect(a: &ConnectionSet, b: &ConnectionSet) -> ConnectionSet {
    a.intersect(b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusStats {
    pub size_a: usize,
    pub size_b: usize,
    pub size_intersection: usize,
    pub size_union: usize,
    pub share_of_union: f64,
    pub consensus_publications: usize,
    pub consensus_publication_share: f64,
    /// The denominator used for `consensus_publication_share`.
    pub total_publications: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `total_publications` is the denominator for the publication-level share.
pub fn consensus_stats(
    a: &ConnectionSet,
    b: &ConnectionSet,
    total_publications: usize,
) -> ConsensusStats {
    let both = a.intersect(b);
    let size_intersection = both.len();
    let size_union = a.len() + b.len() - size_intersection;
    let consensus_publications = both.publication_ids().len();
    ConsensusStats {
        size_a: a.len(),
        size_b: b.len(),
        size_intersection,
        size_union,
        share_of_union: ratio(size_intersection, size_union),
        consensus_publications,
        consensus_publication_share: ratio(consensus_publications, total_publications),
        total_publications,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceGraph {
    /// Publications tagged with each goal.
    pub nodes: BTreeMap<u8, usize>,
    /// Publications tagged with both goals of an unordered pair, keyed (low, high).
    pub edges: BTreeMap<(u8, u8), usize>,
}

#[derive(Serialize)]
struct NodeOut {
    goal: u8,
    count: usize,
}

#[derive(Serialize)]
struct EdgeOut {
    a: u8,
    b: u8,
    count: usize,
}

impl Serialize for CooccurrenceGraph {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let nodes: Vec<NodeOut> = self
            .nodes
            .iter()
            .map(|(&goal, &count)| NodeOut { goal, count })
            .collect();
        let edges: Vec<EdgeOut> = self
            .edges
            .iter()
            .map(|(&(a, b), &count)| EdgeOut { a, b, count })
            .collect();
        let mut st = s.serialize_struct("CooccurrenceGraph", 2)?;
        st.serialize_field("nodes", &nodes)?;
        st.serialize_field("edges", &edges)?;
        st.end()
    }
}

pub fn cooccurrence_graph(c: &ConnectionSet) -> CooccurrenceGraph {
    let mut graph = CooccurrenceGraph::default();
    for goals in c.by_publication().values() {
        let tagged: Vec<u8> = goals.iter().collect();
        for (i, &g) in tagged.iter().enumerate() {
            *graph.nodes.entry(g).or_default() += 1;
            for &h in &tagged[i + 1..] {
                *graph.edges.entry((g, h)).or_default() += 1;
            }
        }
    }
    graph
}
