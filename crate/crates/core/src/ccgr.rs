//! Episodic graph memory of past trajectories with windowed retrieval.
//!
//! Every executed step becomes a State, Action and Outcome node. Retrieval
//! enumerates per-episode windows of at most [`WINDOW`] steps anchored at
//! steps whose payload overlaps the query, scores each by token Jaccard
//! (semantic) and by the longest common subsequence of action verbs against
//! the recent actions (structural), and ranks by the weighted sum. Ties go to
//! the more recent episode, then the later window.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::Predicate;
use crate::traversal::{EpisodeHistory, Phase};

/// Steps per retrieval window.
pub const WINDOW: usize = 5;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    State,
    Action,
    Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Temporal,
    Causes,
    Enables,
    RecoversFrom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryNode {
    pub id: u32,
    pub kind: MemoryKind,
    pub payload: BTreeSet<String>,
    pub episode: u32,
    pub step: u32,
    /// Canonical action for Action nodes; error type for failed Outcome nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Action nodes issued by a correction rule.
    #[serde(default)]
    pub correction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemoryEdge {
    pub src: u32,
    pub dst: u32,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGraph {
    pub version: u32,
    pub nodes: Vec<MemoryNode>,
    pub edges: Vec<MemoryEdge>,
    #[serde(default)]
    pub episodes: u32,
    /// Goal predicates per episode, indexed by episode id.
    #[serde(default)]
    pub episode_goals: Vec<Vec<String>>,
}

impl Default for TrajectoryGraph {
    fn default() -> Self {
        TrajectoryGraph {
            version: FORMAT_VERSION,
            nodes: Vec::new(),
            edges: Vec::new(),
            episodes: 0,
            episode_goals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub goal_tokens: BTreeSet<String>,
    pub predicates: BTreeSet<String>,
    pub recent_actions: Vec<String>,
}

impl RetrievalQuery {
    pub fn tokens(&self) -> BTreeSet<String> {
        let mut t: BTreeSet<String> = self.goal_tokens.union(&self.predicates).cloned().collect();
        t.extend(self.recent_actions.iter().cloned());
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalWeights {
    pub semantic: f64,
    pub structural: f64,
}

impl RetrievalWeights {
    /// Normalizes so the weights sum to one; both zero falls back to equal weights.
    pub fn new(semantic: f64, structural: f64) -> Self {
        let (s, t) = (semantic.max(0.0), structural.max(0.0));
        let z = s + t;
        if z <= 0.0 {
            return Self::default();
        }
        RetrievalWeights { semantic: s / z, structural: t / z }
    }
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        RetrievalWeights { semantic: 0.5, structural: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub candidate_actions: Vec<String>,
    pub failure_modes: Vec<String>,
    pub recovery_patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub episode: u32,
    /// First and last step of the window.
    pub steps: (u32, u32),
    pub nodes: Vec<u32>,
    pub edges: Vec<MemoryEdge>,
    pub semantic: f64,
    pub structural: f64,
    pub combined: f64,
    pub provenance: Provenance,
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS length over the longer sequence; zero when either is empty.
pub fn lcs_ratio<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    lcs_len(a, b) as f64 / a.len().max(b.len()) as f64
}

impl TrajectoryGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn add_node(&mut self, kind: MemoryKind, mut payload: BTreeSet<String>, episode: u32, step: u32) -> u32 {
        if payload.is_empty() {
            payload.insert("empty".to_string());
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(MemoryNode { id, kind, payload, episode, step, label: None, correction: false });
        id
    }

    /// Stores one episode; returns the number of nodes added.
    pub fn ingest(&mut self, history: &EpisodeHistory, goals: &[Predicate]) -> usize {
        if history.records.is_empty() {
            return 0;
        }
        let episode = self.episodes;
        self.episodes += 1;
        let before = self.nodes.len();
        self.episode_goals.push(goals.iter().map(|g| g.to_string()).collect());
        let mut prev: Option<u32> = None;
        let mut outcome_of: BTreeMap<u32, u32> = BTreeMap::new();
        let mut recovering: BTreeSet<u32> = BTreeSet::new();
        for r in &history.records {
            let state_payload: BTreeSet<String> = r.outcome.before.iter().map(|p| p.to_string()).collect();
            let s = self.add_node(MemoryKind::State, state_payload, episode, r.step);
            let action_payload: BTreeSet<String> = r.action.tokens().into_iter().collect();
            let a = self.add_node(MemoryKind::Action, action_payload, episode, r.step);
            self.nodes[a as usize].label = Some(r.action.key());
            self.nodes[a as usize].correction = r.phase == Phase::Correction;
            let mut out_payload: BTreeSet<String> = r.outcome.after.iter().map(|p| p.to_string()).collect();
            out_payload.insert(if r.outcome.succeeded { "success" } else { "failure" }.to_string());
            if let Some(k) = r.error_type {
                out_payload.insert(k.name().to_string());
            }
            let o = self.add_node(MemoryKind::Outcome, out_payload, episode, r.step);
            self.nodes[o as usize].label = r.error_type.map(|k| k.name().to_string());
            if let Some(p) = prev {
                self.edges.push(MemoryEdge { src: p, dst: s, relation: Relation::Temporal });
            }
            self.edges.push(MemoryEdge { src: s, dst: a, relation: Relation::Temporal });
            self.edges.push(MemoryEdge { src: a, dst: o, relation: Relation::Temporal });
            self.edges.push(MemoryEdge { src: a, dst: o, relation: Relation::Causes });
            if r.outcome.preconditions_held {
                self.edges.push(MemoryEdge { src: s, dst: a, relation: Relation::Enables });
            }
            if let Some(target) = r.corrects {
                // One recovery edge per corrected step, from its first correction action.
                if let Some(failed) = outcome_of.get(&target) {
                    if recovering.insert(target) {
                        self.edges.push(MemoryEdge { src: a, dst: *failed, relation: Relation::RecoversFrom });
                    }
                }
            }
            outcome_of.insert(r.step, o);
            prev = Some(o);
        }
        self.nodes.len() - before
    }

    /// Node ids per (episode, step), each triple ordered State, Action, Outcome.
    fn steps(&self) -> BTreeMap<u32, BTreeMap<u32, Vec<u32>>> {
        let mut by: BTreeMap<u32, BTreeMap<u32, Vec<u32>>> = BTreeMap::new();
        for n in &self.nodes {
            by.entry(n.episode).or_default().entry(n.step).or_default().push(n.id);
        }
        by
    }

    fn score_window(
        &self,
        episode: u32,
        steps: &[(u32, &Vec<u32>)],
        query: &RetrievalQuery,
        qt: &BTreeSet<String>,
        w: RetrievalWeights,
    ) -> RetrievalResult {
        let ids: Vec<u32> = steps.iter().flat_map(|(_, ids)| ids.iter().copied()).collect();
        let idset: BTreeSet<u32> = ids.iter().copied().collect();
        let mut tokens = BTreeSet::new();
        let mut verbs = Vec::new();
        let mut prov = Provenance::default();
        for id in &ids {
            let n = &self.nodes[*id as usize];
            tokens.extend(n.payload.iter().cloned());
            match n.kind {
                MemoryKind::Action => {
                    let label = n.label.clone().unwrap_or_default();
                    verbs.push(label.split('(').next().unwrap_or_default().to_string());
                    if n.correction {
                        if !prov.recovery_patterns.contains(&label) {
                            prov.recovery_patterns.push(label);
                        }
                    } else if !prov.candidate_actions.contains(&label) {
                        prov.candidate_actions.push(label);
                    }
                }
                MemoryKind::Outcome => {
                    if let Some(l) = &n.label {
                        if !prov.failure_modes.contains(l) {
                            prov.failure_modes.push(l.clone());
                        }
                    }
                }
                MemoryKind::State => {}
            }
        }
        let edges = self.edges.iter().filter(|e| idset.contains(&e.src) && idset.contains(&e.dst)).copied().collect();
        let semantic = jaccard(&tokens, qt);
        let structural = lcs_ratio(&verbs, &query.recent_actions);
        RetrievalResult {
            episode,
            steps: (steps[0].0, steps[steps.len() - 1].0),
            nodes: ids,
            edges,
            semantic,
            structural,
            combined: w.semantic * semantic + w.structural * structural,
            provenance: prov,
        }
    }

    /// Top-`k` windows for the query; empty when memory is empty or `k` is 0.
    pub fn retrieve(&self, query: &RetrievalQuery, k: usize, weights: RetrievalWeights) -> Vec<RetrievalResult> {
        if self.nodes.is_empty() || k == 0 {
            return Vec::new();
        }
        let qt = query.tokens();
        let mut results = Vec::new();
        for (episode, steps) in self.steps() {
            let ordered: Vec<(u32, &Vec<u32>)> = steps.iter().map(|(s, ids)| (*s, ids)).collect();
            for i in 0..ordered.len() {
                let anchored = ordered[i].1.iter().any(|id| !self.nodes[*id as usize].payload.is_disjoint(&qt));
                if !anchored {
                    continue;
                }
                let end = (i + WINDOW).min(ordered.len());
                results.push(self.score_window(episode, &ordered[i..end], query, &qt, weights));
            }
        }
        results.sort_by(|a, b| {
            b.combined.total_cmp(&a.combined).then(b.episode.cmp(&a.episode)).then(b.steps.0.cmp(&a.steps.0))
        });
        results.truncate(k);
        results
    }
}
