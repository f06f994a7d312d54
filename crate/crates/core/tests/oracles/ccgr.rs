//! Brute-force window enumeration for trajectory retrieval.

use std::collections::BTreeSet;

use hecg_core::ccgr::{MemoryKind, RetrievalQuery, RetrievalWeights, TrajectoryGraph, WINDOW};
use hecg_core::env::{parse_script, Predicate};
use hecg_core::traversal::{EpisodeHistory, OutcomeSnapshot, Phase, StepRecord};
use hecg_core::{EdgeKind, NodeId};

use super::Gen;

const ACTIONS: [&str; 8] = [
    "[walk] <kitchen>",
    "[grab] <mug>",
    "[open] <fridge>",
    "[putin] <mug> <fridge>",
    "[lookat] <mug>",
    "[close] <fridge>",
    "[push] <mug>",
    "[switchon] <stove>",
];

const WORDS: [&str; 8] = ["mug", "fridge", "kitchen", "stove", "success", "failure", "grab", "open"];

fn record(step: u32, action: &str, ok: bool, pre: bool) -> StepRecord {
    let p = Predicate::At("kitchen".into());
    StepRecord {
        step,
        phase: Phase::Primary,
        node: NodeId::new(0, step),
        action: parse_script(action).unwrap(),
        edge_kind: EdgeKind::Main,
        error_value: if ok { 0.0 } else { 0.5 },
        error_type: None,
        level: None,
        outcome: OutcomeSnapshot {
            succeeded: ok,
            message: String::new(),
            injected: None,
            before: [p.clone()].into_iter().collect(),
            after: [p].into_iter().collect(),
            preconditions_held: pre,
        },
        corrects: None,
    }
}

/// Up to 5 episodes of up to 12 steps: at most 180 memory nodes.
pub fn memory(g: &mut Gen) -> TrajectoryGraph {
    let mut m = TrajectoryGraph::default();
    for _ in 0..1 + g.below(5) {
        let records = (0..1 + g.below(12)).map(|i| record(i as u32, g.pick(&ACTIONS), g.coin(), g.coin())).collect();
        m.ingest(&EpisodeHistory { records, ..Default::default() }, &[]);
    }
    m
}

pub fn query(g: &mut Gen) -> RetrievalQuery {
    let goal_tokens = (0..g.below(4)).map(|_| g.pick(&WORDS).to_string()).collect();
    let recent_actions =
        (0..g.below(5)).map(|_| parse_script(g.pick(&ACTIONS)).unwrap().verb.as_str().to_string()).collect();
    RetrievalQuery { goal_tokens, predicates: BTreeSet::new(), recent_actions }
}

pub struct Window {
    pub episode: u32,
    pub start: u32,
    pub semantic: f64,
    pub structural: f64,
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for x in 1..=a.len() {
        for y in 1..=b.len() {
            t[x][y] = if a[x - 1] == b[y - 1] { t[x - 1][y - 1] + 1 } else { t[x - 1][y].max(t[x][y - 1]) };
        }
    }
    t[a.len()][b.len()]
}

/// Every anchored (episode, start) window scored from raw payloads, ranked
/// by combined score, then newer episode, then later start.
pub fn brute(m: &TrajectoryGraph, q: &RetrievalQuery, k: usize, w: RetrievalWeights) -> Vec<Window> {
    let mut qt: BTreeSet<String> = q.goal_tokens.clone();
    qt.extend(q.predicates.iter().cloned());
    qt.extend(q.recent_actions.iter().cloned());
    let mut out = Vec::new();
    let episodes: BTreeSet<u32> = m.nodes.iter().map(|n| n.episode).collect();
    for ep in episodes {
        let steps: Vec<u32> =
            m.nodes.iter().filter(|n| n.episode == ep).map(|n| n.step).collect::<BTreeSet<_>>().into_iter().collect();
        for (i, s) in steps.iter().enumerate() {
            let anchored =
                m.nodes.iter().any(|n| n.episode == ep && n.step == *s && n.payload.iter().any(|t| qt.contains(t)));
            if !anchored {
                continue;
            }
            let win: Vec<u32> = steps.iter().skip(i).take(WINDOW).copied().collect();
            let nodes: Vec<_> = m.nodes.iter().filter(|n| n.episode == ep && win.contains(&n.step)).collect();
            let toks: BTreeSet<&String> = nodes.iter().flat_map(|n| n.payload.iter()).collect();
            let inter = toks.iter().filter(|t| qt.contains(**t)).count();
            let union = toks.len() + qt.iter().filter(|t| !toks.contains(t)).count();
            let semantic = inter as f64 / union as f64;
            let verbs: Vec<String> = win
                .iter()
                .flat_map(|s| {
                    nodes
                        .iter()
                        .filter(move |n| n.step == *s && n.kind == MemoryKind::Action)
                        .map(|n| n.label.clone().unwrap().split('(').next().unwrap().to_string())
                })
                .collect();
            let b = &q.recent_actions;
            let structural = if verbs.is_empty() || b.is_empty() {
                0.0
            } else {
                lcs(&verbs, b) as f64 / verbs.len().max(b.len()) as f64
            };
            out.push(Window { episode: ep, start: *s, semantic, structural });
        }
    }
    let comb = |x: &Window| w.semantic * x.semantic + w.structural * x.structural;
    out.sort_by(|x, y| comb(y).total_cmp(&comb(x)).then(y.episode.cmp(&x.episode)).then(y.start.cmp(&x.start)));
    out.truncate(k);
    out
}

/// Compares `retrieve` with the brute force; returns a mismatch description.
pub fn check(m: &TrajectoryGraph, q: &RetrievalQuery, k: usize, w: RetrievalWeights) -> Result<(), String> {
    if m.nodes.len() > 200 {
        return Err(format!("memory has {} nodes", m.nodes.len()));
    }
    let fast = m.retrieve(q, k, w);
    let slow = brute(m, q, k, w);
    if fast.len() != slow.len() {
        return Err(format!("{} results, brute force {}", fast.len(), slow.len()));
    }
    for (f, s) in fast.iter().zip(&slow) {
        let same = (f.episode, f.steps.0) == (s.episode, s.start)
            && (f.semantic - s.semantic).abs() < 1e-12
            && (f.structural - s.structural).abs() < 1e-12;
        if !same {
            return Err(format!(
                "got ({}, {}, {}, {}), want ({}, {}, {}, {})",
                f.episode, f.steps.0, f.semantic, f.structural, s.episode, s.start, s.semantic, s.structural
            ));
        }
    }
    Ok(())
}

/// `queries` random (memory, query, k, weights) cases against the brute force.
pub fn check_many(queries: u64) -> Result<(), String> {
    for i in 0..queries {
        let mut g = Gen::new(0xcc06 + i);
        let m = memory(&mut g);
        let q = query(&mut g);
        let k = 1 + g.below(5);
        let s = g.unit();
        let w = RetrievalWeights::new(s, 1.0 - s);
        check(&m, &q, k, w).map_err(|e| format!("case {i}: {e}"))?;
        let longer = m.retrieve(&q, k + 1, w);
        let fast = m.retrieve(&q, k, w);
        if longer[..fast.len()] != fast[..] {
            return Err(format!("case {i}: top-{k} is not a prefix of top-{}", k + 1));
        }
    }
    Ok(())
}
