//! Transition selection: threshold routing, edge guards and the softmax
//! over value, cost, risk and semantic scores.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{base_risk, check_goal, rules, Flag, Predicate, WorldState};
use crate::error_engine::{CorrectionLevel, ErrorClass, ErrorValue};
use crate::graph::{EdgeKind, NodeId, NodeRole, TaskEdge, TaskGraph, TaskNode};
use crate::math;
use crate::planner::{ScoreQuery, ScorerError, SemanticScorer};

/// Weights of the four score terms and the softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub temperature: f64,
}

impl Default for PolicyCoefficients {
    fn default() -> Self {
        PolicyCoefficients { alpha: 1.0, beta: 1.0, gamma: 2.0, lambda: 2.0, temperature: 1.0 }
    }
}

impl PolicyCoefficients {
    pub fn logit(&self, q: f64, c: f64, r: f64, phi: f64) -> f64 {
        self.alpha * q - self.beta * c - self.gamma * r + self.lambda * phi
    }

    pub fn is_valid(&self) -> bool {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        ok(self.alpha) && ok(self.beta) && ok(self.gamma) && ok(self.lambda) && self.temperature > 0.0
    }
}

/// Policy ablations; each variant except `Full` zeroes one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    NoValue,
    NoCost,
    NoRisk,
    NoLlm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoValue, Variant::NoCost, Variant::NoRisk, Variant::NoLlm];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoValue => "no_value",
            Variant::NoCost => "no_cost",
            Variant::NoRisk => "no_risk",
            Variant::NoLlm => "no_llm",
        }
    }

    pub fn from_name(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn apply(self, mut c: PolicyCoefficients) -> PolicyCoefficients {
        match self {
            Variant::Full => {}
            Variant::NoValue => c.alpha = 0.0,
            Variant::NoCost => c.beta = 0.0,
            Variant::NoRisk => c.gamma = 0.0,
            Variant::NoLlm => c.lambda = 0.0,
        }
        c
    }
}

/// Error regime of a step relative to its node's thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Low,
    Moderate,
    High,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Low, Regime::Moderate, Regime::High];

    pub fn of(error: f64, local: f64, max: f64) -> Regime {
        if error <= local {
            Regime::Low
        } else if error <= max {
            Regime::Moderate
        } else {
            Regime::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Low => "low",
            Regime::Moderate => "moderate",
            Regime::High => "high",
        }
    }
}

/// Edge kind selected by the node's thresholds: `main` up to the local
/// threshold, `corr` up to the maximum, `fb` above.
pub fn route_by_threshold(error: ErrorValue, node: &TaskNode) -> EdgeKind {
    match Regime::of(error.value(), node.local_threshold, node.max_threshold) {
        Regime::Low => EdgeKind::Main,
        Regime::Moderate => EdgeKind::Corr,
        Regime::High => EdgeKind::Fb,
    }
}

/// Budget and escalation state the guards consult.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GuardState {
    /// Lowest correction level allowed for the current failure.
    pub floor: Option<CorrectionLevel>,
    /// A local rule triggers and the node's retry budget is not spent.
    pub l1_available: bool,
    /// Alternative nodes already tried.
    pub attempted_options: BTreeSet<NodeId>,
}

/// Execution context visible to the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefContext {
    pub current: NodeId,
    pub steps_elapsed: u32,
    pub consecutive_failures: BTreeMap<NodeId, u32>,
    pub last_error: Option<ErrorClass>,
    pub remaining_goals: usize,
    pub goals: Vec<Predicate>,
    pub guard: GuardState,
    /// Action keys of recovery patterns returned by trajectory retrieval.
    #[serde(default)]
    pub retrieved_recoveries: Vec<String>,
}

impl BeliefContext {
    pub fn new(current: NodeId, goals: Vec<Predicate>) -> Self {
        BeliefContext {
            current,
            steps_elapsed: 0,
            consecutive_failures: BTreeMap::new(),
            last_error: None,
            remaining_goals: goals.len(),
            goals,
            guard: GuardState::default(),
            retrieved_recoveries: Vec::new(),
        }
    }

    pub fn failures(&self, node: NodeId) -> u32 {
        self.consecutive_failures.get(&node).copied().unwrap_or(0)
    }
}

/// Is `edge` an opt edge into an untried alternative for `step`?
fn fresh_alternative(g: &TaskGraph, edge: &TaskEdge, step: usize, belief: &BeliefContext) -> bool {
    edge.kind == EdgeKind::Opt
        && !belief.guard.attempted_options.contains(&edge.dst)
        && g.node(edge.dst).is_some_and(|n| n.role == NodeRole::Alternative { step: step as u32 })
}

/// Untried alternatives for the plan step of `node`.
pub fn open_alternatives(g: &TaskGraph, node: NodeId, belief: &BeliefContext) -> Vec<TaskEdge> {
    let Some(step) = g.node(node).and_then(TaskNode::step) else {
        return Vec::new();
    };
    g.alternatives_for(step).into_iter().filter(|e| e.dst != node && fresh_alternative(g, e, step, belief)).collect()
}

/// Whether `edge` may be taken from `belief.current` given the step's error.
///
/// After a low error, main edges and opt edges into untried alternatives of
/// the next step are admissible.
/// After a moderate error the escalation floor decides: `corr` while local
/// rules are available, `opt` into untried alternatives of the failing step
/// up to floor L2, and `fb` only when neither is possible. After a high
/// error only `fb` is admissible.
pub fn eval_guard(g: &TaskGraph, edge: &TaskEdge, belief: &BeliefContext, error: ErrorValue) -> bool {
    let Some(cur) = g.node(belief.current) else {
        return false;
    };
    let from_current = edge.src == belief.current;
    match route_by_threshold(error, cur) {
        EdgeKind::Main => match edge.kind {
            EdgeKind::Main => from_current,
            EdgeKind::Opt if from_current => cur.step().is_some_and(|k| fresh_alternative(g, edge, k + 1, belief)),
            _ => false,
        },
        EdgeKind::Corr => {
            let floor = belief.guard.floor.unwrap_or(CorrectionLevel::L1);
            let corr_ok = floor <= CorrectionLevel::L1 && belief.guard.l1_available;
            let opts =
                if floor <= CorrectionLevel::L2 { open_alternatives(g, belief.current, belief) } else { Vec::new() };
            match edge.kind {
                EdgeKind::Corr => from_current && edge.dst == belief.current && corr_ok,
                EdgeKind::Opt => opts.contains(edge),
                EdgeKind::Fb => from_current && !corr_ok && opts.is_empty(),
                EdgeKind::Main => false,
            }
        }
        EdgeKind::Fb => edge.kind == EdgeKind::Fb && from_current,
        EdgeKind::Opt => false,
    }
}

/// Every admissible candidate edge for the current decision, in edge order.
pub fn admissible_edges(g: &TaskGraph, belief: &BeliefContext, error: ErrorValue) -> Vec<TaskEdge> {
    let mut out: Vec<TaskEdge> = g.outgoing(belief.current, None).unwrap_or_default();
    out.extend(open_alternatives(g, belief.current, belief).into_iter().filter(|e| e.src != belief.current));
    out.retain(|e| eval_guard(g, e, belief, error));
    out.sort_by_key(|e| (e.kind, e.dst));
    out.dedup();
    out
}

/// Component scores and logit of one candidate edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionScore {
    pub edge: TaskEdge,
    pub q: f64,
    pub c: f64,
    pub r: f64,
    pub phi: f64,
    pub logit: f64,
}

impl TransitionScore {
    pub fn new(edge: TaskEdge, q: f64, c: f64, r: f64, phi: f64, coeffs: &PolicyCoefficients) -> Self {
        TransitionScore { edge, q, c, r, phi, logit: coeffs.logit(q, c, r, phi) }
    }
}

/// Extra cost charged for leaving the nominal flow.
pub fn kind_surcharge(kind: EdgeKind) -> f64 {
    match kind {
        EdgeKind::Main => 0.0,
        EdgeKind::Opt => 0.1,
        EdgeKind::Corr => 0.05,
        EdgeKind::Fb => 0.3,
    }
}

/// Fraction of goals satisfied after symbolically executing the path from
/// `start` on `world`. Faults, occlusion and pose loss are ignored; steps
/// whose preconditions fail are skipped.
pub fn lookahead_value(g: &TaskGraph, start: NodeId, world: &WorldState, goals: &[Predicate]) -> f64 {
    let mut w = world.clone();
    w.active_faults.clear();
    w.agent.pose_ok = true;
    w.agent.halted = false;
    for o in w.objects.values_mut() {
        o.flags.remove(&Flag::Occluded);
    }
    for id in g.continuation(start) {
        if let Some(a) = g.node(id).and_then(|n| n.action.as_ref()) {
            if let Ok(next) = rules::execute(&w, a) {
                w = next;
            }
        }
    }
    check_goal(&w, goals).ratio
}

/// Risk added per consecutive failure of the target node.
pub const FAILURE_RISK: f64 = 0.3;
/// Risk added when the target action's preconditions fail in the observed world.
pub const INFEASIBLE_RISK: f64 = 0.4;

/// Computes q, c, r and phi for one edge.
pub fn score_components(
    g: &TaskGraph,
    edge: &TaskEdge,
    belief: &BeliefContext,
    observed: &WorldState,
    scorer: &dyn SemanticScorer,
    coeffs: &PolicyCoefficients,
) -> Result<TransitionScore, ScorerError> {
    let q = lookahead_value(g, edge.dst, observed, &belief.goals);
    let chain = g.main_chain().len().max(1) as f64;
    let c = g.continuation(edge.dst).len() as f64 / chain + kind_surcharge(edge.kind);
    let target = g.node(edge.dst);
    let r = match target.and_then(|n| n.action.as_ref()) {
        Some(a) => math::clamp01(
            FAILURE_RISK * belief.failures(edge.dst) as f64
                + base_risk(a.verb)
                + if rules::check(observed, a).is_err() { INFEASIBLE_RISK } else { 0.0 },
        ),
        None => 0.0,
    };
    let phi = match target {
        Some(t) => {
            let query = ScoreQuery { edge: *edge, target: t, belief, observation: observed.observation_tokens() };
            math::clamp01(scorer.score(&query)?)
        }
        None => 0.0,
    };
    Ok(TransitionScore::new(*edge, q, c, r, phi, coeffs))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("no candidate transitions")]
    EmptyCandidateSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub distribution: Vec<f64>,
    pub chosen: TaskEdge,
    pub index: usize,
}

/// Temperatures at or below this select the argmax (first on ties).
pub const ARGMAX_TEMPERATURE: f64 = 1e-9;

/// Softmax of `logit / temperature`, shifted by the maximum logit.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if temperature <= ARGMAX_TEMPERATURE {
        let best = logits.iter().position(|l| *l == max).unwrap_or(0);
        return (0..logits.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect();
    }
    let w: Vec<f64> = logits.iter().map(|l| math::exp((l - max) / temperature)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Samples one edge from the softmax distribution with a seeded generator.
pub fn select_soft(
    scores: &[TransitionScore],
    coeffs: &PolicyCoefficients,
    seed: u64,
) -> Result<Selection, PolicyError> {
    if scores.is_empty() {
        return Err(PolicyError::EmptyCandidateSet);
    }
    let logits: Vec<f64> = scores.iter().map(|s| s.logit).collect();
    let distribution = softmax(&logits, coeffs.temperature);
    let u = math::unit(&mut math::rng(seed));
    let mut acc = 0.0;
    let mut index = distribution.len() - 1;
    for (i, p) in distribution.iter().enumerate() {
        acc += p;
        if u < acc {
            index = i;
            break;
        }
    }
    Ok(Selection { chosen: scores[index].edge, distribution, index })
}
