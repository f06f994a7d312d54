//! Typed execution graph: construction from a plan, validation and
//! ordered edge queries.
//!
//! A plan `a_1..a_n` becomes a chain of action nodes joined by `main` edges
//! and ending in a terminal node. Alternatives for step `k` hang off the
//! decision point before it (node `k-1`, or node `k` itself for the first
//! step) through an `opt` edge and rejoin node `k+1` through both an `opt`
//! edge and a `main` edge, so traversal continues on the main flow. Every
//! action and alternative node carries a `corr` self-loop and a `fb` edge
//! into a single replan sentinel, which in turn has a `main` edge to the
//! terminal.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::correction::{rules_for, LocalCorrectionRule};
use crate::env::{expected_outcome, ActionScript, Predicate};

/// Node identifier, unique across all graphs of one episode: replans bump
/// the generation. Written `g<generation>.n<index>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub generation: u32,
    pub index: u32,
}

impl NodeId {
    pub const fn new(generation: u32, index: u32) -> Self {
        NodeId { generation, index }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}.n{}", self.generation, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad node id `{0}`")]
pub struct NodeIdParseError(pub String);

impl FromStr for NodeId {
    type Err = NodeIdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || NodeIdParseError(s.to_string());
        let (g, n) = s.split_once('.').ok_or_else(err)?;
        let g = g.strip_prefix('g').and_then(|g| g.parse().ok()).ok_or_else(err)?;
        let n = n.strip_prefix('n').and_then(|n| n.parse().ok()).ok_or_else(err)?;
        Ok(NodeId::new(g, n))
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Main,
    Opt,
    Corr,
    Fb,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [EdgeKind::Main, EdgeKind::Opt, EdgeKind::Corr, EdgeKind::Fb];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Main => "main",
            EdgeKind::Opt => "opt",
            EdgeKind::Corr => "corr",
            EdgeKind::Fb => "fb",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskEdge {
    pub src: NodeId,
    pub kind: EdgeKind,
    pub dst: NodeId,
}

impl TaskEdge {
    pub fn new(src: NodeId, kind: EdgeKind, dst: NodeId) -> Self {
        TaskEdge { src, kind, dst }
    }
}

impl fmt::Display for TaskEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -{}-> {}", self.src, self.kind, self.dst)
    }
}

/// Label, referenced objects and semantic tags of a node.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskContext {
    pub label: String,
    #[serde(default)]
    pub objects: BTreeSet<String>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl TaskContext {
    pub fn for_action(action: &ActionScript) -> Self {
        TaskContext {
            label: action.key(),
            objects: action.args.iter().map(|a| a.name.clone()).collect(),
            tags: action.verb.context_tags().iter().map(|t| t.to_string()).collect(),
        }
    }

    /// Verb, objects and tags as one token set.
    pub fn tokens(&self, action: Option<&ActionScript>) -> BTreeSet<String> {
        let mut t: BTreeSet<String> = self.objects.iter().chain(self.tags.iter()).cloned().collect();
        if let Some(a) = action {
            t.insert(a.verb.as_str().to_string());
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum NodeRole {
    /// Plan step `step` (0-based) on the main chain.
    Action {
        step: u32,
    },
    /// An alternative for plan step `step`.
    Alternative {
        step: u32,
    },
    Terminal,
    /// Target of every fallback edge.
    Replan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: NodeId,
    #[serde(flatten)]
    pub role: NodeRole,
    pub task_context: TaskContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionScript>,
    #[serde(default)]
    pub expected_outcome: BTreeSet<Predicate>,
    pub local_threshold: f64,
    pub max_threshold: f64,
    #[serde(default)]
    pub local_rules: Vec<LocalCorrectionRule>,
    #[serde(default)]
    pub successors: Vec<NodeId>,
}

impl TaskNode {
    /// An action node with the action's expected outcome and no rules.
    pub fn action(id: NodeId, ctx: TaskContext, action: ActionScript, eps: f64, eps_max: f64) -> Self {
        TaskNode {
            id,
            role: NodeRole::Action { step: id.index },
            task_context: ctx,
            expected_outcome: expected_outcome(&action),
            action: Some(action),
            local_threshold: eps,
            max_threshold: eps_max,
            local_rules: Vec::new(),
            successors: Vec::new(),
        }
    }

    fn marker(id: NodeId, role: NodeRole, label: &str, t: &ThresholdConfig) -> Self {
        TaskNode {
            id,
            role,
            task_context: TaskContext { label: label.to_string(), ..TaskContext::default() },
            action: None,
            expected_outcome: BTreeSet::new(),
            local_threshold: t.local,
            max_threshold: t.max,
            local_rules: Vec::new(),
            successors: Vec::new(),
        }
    }

    /// Plan step this node executes (for action and alternative nodes).
    pub fn step(&self) -> Option<usize> {
        match self.role {
            NodeRole::Action { step } | NodeRole::Alternative { step } => Some(step as usize),
            _ => None,
        }
    }

    pub fn is_executable(&self) -> bool {
        self.action.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepThresholds {
    pub local: f64,
    pub max: f64,
}

/// Per-node error thresholds; steps without an override use the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    #[serde(default = "default_local")]
    pub local: f64,
    #[serde(default = "default_max")]
    pub max: f64,
    #[serde(default)]
    pub per_step: BTreeMap<usize, StepThresholds>,
}

fn default_local() -> f64 {
    0.25
}

fn default_max() -> f64 {
    0.75
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig { local: default_local(), max: default_max(), per_step: BTreeMap::new() }
    }
}

/// Smallest scale factor applied by [`ThresholdConfig::scaled`].
pub const MIN_THRESHOLD_SCALE: f64 = 1e-3;

impl ThresholdConfig {
    pub fn for_step(&self, step: usize) -> (f64, f64) {
        match self.per_step.get(&step) {
            Some(s) => (s.local, s.max),
            None => (self.local, self.max),
        }
    }

    /// Multiplies every threshold by `scale` (at least
    /// [`MIN_THRESHOLD_SCALE`]), clamping to `[0, 1]`.
    pub fn scaled(&self, scale: f64) -> ThresholdConfig {
        let s = if scale.is_nan() { 1.0 } else { scale.max(MIN_THRESHOLD_SCALE) };
        let f = |x: f64| crate::math::clamp01(x * s);
        ThresholdConfig {
            local: f(self.local),
            max: f(self.max),
            per_step: self
                .per_step
                .iter()
                .map(|(k, v)| (*k, StepThresholds { local: f(v.local), max: f(v.max) }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("plan is empty")]
    EmptyPlan,
    #[error("alternative attached to step {0}, which is outside the plan")]
    DanglingAlternative(usize),
    #[error("thresholds for step {0} are not ordered 0 <= local <= max <= 1")]
    ThresholdOrderViolation(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub nodes: BTreeMap<NodeId, TaskNode>,
    pub edges: BTreeSet<TaskEdge>,
    pub root: NodeId,
    pub terminal: BTreeSet<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replan: Option<NodeId>,
}

fn ordered_thresholds(local: f64, max: f64) -> bool {
    (0.0..=1.0).contains(&local) && (0.0..=1.0).contains(&max) && local <= max
}

/// Compiles a plan and its per-step alternatives into a graph whose node ids
/// use `generation`.
pub fn build_graph(
    plan: &[ActionScript],
    options: &BTreeMap<usize, Vec<ActionScript>>,
    thresholds: &ThresholdConfig,
    generation: u32,
) -> Result<TaskGraph, BuildError> {
    if plan.is_empty() {
        return Err(BuildError::EmptyPlan);
    }
    if let Some((&k, _)) = options.iter().find(|(k, alts)| **k >= plan.len() && !alts.is_empty()) {
        return Err(BuildError::DanglingAlternative(k));
    }
    for k in 0..plan.len() {
        let (l, m) = thresholds.for_step(k);
        if !ordered_thresholds(l, m) {
            return Err(BuildError::ThresholdOrderViolation(k));
        }
    }

    let id = |i: usize| NodeId::new(generation, i as u32);
    let mut nodes = BTreeMap::new();
    let mut edges = BTreeSet::new();
    let mut next = 0usize;
    let mut executable =
        |nodes: &mut BTreeMap<NodeId, TaskNode>, action: &ActionScript, role: NodeRole, step: usize| {
            let (l, m) = thresholds.for_step(step);
            let nid = id(next);
            next += 1;
            let mut n = TaskNode::action(nid, TaskContext::for_action(action), action.clone(), l, m);
            n.role = role;
            n.local_rules = rules_for(action);
            nodes.insert(nid, n);
            nid
        };

    let chain: Vec<NodeId> = plan
        .iter()
        .enumerate()
        .map(|(k, a)| executable(&mut nodes, a, NodeRole::Action { step: k as u32 }, k))
        .collect();
    let mut alternatives: Vec<(usize, NodeId)> = Vec::new();
    for (&k, alts) in options {
        for a in alts {
            alternatives.push((k, executable(&mut nodes, a, NodeRole::Alternative { step: k as u32 }, k)));
        }
    }
    let terminal = id(next);
    let sentinel = id(next + 1);
    nodes.insert(terminal, TaskNode::marker(terminal, NodeRole::Terminal, "terminal", thresholds));
    nodes.insert(sentinel, TaskNode::marker(sentinel, NodeRole::Replan, "replan", thresholds));

    let after = |k: usize| chain.get(k + 1).copied().unwrap_or(terminal);
    for (k, &n) in chain.iter().enumerate() {
        edges.insert(TaskEdge::new(n, EdgeKind::Main, after(k)));
    }
    edges.insert(TaskEdge::new(sentinel, EdgeKind::Main, terminal));
    for &(k, alt) in &alternatives {
        let from = if k == 0 { chain[0] } else { chain[k - 1] };
        edges.insert(TaskEdge::new(from, EdgeKind::Opt, alt));
        edges.insert(TaskEdge::new(alt, EdgeKind::Main, after(k)));
        edges.insert(TaskEdge::new(alt, EdgeKind::Opt, after(k)));
    }
    for n in chain.iter().chain(alternatives.iter().map(|(_, a)| a)) {
        edges.insert(TaskEdge::new(*n, EdgeKind::Corr, *n));
        edges.insert(TaskEdge::new(*n, EdgeKind::Fb, sentinel));
    }

    let mut g = TaskGraph { nodes, edges, root: chain[0], terminal: [terminal].into(), replan: Some(sentinel) };
    g.refresh_successors();
    Ok(g)
}

impl TaskGraph {
    /// Recomputes each node's successor list from the edge set.
    pub fn refresh_successors(&mut self) {
        for n in self.nodes.values_mut() {
            n.successors.clear();
        }
        for e in &self.edges {
            if let Some(n) = self.nodes.get_mut(&e.src) {
                if !n.successors.contains(&e.dst) {
                    n.successors.push(e.dst);
                }
            }
        }
        for n in self.nodes.values_mut() {
            n.successors.sort();
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&TaskNode> {
        self.nodes.get(&id)
    }

    pub fn is_terminal(&self, id: NodeId) -> bool {
        self.terminal.contains(&id)
    }

    /// The terminal node reached at the end of the main chain.
    pub fn exit(&self) -> NodeId {
        self.terminal.iter().next().copied().unwrap_or(self.root)
    }

    pub fn generation(&self) -> u32 {
        self.root.generation
    }

    /// Outgoing edges of `node` ordered by kind then destination.
    pub fn outgoing(&self, node: NodeId, kind: Option<EdgeKind>) -> Result<Vec<TaskEdge>, GraphError> {
        if !self.nodes.contains_key(&node) {
            return Err(GraphError::UnknownNode(node));
        }
        let mut out: Vec<TaskEdge> =
            self.edges.iter().filter(|e| e.src == node && kind.is_none_or(|k| e.kind == k)).copied().collect();
        out.sort_by_key(|e| (e.kind, e.dst));
        Ok(out)
    }

    /// Destination of `node`'s first main edge.
    pub fn next_on_path(&self, node: NodeId) -> Option<NodeId> {
        self.nodes.get(&node)?;
        self.edges.iter().find(|e| e.src == node && e.kind == EdgeKind::Main).map(|e| e.dst)
    }

    /// Nodes visited from `start` (inclusive) to the terminal (exclusive).
    pub fn continuation(&self, start: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = Some(start);
        while let Some(n) = cur {
            if self.is_terminal(n) || out.contains(&n) || !self.nodes.contains_key(&n) {
                break;
            }
            out.push(n);
            cur = self.next_on_path(n);
        }
        out
    }

    /// Action nodes along the main chain from the root.
    pub fn main_chain(&self) -> Vec<NodeId> {
        self.continuation(self.root)
    }

    /// Opt edges leading into alternatives for plan step `step`.
    pub fn alternatives_for(&self, step: usize) -> Vec<TaskEdge> {
        self.edges
            .iter()
            .filter(|e| {
                e.kind == EdgeKind::Opt
                    && self.nodes.get(&e.dst).is_some_and(|n| n.role == NodeRole::Alternative { step: step as u32 })
            })
            .copied()
            .collect()
    }

    pub fn summary(&self) -> String {
        let count = |k: EdgeKind| self.edges.iter().filter(|e| e.kind == k).count();
        format!(
            "{} nodes, {} main, {} opt, {} corr, {} fb",
            self.nodes.len(),
            count(EdgeKind::Main),
            count(EdgeKind::Opt),
            count(EdgeKind::Corr),
            count(EdgeKind::Fb)
        )
    }
}

/// One broken graph invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    MissingRoot { root: NodeId },
    NoTerminal,
    DanglingEdge { edge: String },
    DanglingSuccessor { node: NodeId, successor: NodeId },
    ThresholdOrderViolation { node: NodeId },
    MissingMainEdge { node: NodeId },
    MissingRejoin { node: NodeId },
    MainSelfLoop { node: NodeId },
    MainCycle { node: NodeId },
    TerminalUnreachable,
    EmptyExpectedOutcome { node: NodeId },
    OptionChain { edge: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every broken invariant; an empty report means the graph is well formed.
pub fn validate(g: &TaskGraph) -> ValidationReport {
    let mut v = Vec::new();
    if !g.nodes.contains_key(&g.root) {
        v.push(Violation::MissingRoot { root: g.root });
    }
    if g.terminal.is_empty() {
        v.push(Violation::NoTerminal);
    }
    for e in &g.edges {
        if !g.nodes.contains_key(&e.src) || !g.nodes.contains_key(&e.dst) {
            v.push(Violation::DanglingEdge { edge: e.to_string() });
        }
        if e.kind == EdgeKind::Main && e.src == e.dst {
            v.push(Violation::MainSelfLoop { node: e.src });
        }
        let is_alt = |n: NodeId| g.nodes.get(&n).is_some_and(|n| matches!(n.role, NodeRole::Alternative { .. }));
        if e.kind == EdgeKind::Opt && is_alt(e.src) && is_alt(e.dst) {
            v.push(Violation::OptionChain { edge: e.to_string() });
        }
    }
    for (id, n) in &g.nodes {
        if !ordered_thresholds(n.local_threshold, n.max_threshold) {
            v.push(Violation::ThresholdOrderViolation { node: *id });
        }
        for s in &n.successors {
            if !g.nodes.contains_key(s) {
                v.push(Violation::DanglingSuccessor { node: *id, successor: *s });
            }
        }
        if n.is_executable() && n.expected_outcome.is_empty() {
            v.push(Violation::EmptyExpectedOutcome { node: *id });
        }
        if g.is_terminal(*id) {
            continue;
        }
        let has = |k: EdgeKind| g.edges.iter().any(|e| e.src == *id && e.kind == k && e.dst != *id);
        if !has(EdgeKind::Main) {
            v.push(Violation::MissingMainEdge { node: *id });
        }
        if matches!(n.role, NodeRole::Alternative { .. }) && !has(EdgeKind::Opt) {
            v.push(Violation::MissingRejoin { node: *id });
        }
    }

    // Main-edge reachability and acyclicity from the root.
    if g.nodes.contains_key(&g.root) {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut mark: BTreeMap<NodeId, Mark> = g.nodes.keys().map(|k| (*k, Mark::New)).collect();
        let mut reaches = false;
        let mut stack: Vec<(NodeId, bool)> = alloc::vec![(g.root, false)];
        while let Some((n, leaving)) = stack.pop() {
            if leaving {
                mark.insert(n, Mark::Done);
                continue;
            }
            match mark.get(&n) {
                Some(Mark::Active) => {
                    v.push(Violation::MainCycle { node: n });
                    continue;
                }
                Some(Mark::Done) | None => continue,
                Some(Mark::New) => {}
            }
            if g.is_terminal(n) {
                reaches = true;
            }
            mark.insert(n, Mark::Active);
            stack.push((n, true));
            for e in g.edges.iter().filter(|e| e.src == n && e.kind == EdgeKind::Main && e.dst != n) {
                match mark.get(&e.dst) {
                    Some(Mark::Active) => v.push(Violation::MainCycle { node: e.dst }),
                    Some(Mark::New) => stack.push((e.dst, false)),
                    _ => {}
                }
            }
        }
        if !reaches {
            v.push(Violation::TerminalUnreachable);
        }
    }
    ValidationReport { violations: v }
}
