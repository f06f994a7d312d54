//! Error-driven traversal: executes a task graph node by node, routes each
//! step by its error value and dispatches failures to the correction levels.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ccgr::{RetrievalQuery, RetrievalWeights, TrajectoryGraph};
use crate::correction::{
    apply_l1, apply_l3, escalate_l4, Escalation, FailureRecord, Operator, OperatorDecision, ReplanRequest, SubStepper,
};
use crate::env::{self, check_goal, expected_outcome, rules, ActionScript, Predicate, StepOutcome, WorldState};
use crate::error_engine::{classify, compute_error, CorrectionLevel, ErrorKind, ErrorValue, LevelContext};
use crate::graph::{validate, EdgeKind, NodeId, TaskEdge, TaskGraph, ThresholdConfig};
use crate::math::mix_seed;
use crate::planner::{Planner, ScorerError, SemanticScorer};
use crate::policy::{
    admissible_edges, open_alternatives, route_by_threshold, score_components, select_soft, BeliefContext, GuardState,
    PolicyCoefficients, Regime,
};
use crate::scenario::Scenario;

pub const DEFAULT_STEP_LIMIT: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub step_limit: u32,
    /// Local corrections allowed per node.
    pub l1_budget: u32,
    /// Replans allowed per episode.
    pub replan_budget: u32,
    /// Thresholds for graphs produced by replanning.
    pub thresholds: ThresholdConfig,
    pub coeffs: PolicyCoefficients,
    /// Retrieved windows passed to the scorer on each failure.
    pub retrieval_k: usize,
    pub retrieval_weights: RetrievalWeights,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            step_limit: DEFAULT_STEP_LIMIT,
            l1_budget: 2,
            replan_budget: 2,
            thresholds: ThresholdConfig::default(),
            coeffs: PolicyCoefficients::default(),
            retrieval_k: 3,
            retrieval_weights: RetrievalWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Execution of a graph node.
    Primary,
    /// A sub-step issued by a local correction rule.
    Correction,
}

/// What the environment returned for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSnapshot {
    pub succeeded: bool,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<ErrorKind>,
    /// Predicates that held before the action.
    pub before: BTreeSet<Predicate>,
    /// Predicates that hold afterwards (true world).
    pub after: BTreeSet<Predicate>,
    /// The action's preconditions held in the state before it.
    pub preconditions_held: bool,
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Strictly increasing record index.
    pub step: u32,
    pub phase: Phase,
    pub node: NodeId,
    pub action: ActionScript,
    pub edge_kind: EdgeKind,
    pub error_value: f64,
    pub error_type: Option<ErrorKind>,
    pub level: Option<CorrectionLevel>,
    pub outcome: OutcomeSnapshot,
    /// For correction sub-steps, the primary record being corrected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrects: Option<u32>,
}

/// One routing decision: the error regime it was made in and the edge kind chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub node: NodeId,
    pub error_value: f64,
    pub local_threshold: f64,
    pub max_threshold: f64,
    pub regime: Regime,
    pub chosen: EdgeKind,
    pub level: Option<CorrectionLevel>,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub generation: u32,
    pub banned: Vec<String>,
    pub plan: Vec<String>,
}

/// Append-only execution history of one episode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeHistory {
    pub records: Vec<StepRecord>,
    pub decisions: Vec<Decision>,
    pub failures: Vec<FailureRecord>,
    pub replans: Vec<ReplanEvent>,
    /// Every L4 hand-off, in order.
    pub escalations: Vec<Escalation>,
    /// Local corrections used per node.
    pub l1_uses: BTreeMap<NodeId, u32>,
    /// Highest correction level used per node.
    pub levels: BTreeMap<NodeId, CorrectionLevel>,
    /// The episode advanced past a failure without repairing it.
    pub unrecovered: bool,
}

impl EpisodeHistory {
    pub fn has_unrecovered_failure(&self) -> bool {
        self.unrecovered
    }

    pub fn primary_steps(&self) -> usize {
        self.records.iter().filter(|r| r.phase == Phase::Primary).count()
    }

    pub fn correction_substeps(&self) -> usize {
        self.records.iter().filter(|r| r.phase == Phase::Correction).count()
    }

    /// Option switches taken to recover from failures.
    pub fn option_switches(&self) -> usize {
        self.decisions.iter().filter(|d| d.level == Some(CorrectionLevel::L2)).count()
    }

    /// L1 sub-steps plus L2 switches plus L3 events.
    pub fn recovery_steps(&self) -> usize {
        self.correction_substeps() + self.option_switches() + self.replans.len()
    }

    /// Actions executed as primary steps along main edges, in order.
    pub fn main_actions(&self) -> Vec<&ActionScript> {
        self.records
            .iter()
            .filter(|r| r.phase == Phase::Primary && r.edge_kind == EdgeKind::Main)
            .map(|r| &r.action)
            .collect()
    }

    fn push(&mut self, mut r: StepRecord) -> u32 {
        let idx = self.records.len() as u32;
        r.step = idx;
        self.records.push(r);
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    Failed,
    Escalated,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scenario: String,
    pub seed: u64,
    pub status: EpisodeStatus,
    /// Primary node executions.
    pub steps: u32,
    pub goal_ratio: f64,
    pub goals_total: usize,
    pub goals_satisfied: usize,
    pub initial_world: WorldState,
    pub final_world: WorldState,
    pub history: EpisodeHistory,
}

impl EpisodeResult {
    pub fn had_failure(&self) -> bool {
        !self.history.failures.is_empty()
    }

    pub fn replanned(&self) -> bool {
        !self.history.replans.is_empty()
    }

    /// Some failure was repaired by a local correction or an option switch.
    pub fn corrected(&self) -> bool {
        self.history.correction_substeps() > 0 || self.history.option_switches() > 0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EpisodeError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("config: {0}")]
    Config(String),
}

enum Next {
    Goto(NodeId),
    Stop(EpisodeStatus),
}

struct Run<'a> {
    g: TaskGraph,
    world: WorldState,
    goals: Vec<Predicate>,
    cfg: &'a EpisodeConfig,
    planner: &'a dyn Planner,
    scorer: &'a dyn SemanticScorer,
    memory: Option<&'a TrajectoryGraph>,
    operator: &'a mut dyn Operator,
    belief: BeliefContext,
    hist: EpisodeHistory,
    sub: SubStepper,
    seed: u64,
    decisions: u64,
}

fn snapshot(before: &WorldState, action: &ActionScript, out: &StepOutcome) -> OutcomeSnapshot {
    OutcomeSnapshot {
        succeeded: out.succeeded,
        message: out.env_message.clone(),
        injected: out.injected,
        before: before.all_predicates(),
        after: out.world.all_predicates(),
        preconditions_held: rules::check(before, action).is_ok(),
    }
}

impl Run<'_> {
    fn goals_met(&self) -> bool {
        !self.goals.is_empty() && check_goal(&self.world, &self.goals).ratio >= 1.0
    }

    fn next_seed(&mut self) -> u64 {
        self.decisions += 1;
        mix_seed(self.seed, self.decisions)
    }

    fn choose(&mut self, candidates: &[TaskEdge], observed: &WorldState) -> Result<TaskEdge, EpisodeError> {
        let scores = candidates
            .iter()
            .map(|e| score_components(&self.g, e, &self.belief, observed, self.scorer, &self.cfg.coeffs))
            .collect::<Result<Vec<_>, _>>()?;
        let seed = self.next_seed();
        let sel = select_soft(&scores, &self.cfg.coeffs, seed).map_err(|e| EpisodeError::Config(e.to_string()))?;
        Ok(sel.chosen)
    }

    fn retrieve(&mut self) {
        let Some(mem) = self.memory else { return };
        let query = RetrievalQuery {
            goal_tokens: self.goals.iter().flat_map(|p| p.tokens()).collect(),
            predicates: self.world.all_predicates().iter().map(|p| p.to_string()).collect(),
            recent_actions: self
                .hist
                .records
                .iter()
                .rev()
                .take(5)
                .rev()
                .map(|r| r.action.verb.as_str().to_string())
                .collect(),
        };
        self.belief.retrieved_recoveries = mem
            .retrieve(&query, self.cfg.retrieval_k, self.cfg.retrieval_weights)
            .into_iter()
            .flat_map(|r| r.provenance.recovery_patterns)
            .collect();
    }

    fn record_decision(
        &mut self,
        node: NodeId,
        e: ErrorValue,
        chosen: EdgeKind,
        level: Option<CorrectionLevel>,
        n: usize,
    ) {
        let (local, max) = self.g.node(node).map(|n| (n.local_threshold, n.max_threshold)).unwrap_or((0.0, 0.0));
        self.hist.decisions.push(Decision {
            node,
            error_value: e.value(),
            local_threshold: local,
            max_threshold: max,
            regime: Regime::of(e.value(), local, max),
            chosen,
            level,
            candidates: n,
        });
    }

    /// Routes the node after an execution until it either hands control to
    /// another node or stops the episode.
    fn decide(
        &mut self,
        node_id: NodeId,
        mut outcome: StepOutcome,
        mut e: ErrorValue,
        record: u32,
    ) -> Result<Next, EpisodeError> {
        let mut first = true;
        loop {
            let node = self.g.node(node_id).cloned().ok_or_else(|| EpisodeError::InvalidGraph(format!("{node_id}")))?;
            let route = route_by_threshold(e, &node);
            self.belief.current = node_id;
            if route == EdgeKind::Main {
                self.belief.consecutive_failures.remove(&node_id);
                if !outcome.succeeded {
                    self.hist.unrecovered = true;
                }
                self.belief.guard.floor = None;
                self.belief.guard.l1_available = false;
                let cands = admissible_edges(&self.g, &self.belief, e);
                let edge = if cands.is_empty() {
                    let dst = self.g.next_on_path(node_id).unwrap_or(self.g.exit());
                    TaskEdge::new(node_id, EdgeKind::Main, dst)
                } else {
                    self.choose(&cands, &outcome.observed)?
                };
                self.record_decision(node_id, e, edge.kind, None, cands.len());
                if first {
                    self.hist.records[record as usize].edge_kind = edge.kind;
                }
                if edge.kind == EdgeKind::Opt {
                    self.belief.guard.attempted_options.insert(edge.dst);
                }
                return Ok(Next::Goto(edge.dst));
            }

            *self.belief.consecutive_failures.entry(node_id).or_default() += 1;
            let cls = match classify(Some(&outcome), None, &self.hist) {
                Ok(c) => c,
                // A mismatch without a failed action reads as a generic execution error.
                Err(_) => crate::error_engine::ErrorClass::of(ErrorKind::ActionExecution),
            };
            self.belief.last_error = Some(cls.clone());
            let action =
                node.action.clone().ok_or_else(|| EpisodeError::InvalidGraph(format!("{node_id} has no action")))?;
            self.hist.failures.push(FailureRecord {
                node: node_id,
                action,
                kind: cls.kind,
                step: self.hist.primary_steps() as u32,
                room: self.world.agent.room.clone(),
                levels: Vec::new(),
                recovered: false,
            });
            self.retrieve();
            let l1_used = self.hist.l1_uses.get(&node_id).copied().unwrap_or(0);
            let replans_left = self.cfg.replan_budget.saturating_sub(self.hist.replans.len() as u32);
            let ctx = LevelContext {
                l1_remaining: self.cfg.l1_budget.saturating_sub(l1_used),
                options_remaining: open_alternatives(&self.g, node_id, &self.belief).len(),
                replans_remaining: replans_left,
                previous: self.hist.levels.get(&node_id).copied(),
            };
            let mut floor = crate::error_engine::level_for(&cls, e, &node, &ctx);
            if route == EdgeKind::Fb && floor < CorrectionLevel::L3 {
                floor = if replans_left > 0 { CorrectionLevel::L3 } else { CorrectionLevel::L4 };
            }
            let l1_available = ctx.l1_remaining > 0 && node.local_rules.iter().any(|r| r.triggers(&cls, e));
            self.belief.guard.floor = Some(floor);
            self.belief.guard.l1_available = l1_available;

            let (kind, n) = if floor == CorrectionLevel::L4 {
                (EdgeKind::Fb, 0)
            } else {
                let cands = admissible_edges(&self.g, &self.belief, e);
                let kind = if cands.is_empty() {
                    EdgeKind::Fb
                } else {
                    let edge = self.choose(&cands, &outcome.observed)?;
                    edge.kind
                };
                (kind, cands.len())
            };
            let mut level = match kind {
                EdgeKind::Corr => CorrectionLevel::L1,
                EdgeKind::Opt => CorrectionLevel::L2,
                _ if floor == CorrectionLevel::L4 || replans_left == 0 => CorrectionLevel::L4,
                _ => CorrectionLevel::L3,
            };
            level = level.max(floor);
            self.hist.levels.insert(node_id, level);
            if let Some(f) = self.hist.failures.last_mut() {
                f.levels.push(level);
            }
            self.record_decision(node_id, e, kind, Some(level), n);
            if first {
                let r = &mut self.hist.records[record as usize];
                r.edge_kind = kind;
                r.level = Some(level);
                r.error_type = Some(cls.kind);
            }
            first = false;

            match level {
                CorrectionLevel::L1 => {
                    let result = apply_l1(&node, &cls, e, &self.world, l1_used, &mut self.sub);
                    *self.hist.l1_uses.entry(node_id).or_default() += 1;
                    let Ok(c) = result else { continue };
                    let mut w = self.world.clone();
                    for (script, out) in c.scripts.iter().zip(&c.outcomes) {
                        let se = compute_error(&out.observed, &expected_outcome(script));
                        let snap = snapshot(&w, script, out);
                        w = out.world.clone();
                        self.hist.push(StepRecord {
                            step: 0,
                            phase: Phase::Correction,
                            node: node_id,
                            action: script.clone(),
                            edge_kind: EdgeKind::Corr,
                            error_value: se.value(),
                            error_type: out.injected,
                            level: Some(CorrectionLevel::L1),
                            outcome: snap,
                            corrects: Some(record),
                        });
                    }
                    self.world = c.world.clone();
                    if let Some(last) = c.outcomes.last() {
                        outcome = last.clone();
                    }
                    e = c.error;
                    if c.success {
                        if let Some(f) = self.hist.failures.last_mut() {
                            f.recovered = true;
                        }
                        self.belief.consecutive_failures.remove(&node_id);
                        if self.goals_met() {
                            return Ok(Next::Stop(EpisodeStatus::Success));
                        }
                    }
                }
                CorrectionLevel::L2 => {
                    let alts = open_alternatives(&self.g, node_id, &self.belief);
                    let edge = if alts.len() == 1 { alts[0] } else { self.choose(&alts, &outcome.observed)? };
                    self.belief.guard.attempted_options.insert(edge.dst);
                    return Ok(Next::Goto(edge.dst));
                }
                CorrectionLevel::L3 => {
                    let request =
                        ReplanRequest::new(self.goals.clone(), self.world.clone(), self.hist.failures.clone());
                    let generation = self.g.generation() + 1;
                    match apply_l3(&request, self.planner, &self.cfg.thresholds, generation) {
                        Ok(g) => {
                            self.hist.replans.push(ReplanEvent {
                                generation,
                                banned: request.banned.iter().map(|b| b.to_string()).collect(),
                                plan: g
                                    .main_chain()
                                    .iter()
                                    .filter_map(|n| g.node(*n).and_then(|n| n.action.as_ref()).map(|a| a.canonical()))
                                    .collect(),
                            });
                            self.g = g;
                            self.belief.guard = GuardState::default();
                            self.belief.consecutive_failures.clear();
                            self.hist.unrecovered = false;
                            return Ok(Next::Goto(self.g.root));
                        }
                        Err(_) => {
                            self.hist.levels.insert(node_id, CorrectionLevel::L4);
                            if let Some(f) = self.hist.failures.last_mut() {
                                f.levels.push(CorrectionLevel::L4);
                            }
                            return Ok(self.escalate(node_id));
                        }
                    }
                }
                CorrectionLevel::L4 => return Ok(self.escalate(node_id)),
            }
        }
    }

    fn operator_reset(&mut self) {
        self.world.agent.halted = false;
        self.world.agent.pose_ok = true;
    }

    fn escalate(&mut self, node: NodeId) -> Next {
        let esc = escalate_l4(self.hist.records.len() as u32, &self.hist.failures, self.operator);
        let decision = esc.decision;
        self.hist.escalations.push(esc);
        match decision {
            OperatorDecision::Abort => Next::Stop(EpisodeStatus::Escalated),
            // Going on means the operator has reset the stop and re-homed the agent.
            OperatorDecision::Retry => {
                self.operator_reset();
                Next::Goto(node)
            }
            OperatorDecision::Skip => {
                self.operator_reset();
                self.hist.unrecovered = true;
                Next::Goto(self.g.next_on_path(node).unwrap_or(self.g.exit()))
            }
        }
    }

    fn run(&mut self, faults: &env::FaultSchedule) -> Result<EpisodeStatus, EpisodeError> {
        let mut current = self.g.root;
        let mut steps: u32 = 0;
        loop {
            if self.goals_met() {
                return Ok(EpisodeStatus::Success);
            }
            if self.g.is_terminal(current) {
                let ok = check_goal(&self.world, &self.goals).ratio >= 1.0;
                return Ok(if ok { EpisodeStatus::Success } else { EpisodeStatus::Failed });
            }
            if steps >= self.cfg.step_limit {
                return Ok(EpisodeStatus::StepLimit);
            }
            let node = self.g.node(current).cloned().ok_or_else(|| EpisodeError::InvalidGraph(format!("{current}")))?;
            let Some(action) = node.action.clone() else {
                current = self.g.next_on_path(current).unwrap_or(self.g.exit());
                continue;
            };
            let out = env::step(&self.world, &action, faults, steps, self.seed);
            steps += 1;
            self.belief.steps_elapsed = steps;
            let e = compute_error(&out.observed, &node.expected_outcome);
            let snap = snapshot(&self.world, &action, &out);
            self.world = out.world.clone();
            let idx = self.hist.push(StepRecord {
                step: 0,
                phase: Phase::Primary,
                node: current,
                action,
                edge_kind: route_by_threshold(e, &node),
                error_value: e.value(),
                error_type: out.injected,
                level: None,
                outcome: snap,
                corrects: None,
            });
            self.belief.remaining_goals = check_goal(&self.world, &self.goals).unsatisfied.len();
            if self.goals_met() && route_by_threshold(e, &node) == EdgeKind::Main {
                return Ok(EpisodeStatus::Success);
            }
            match self.decide(current, out, e, idx)? {
                Next::Goto(n) => current = n,
                Next::Stop(s) => return Ok(s),
            }
        }
    }
}

/// Executes one episode of `graph` in the scenario's world.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    graph: TaskGraph,
    scenario: &Scenario,
    cfg: &EpisodeConfig,
    planner: &dyn Planner,
    scorer: &dyn SemanticScorer,
    memory: Option<&TrajectoryGraph>,
    operator: &mut dyn Operator,
) -> Result<EpisodeResult, EpisodeError> {
    run_episode_seeded(graph, scenario, scenario.seed, cfg, planner, scorer, memory, operator)
}

/// [`run_episode`] with an explicit seed in place of the scenario's own.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_seeded(
    graph: TaskGraph,
    scenario: &Scenario,
    seed: u64,
    cfg: &EpisodeConfig,
    planner: &dyn Planner,
    scorer: &dyn SemanticScorer,
    memory: Option<&TrajectoryGraph>,
    operator: &mut dyn Operator,
) -> Result<EpisodeResult, EpisodeError> {
    let report = validate(&graph);
    if !report.is_ok() {
        return Err(EpisodeError::InvalidGraph(format!("{:?}", report.violations)));
    }
    if !cfg.coeffs.is_valid() {
        return Err(EpisodeError::Config("invalid policy coefficients".into()));
    }
    let goals = scenario.goal_predicates();
    let mut run = Run {
        belief: BeliefContext::new(graph.root, goals.clone()),
        g: graph,
        world: scenario.world.clone(),
        goals,
        cfg,
        planner,
        scorer,
        memory,
        operator,
        hist: EpisodeHistory::default(),
        sub: SubStepper::new(&scenario.faults, mix_seed(seed, 0x5b)),
        seed,
        decisions: 0,
    };
    let mut status = run.run(&scenario.faults)?;
    let report = check_goal(&run.world, &run.goals);
    if status == EpisodeStatus::Success && report.ratio < 1.0 {
        status = EpisodeStatus::Failed;
    }
    let steps = run.hist.primary_steps() as u32;
    Ok(EpisodeResult {
        scenario: scenario.name.clone(),
        seed,
        status,
        steps,
        goal_ratio: report.ratio,
        goals_total: run.goals.len(),
        goals_satisfied: report.satisfied.len(),
        initial_world: scenario.world.clone(),
        final_world: run.world,
        history: run.hist,
    })
}

/// Runs every scenario once per seed, ordered by (scenario, repetition).
///
/// Each episode starts from the scenario's initial graph and uses the seed
/// mixed with the scenario's own seed. L4 escalations abort.
pub fn run_batch(
    scenarios: &[Scenario],
    cfg: &EpisodeConfig,
    repetitions: usize,
    seeds: &[u64],
    planner: &dyn Planner,
    scorer: &dyn SemanticScorer,
    memory: Option<&TrajectoryGraph>,
) -> Result<Vec<EpisodeResult>, EpisodeError> {
    if seeds.len() != repetitions {
        return Err(EpisodeError::Config(format!("{} seeds for {repetitions} repetitions", seeds.len())));
    }
    let mut out = Vec::with_capacity(scenarios.len() * repetitions);
    for s in scenarios {
        for seed in seeds {
            out.push(run_one(s, cfg, *seed, planner, scorer, memory)?);
        }
    }
    Ok(out)
}

/// One batch cell: builds the scenario's graph and runs it with an aborting operator.
pub fn run_one(
    scenario: &Scenario,
    cfg: &EpisodeConfig,
    seed: u64,
    planner: &dyn Planner,
    scorer: &dyn SemanticScorer,
    memory: Option<&TrajectoryGraph>,
) -> Result<EpisodeResult, EpisodeError> {
    let g = scenario.initial_graph(planner, &cfg.thresholds)?;
    let mut op = crate::correction::AutoAbort;
    run_episode_seeded(g, scenario, mix_seed(scenario.seed, seed), cfg, planner, scorer, memory, &mut op)
}
