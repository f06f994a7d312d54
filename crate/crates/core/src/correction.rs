//! The four correction levels: local rules (L1), switching to an
//! alternative (L2), replanning under failure constraints (L3) and operator
//! escalation (L4).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::env::{self, ActionScript, FaultSchedule, Predicate, StepOutcome, Verb, WorldState};
use crate::error_engine::{compute_error, CorrectionLevel, ErrorClass, ErrorKind, ErrorValue};
use crate::graph::{build_graph, validate, NodeId, TaskEdge, TaskGraph, TaskNode, ThresholdConfig};
use crate::planner::{PlanOutput, Planner, PlannerError, SemanticScorer};
use crate::policy::{
    open_alternatives, score_components, select_soft, BeliefContext, PolicyCoefficients, TransitionScore,
};

/// One adjustment step of a local rule, resolved against the failing
/// action and the current world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleStep {
    /// Re-issue the node's action.
    Retry,
    /// `[lookat]` the action's target.
    LookAtTarget,
    /// `[walk]` to the room containing the action's target.
    WalkToTarget,
    /// `[close]` the action's target.
    CloseTarget,
    /// `[open]` the action's second argument.
    OpenDestination,
    Script(ActionScript),
}

/// A bounded local adjustment attached to a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalCorrectionRule {
    pub name: String,
    pub triggers: Vec<ErrorKind>,
    /// The rule only fires at or below this error.
    #[serde(default = "one")]
    pub max_error: f64,
    pub steps: Vec<RuleStep>,
    #[serde(default = "two")]
    pub max_applications: u32,
}

fn one() -> f64 {
    1.0
}

fn two() -> u32 {
    2
}

impl LocalCorrectionRule {
    /// A rule that runs fixed scripts.
    pub fn new(name: &str, triggers: Vec<ErrorKind>, scripts: Vec<ActionScript>) -> Self {
        Self::with_steps(name, triggers, scripts.into_iter().map(RuleStep::Script).collect())
    }

    pub fn with_steps(name: &str, triggers: Vec<ErrorKind>, steps: Vec<RuleStep>) -> Self {
        LocalCorrectionRule { name: name.to_string(), triggers, max_error: 1.0, steps, max_applications: 2 }
    }

    pub fn triggers(&self, cls: &ErrorClass, error: ErrorValue) -> bool {
        self.triggers.contains(&cls.kind) && error.value() <= self.max_error
    }

    /// Concrete scripts for a failure of `action` in `world`.
    pub fn resolve(&self, action: &ActionScript, world: &WorldState) -> Vec<ActionScript> {
        let target = action.target().unwrap_or_default();
        self.steps
            .iter()
            .map(|s| match s {
                RuleStep::Retry => {
                    ActionScript::new(action.verb, &action.args.iter().map(|a| a.name.as_str()).collect::<Vec<_>>())
                }
                RuleStep::LookAtTarget => ActionScript::new(Verb::LookAt, &[target]),
                RuleStep::WalkToTarget => {
                    let room = world.room_of(target).unwrap_or(world.agent.room.as_str());
                    ActionScript::new(Verb::Walk, &[room])
                }
                RuleStep::CloseTarget => ActionScript::new(Verb::Close, &[target]),
                RuleStep::OpenDestination => ActionScript::new(Verb::Open, &[action.arg(1).unwrap_or(target)]),
                RuleStep::Script(a) => a.clone(),
            })
            .collect()
    }
}

/// Default local rules for a node executing `action`.
pub fn rules_for(action: &ActionScript) -> Vec<LocalCorrectionRule> {
    use ErrorKind::*;
    use RuleStep::*;
    let has_target = action.target().is_some();
    let rule = |name: &str, kinds: &[ErrorKind], steps: Vec<RuleStep>| {
        LocalCorrectionRule::with_steps(name, kinds.to_vec(), steps)
    };
    let mut out = Vec::new();
    if action.verb == Verb::Open {
        out.push(rule("close-then-open", &[PerceptionMismatch], vec![CloseTarget, Retry]));
    } else if has_target {
        out.push(rule("re-observe", &[PerceptionMismatch], vec![LookAtTarget, Retry]));
    }
    if has_target {
        out.push(rule("re-approach", &[AgentPositioning], vec![WalkToTarget, Retry]));
        out.push(rule("re-read-sensors", &[SensorFailure], vec![LookAtTarget, Retry]));
    } else {
        out.push(rule("retry", &[AgentPositioning, SensorFailure], vec![Retry]));
    }
    out.push(rule("retry", &[Timeout], vec![Retry]));
    out.push(rule("canonical-name", &[ActionNameMismatch], vec![Retry]));
    match action.verb {
        Verb::PutIn => out.push(rule("open-destination", &[ActionExecution], vec![OpenDestination, Retry])),
        _ if has_target => out.push(rule("re-approach", &[ActionExecution], vec![WalkToTarget, Retry])),
        _ => {}
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorrectionError {
    #[error("no local rule matches {0}")]
    NoRuleMatches(ErrorKind),
    #[error("local correction budget exhausted")]
    BudgetExhausted,
    #[error("no untried alternatives remain")]
    OptionsExhausted,
    #[error("planner rejected the request: {0}")]
    PlannerRejected(String),
    #[error("planner emitted banned action {0}")]
    BannedActionEmitted(String),
}

/// Executes correction sub-steps against the simulator with their own step
/// index namespace and no scripted faults.
#[derive(Debug, Clone)]
pub struct SubStepper {
    pub faults: FaultSchedule,
    pub seed: u64,
    pub next_index: u32,
}

/// First step index used for correction sub-steps.
pub const SUBSTEP_BASE: u32 = 1 << 20;

impl SubStepper {
    pub fn new(primary: &FaultSchedule, seed: u64) -> Self {
        SubStepper { faults: primary.unscripted(), seed, next_index: SUBSTEP_BASE }
    }

    pub fn step(&mut self, world: &WorldState, action: &ActionScript) -> StepOutcome {
        let out = env::step(world, action, &self.faults, self.next_index, self.seed);
        self.next_index += 1;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    pub rule: String,
    pub scripts: Vec<ActionScript>,
    pub outcomes: Vec<StepOutcome>,
    pub error: ErrorValue,
    pub success: bool,
    pub world: WorldState,
}

/// Runs the first local rule of `node` that triggers on the failure.
///
/// `applications` is how often this node already used local correction.
/// Succeeds iff the node's error after the adjustment is within its local
/// threshold. Stops at the first failing sub-step.
pub fn apply_l1(
    node: &TaskNode,
    cls: &ErrorClass,
    error: ErrorValue,
    world: &WorldState,
    applications: u32,
    env: &mut SubStepper,
) -> Result<CorrectionOutcome, CorrectionError> {
    let rule =
        node.local_rules.iter().find(|r| r.triggers(cls, error)).ok_or(CorrectionError::NoRuleMatches(cls.kind))?;
    if applications >= rule.max_applications {
        return Err(CorrectionError::BudgetExhausted);
    }
    let action = node.action.as_ref().ok_or(CorrectionError::NoRuleMatches(cls.kind))?;
    let scripts = rule.resolve(action, world);
    let mut w = world.clone();
    let mut observed = world.clone();
    let mut outcomes = Vec::new();
    for s in &scripts {
        let out = env.step(&w, s);
        w = out.world.clone();
        observed = out.observed.clone();
        let ok = out.succeeded;
        outcomes.push(out);
        if !ok {
            break;
        }
    }
    let error = compute_error(&observed, &node.expected_outcome);
    Ok(CorrectionOutcome {
        rule: rule.name.clone(),
        scripts,
        outcomes,
        success: error.value() <= node.local_threshold,
        error,
        world: w,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionChoice {
    pub edge: TaskEdge,
    pub scores: Vec<TransitionScore>,
    pub distribution: Vec<f64>,
}

/// Picks an untried alternative for the plan step of `node` with the
/// softmax policy and marks it attempted.
pub fn apply_l2(
    g: &TaskGraph,
    node: NodeId,
    belief: &mut BeliefContext,
    observed: &WorldState,
    coeffs: &PolicyCoefficients,
    scorer: &dyn SemanticScorer,
    seed: u64,
) -> Result<OptionChoice, CorrectionError> {
    let candidates = open_alternatives(g, node, belief);
    if candidates.is_empty() {
        return Err(CorrectionError::OptionsExhausted);
    }
    let scores = candidates
        .iter()
        .map(|e| score_components(g, e, belief, observed, scorer, coeffs))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CorrectionError::PlannerRejected(e.to_string()))?;
    let sel = select_soft(&scores, coeffs, seed).map_err(|_| CorrectionError::OptionsExhausted)?;
    belief.guard.attempted_options.insert(sel.chosen.dst);
    Ok(OptionChoice { edge: sel.chosen, scores, distribution: sel.distribution })
}

/// An action together with where it ran: the finest context the world exposes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BannedPair {
    pub verb: Verb,
    pub arg: String,
    pub room: String,
}

impl BannedPair {
    pub fn of(action: &ActionScript, room: &str) -> Self {
        BannedPair { verb: action.verb, arg: action.target().unwrap_or_default().to_string(), room: room.to_string() }
    }
}

impl core::fmt::Display for BannedPair {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}({}) in {}", self.verb, self.arg, self.room)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub node: NodeId,
    pub action: ActionScript,
    pub kind: ErrorKind,
    pub step: u32,
    /// Room the agent was in when the action failed.
    pub room: String,
    pub levels: Vec<CorrectionLevel>,
    #[serde(default)]
    pub recovered: bool,
}

/// Kinds whose failing action is dropped from later plans.
pub fn bans_action(kind: ErrorKind) -> bool {
    matches!(kind, ErrorKind::Collision | ErrorKind::Timeout | ErrorKind::ActionExecution)
}

/// Failures of one action in one room needed before it is banned whatever the kind.
pub const REPEAT_BAN_THRESHOLD: usize = 2;

/// Input to the planner when replanning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanRequest {
    pub goals: Vec<Predicate>,
    pub world: WorldState,
    pub banned: BTreeSet<BannedPair>,
    pub failures: Vec<FailureRecord>,
}

impl ReplanRequest {
    /// Builds a request whose bans come only from `failures`: actions that
    /// collided, timed out or could not execute, and any non-navigation
    /// action that failed repeatedly for reasons other than a cascade.
    pub fn new(goals: Vec<Predicate>, world: WorldState, failures: Vec<FailureRecord>) -> Self {
        let mut banned = BTreeSet::new();
        let mut counts: BTreeMap<BannedPair, usize> = BTreeMap::new();
        for f in &failures {
            if f.action.verb.is_navigation() || f.kind == ErrorKind::Cascading {
                continue;
            }
            let pair = BannedPair::of(&f.action, &f.room);
            let n = counts.entry(pair.clone()).or_default();
            *n += 1;
            if bans_action(f.kind) || *n >= REPEAT_BAN_THRESHOLD {
                banned.insert(pair);
            }
        }
        ReplanRequest { goals, world, banned, failures }
    }

    /// Banned pairs that `plan` would execute, following the agent's room
    /// through the plan's navigation steps.
    pub fn violations(&self, plan: &[ActionScript]) -> Vec<BannedPair> {
        let mut room = self.world.agent.room.clone();
        let mut out = Vec::new();
        for a in plan {
            let pair = BannedPair::of(a, &room);
            if self.banned.contains(&pair) {
                out.push(pair);
            }
            if a.verb.is_navigation() {
                if let Some(r) = self.world.room_of(a.target().unwrap_or_default()) {
                    room = r.to_string();
                }
            }
        }
        out
    }
}

/// Asks the planner for a new plan and compiles it into generation
/// `generation`. A plan containing a banned action is re-requested once.
pub fn apply_l3(
    request: &ReplanRequest,
    planner: &dyn Planner,
    thresholds: &ThresholdConfig,
    generation: u32,
) -> Result<TaskGraph, CorrectionError> {
    let mut last_banned = None;
    for _ in 0..2 {
        let PlanOutput { plan, options } = planner.generate(request).map_err(|e| match e {
            PlannerError::UnreachableGoal(_) | PlannerError::Rejected(_) | PlannerError::Unavailable(_) => {
                CorrectionError::PlannerRejected(e.to_string())
            }
        })?;
        if let Some(b) = request.violations(&plan).into_iter().next() {
            last_banned = Some(b.to_string());
            continue;
        }
        let g = build_graph(&plan, &options, thresholds, generation)
            .map_err(|e| CorrectionError::PlannerRejected(e.to_string()))?;
        let report = validate(&g);
        if !report.is_ok() {
            return Err(CorrectionError::PlannerRejected(format!("{:?}", report.violations)));
        }
        return Ok(g);
    }
    Err(CorrectionError::BannedActionEmitted(last_banned.unwrap_or_default()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorDecision {
    Abort,
    Retry,
    Skip,
}

/// Human (or scripted) decision maker consulted at L4.
pub trait Operator {
    fn decide(&mut self, dossier: &[FailureRecord]) -> OperatorDecision;
}

/// Aborts every escalation; the default for batch runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoAbort;

impl Operator for AutoAbort {
    fn decide(&mut self, _: &[FailureRecord]) -> OperatorDecision {
        OperatorDecision::Abort
    }
}

/// Replays a fixed list of decisions, then aborts.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOperator(pub Vec<OperatorDecision>);

impl Operator for ScriptedOperator {
    fn decide(&mut self, _: &[FailureRecord]) -> OperatorDecision {
        if self.0.is_empty() {
            OperatorDecision::Abort
        } else {
            self.0.remove(0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    /// Number of step records logged before the operator was asked.
    pub step: u32,
    pub decision: OperatorDecision,
    pub dossier: Vec<FailureRecord>,
}

/// Hands the failure dossier to the operator.
pub fn escalate_l4(step: u32, history: &[FailureRecord], operator: &mut dyn Operator) -> Escalation {
    Escalation { step, decision: operator.decide(history), dossier: history.to_vec() }
}
