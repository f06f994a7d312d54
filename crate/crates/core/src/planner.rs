//! Plan generation and semantic scoring interfaces, with deterministic
//! rule-based implementations.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::correction::{BannedPair, ReplanRequest};
use crate::env::{rules, ActionScript, Flag, Predicate, Property, Verb, WorldState};
use crate::error_engine::Recoverability;
use crate::graph::{EdgeKind, TaskEdge, TaskNode};
use crate::policy::BeliefContext;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanOutput {
    pub plan: Vec<ActionScript>,
    #[serde(default)]
    pub options: BTreeMap<usize, Vec<ActionScript>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlannerError {
    #[error("goal {0} cannot be reached with the available actions")]
    UnreachableGoal(Predicate),
    #[error("planner output rejected: {0}")]
    Rejected(String),
    #[error("planner unavailable: {0}")]
    Unavailable(String),
}

/// Produces a plan for the request's goals from its world state while
/// avoiding its banned pairs.
pub trait Planner: Send + Sync {
    fn generate(&self, request: &ReplanRequest) -> Result<PlanOutput, PlannerError>;
}

/// Everything a scorer may look at for one candidate edge.
#[derive(Debug, Clone)]
pub struct ScoreQuery<'a> {
    pub edge: TaskEdge,
    pub target: &'a TaskNode,
    pub belief: &'a BeliefContext,
    pub observation: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScorerError {
    #[error("semantic scorer unavailable: {0}")]
    Unavailable(String),
}

/// Semantic plausibility of taking an edge, in `[0, 1]`.
pub trait SemanticScorer: Send + Sync {
    fn score(&self, query: &ScoreQuery<'_>) -> Result<f64, ScorerError>;
}

/// Token-overlap scorer with fixed bonuses.
///
/// The base score is the share of the target node's tokens (verb, objects,
/// tags) that appear among the goal and observation tokens. Correction
/// edges gain 0.5 after a fully recoverable error, fallback edges gain 0.5
/// once the current node failed three times in a row, and edges whose
/// action matches a retrieved recovery gain 0.2.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubScorer;

pub const CORR_BONUS: f64 = 0.5;
pub const FB_BONUS: f64 = 0.5;
pub const FB_BONUS_FAILURES: u32 = 3;
pub const RETRIEVAL_BONUS: f64 = 0.2;

impl SemanticScorer for StubScorer {
    fn score(&self, q: &ScoreQuery<'_>) -> Result<f64, ScorerError> {
        let ctx = q.target.task_context.tokens(q.target.action.as_ref());
        let mut reference: BTreeSet<String> = q.observation.clone();
        for g in &q.belief.goals {
            reference.extend(g.tokens());
        }
        let mut s = if ctx.is_empty() { 0.0 } else { ctx.intersection(&reference).count() as f64 / ctx.len() as f64 };
        let recoverable = q.belief.last_error.as_ref().is_some_and(|c| c.recoverable == Recoverability::Yes);
        if q.edge.kind == EdgeKind::Corr && recoverable {
            s += CORR_BONUS;
        }
        if q.edge.kind == EdgeKind::Fb && q.belief.failures(q.belief.current) >= FB_BONUS_FAILURES {
            s += FB_BONUS;
        }
        if let Some(a) = &q.target.action {
            if q.belief.retrieved_recoveries.contains(&a.key()) {
                s += RETRIEVAL_BONUS;
            }
        }
        Ok(crate::math::clamp01(s))
    }
}

/// Backward-chaining planner over the verb effect table.
///
/// Goals are handled in order. Each goal expands into the navigation,
/// container opening and manipulation steps it needs; a banned `grab` is
/// replaced by `push` and vice versa. Every `grab` or `push` step offers the
/// other verb as an alternative.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubPlanner;

struct Chainer<'a> {
    world: WorldState,
    banned: &'a BTreeSet<BannedPair>,
    plan: Vec<ActionScript>,
}

impl Chainer<'_> {
    fn allowed(&self, a: &ActionScript) -> bool {
        !self.banned.contains(&BannedPair::of(a, &self.world.agent.room))
    }

    fn emit(&mut self, a: ActionScript, goal: &Predicate) -> Result<(), PlannerError> {
        if !self.allowed(&a) {
            return Err(PlannerError::UnreachableGoal(goal.clone()));
        }
        // Plan against the world as the planner believes it: nothing hidden.
        let mut believed = self.world.clone();
        for o in believed.objects.values_mut() {
            o.flags.remove(&Flag::Occluded);
        }
        rules::check(&believed, &a).map_err(|_| PlannerError::UnreachableGoal(goal.clone()))?;
        rules::apply(&mut self.world, &a);
        self.plan.push(a);
        Ok(())
    }

    fn go_to(&mut self, place: &str, goal: &Predicate) -> Result<(), PlannerError> {
        let room = self.world.room_of(place).ok_or_else(|| PlannerError::UnreachableGoal(goal.clone()))?.to_string();
        if room != self.world.agent.room || !self.world.agent.pose_ok {
            self.emit(ActionScript::new(Verb::Walk, &[&room]), goal)?;
        }
        Ok(())
    }

    fn open_if_closed(&mut self, c: &str, goal: &Predicate) -> Result<(), PlannerError> {
        let closed = self.world.object(c).is_some_and(|o| o.has(Property::Openable) && !o.is(Flag::Open));
        if closed {
            self.go_to(c, goal)?;
            self.emit(ActionScript::new(Verb::Open, &[c]), goal)?;
        }
        Ok(())
    }

    fn hold(&mut self, x: &str, goal: &Predicate) -> Result<(), PlannerError> {
        if self.world.agent.holdings.contains(x) {
            return Ok(());
        }
        let container = match self.world.object(x).and_then(|o| o.placement.clone()) {
            Some(crate::env::Placement::Inside(c)) => Some(c),
            _ => None,
        };
        if let Some(c) = container {
            self.open_if_closed(&c, goal)?;
        }
        self.go_to(x, goal)?;
        let grab = ActionScript::new(Verb::Grab, &[x]);
        let take = if self.allowed(&grab) { grab } else { ActionScript::new(Verb::Push, &[x]) };
        self.emit(take, goal)
    }

    fn at_then(&mut self, x: &str, verb: Verb, goal: &Predicate) -> Result<(), PlannerError> {
        self.go_to(x, goal)?;
        self.emit(ActionScript::new(verb, &[x]), goal)
    }

    fn achieve(&mut self, goal: &Predicate) -> Result<(), PlannerError> {
        if self.world.holds(goal) {
            return Ok(());
        }
        match goal {
            Predicate::Inside(x, c) | Predicate::On(x, c) => {
                self.hold(x, goal)?;
                let verb = if matches!(goal, Predicate::Inside(..)) { Verb::PutIn } else { Verb::PutBack };
                if verb == Verb::PutIn {
                    self.open_if_closed(c, goal)?;
                }
                self.go_to(c, goal)?;
                self.emit(ActionScript::new(verb, &[x, c]), goal)
            }
            Predicate::Grabbed(x) => self.hold(x, goal),
            Predicate::Open(x) => self.at_then(x, Verb::Open, goal),
            Predicate::Closed(x) => self.at_then(x, Verb::Close, goal),
            Predicate::SwitchedOn(x) => self.at_then(x, Verb::SwitchOn, goal),
            Predicate::SwitchedOff(x) => self.at_then(x, Verb::SwitchOff, goal),
            Predicate::Cut(x) => self.at_then(x, Verb::Cut, goal),
            Predicate::Sitting(x) => self.at_then(x, Verb::Sit, goal),
            Predicate::Facing(x) => self.at_then(x, Verb::LookAt, goal),
            Predicate::At(x) => self.go_to(x, goal),
            Predicate::Standing => self.emit(ActionScript::new(Verb::StandUp, &[]), goal),
            Predicate::Localized => {
                let room = self.world.agent.room.clone();
                self.emit(ActionScript::new(Verb::Walk, &[&room]), goal)
            }
        }
    }
}

/// The manipulation alternative for a step, if any.
pub fn alternative_verb(verb: Verb) -> Option<Verb> {
    match verb {
        Verb::Grab => Some(Verb::Push),
        Verb::Push => Some(Verb::Grab),
        _ => None,
    }
}

impl Planner for StubPlanner {
    fn generate(&self, request: &ReplanRequest) -> Result<PlanOutput, PlannerError> {
        let mut world = request.world.clone();
        world.active_faults.clear();
        let mut c = Chainer { world, banned: &request.banned, plan: Vec::new() };
        for g in &request.goals {
            c.achieve(g)?;
        }
        // Rooms before each step, for checking alternatives against bans.
        let mut rooms = Vec::with_capacity(c.plan.len());
        let mut room = request.world.agent.room.clone();
        for a in &c.plan {
            rooms.push(room.clone());
            if a.verb.is_navigation() {
                if let Some(r) = request.world.room_of(a.target().unwrap_or_default()) {
                    room = r.to_string();
                }
            }
        }
        let mut options = BTreeMap::new();
        for (k, a) in c.plan.iter().enumerate() {
            if let Some(v) = alternative_verb(a.verb) {
                let alt = ActionScript::new(v, &[a.target().unwrap_or_default()]);
                if !request.banned.contains(&BannedPair::of(&alt, &rooms[k])) {
                    options.insert(k, alloc::vec![alt]);
                }
            }
        }
        Ok(PlanOutput { plan: c.plan, options })
    }
}
