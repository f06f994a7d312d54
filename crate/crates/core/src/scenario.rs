//! Scenario definitions: initial world, goals, plan, options and faults.
//!
//! The serialized form is the scenario file layout
//! `{"scene", "objects", "agent", "goals", "plan", "options", "faults", "seed"}`;
//! plan lines are parsed with the action-script grammar when loading.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::correction::ReplanRequest;
use crate::env::{
    parse_script, ActionScript, AgentState, FaultEntry, FaultSchedule, ObjectState, Predicate, WorldState,
};
use crate::graph::{build_graph, validate, TaskGraph, ThresholdConfig};
use crate::planner::{PlanOutput, Planner};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario {name}: plan line {line}: {reason}")]
    BadPlan { name: String, line: usize, reason: String },
    #[error("scenario {name}: option key {key:?} is not a plan step")]
    BadOptionKey { name: String, key: String },
    #[error("scenario {name}: {reason}")]
    Inconsistent { name: String, reason: String },
    #[error("scenario {name}: goal weight {weight} must be positive")]
    BadWeight { name: String, weight: String },
    #[error("scenario {name}: planner failed: {reason}")]
    Planner { name: String, reason: String },
    #[error("scenario {name}: graph rejected: {reason}")]
    Graph { name: String, reason: String },
}

/// A goal predicate with its weight for soft recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGoal {
    pub predicate: Predicate,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct Scenario {
    pub name: String,
    pub world: WorldState,
    pub goals: Vec<WeightedGoal>,
    /// Initial plan; empty means "ask the planner".
    pub plan: Vec<ActionScript>,
    pub options: BTreeMap<usize, Vec<ActionScript>>,
    pub faults: FaultSchedule,
    pub seed: u64,
    /// Length of the shortest known plan, for efficiency and size penalty.
    pub optimal_len: Option<usize>,
    /// Ground-truth action sequence for action accuracy.
    pub reference: Option<Vec<ActionScript>>,
}

impl Scenario {
    pub fn goal_predicates(&self) -> Vec<Predicate> {
        self.goals.iter().map(|g| g.predicate.clone()).collect()
    }

    /// The scenario's plan, or the planner's when none is given.
    pub fn initial_plan(&self, planner: &dyn Planner) -> Result<PlanOutput, ScenarioError> {
        if !self.plan.is_empty() {
            return Ok(PlanOutput { plan: self.plan.clone(), options: self.options.clone() });
        }
        let request = ReplanRequest::new(self.goal_predicates(), self.world.clone(), Vec::new());
        planner
            .generate(&request)
            .map_err(|e| ScenarioError::Planner { name: self.name.clone(), reason: e.to_string() })
    }

    /// Compiles the initial plan into a validated generation-0 graph.
    pub fn initial_graph(
        &self,
        planner: &dyn Planner,
        thresholds: &ThresholdConfig,
    ) -> Result<TaskGraph, ScenarioError> {
        let out = self.initial_plan(planner)?;
        let g = build_graph(&out.plan, &out.options, thresholds, 0)
            .map_err(|e| ScenarioError::Graph { name: self.name.clone(), reason: e.to_string() })?;
        let report = validate(&g);
        if !report.is_ok() {
            return Err(ScenarioError::Graph { name: self.name.clone(), reason: format!("{:?}", report.violations) });
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub rooms: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoalSpec {
    Plain(Predicate),
    Weighted { predicate: Predicate, weight: f64 },
}

/// On-disk scenario layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub scene: SceneSpec,
    pub objects: BTreeMap<String, ObjectState>,
    pub agent: AgentState,
    pub goals: Vec<GoalSpec>,
    #[serde(default)]
    pub plan: Vec<String>,
    #[serde(default)]
    pub options: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub faults: Vec<FaultEntry>,
    #[serde(default)]
    pub failure_probability: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<String>>,
}

fn parse_lines(name: &str, lines: &[String]) -> Result<Vec<ActionScript>, ScenarioError> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            parse_script(l).map_err(|e| ScenarioError::BadPlan {
                name: name.to_string(),
                line: i,
                reason: e.to_string(),
            })
        })
        .collect()
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = ScenarioError;

    fn try_from(f: ScenarioFile) -> Result<Self, Self::Error> {
        let name = f.name.clone();
        let inconsistent = |reason: String| ScenarioError::Inconsistent { name: name.clone(), reason };
        if !f.scene.rooms.contains(&f.agent.room) {
            return Err(inconsistent(format!("agent room {} is not in the scene", f.agent.room)));
        }
        for (obj, st) in &f.objects {
            if !f.scene.rooms.contains(&st.room) {
                return Err(inconsistent(format!("object {obj} is in unknown room {}", st.room)));
            }
        }
        let plan = parse_lines(&name, &f.plan)?;
        let mut options = BTreeMap::new();
        for (key, lines) in &f.options {
            let step: usize = key
                .parse()
                .ok()
                .filter(|s| *s < plan.len() || plan.is_empty())
                .ok_or_else(|| ScenarioError::BadOptionKey { name: name.clone(), key: key.clone() })?;
            options.insert(step, parse_lines(&name, lines)?);
        }
        let goals = f
            .goals
            .into_iter()
            .map(|g| match g {
                GoalSpec::Plain(p) => Ok(WeightedGoal { predicate: p, weight: 1.0 }),
                GoalSpec::Weighted { predicate, weight } if weight > 0.0 => Ok(WeightedGoal { predicate, weight }),
                GoalSpec::Weighted { weight, .. } => {
                    Err(ScenarioError::BadWeight { name: name.clone(), weight: format!("{weight}") })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let reference = f.reference.as_deref().map(|r| parse_lines(&name, r)).transpose()?;
        let world = WorldState { rooms: f.scene.rooms, objects: f.objects, agent: f.agent, active_faults: Vec::new() };
        let bad = world.violations();
        if !bad.is_empty() {
            return Err(inconsistent(bad.join("; ")));
        }
        Ok(Scenario {
            name: f.name,
            world,
            goals,
            plan,
            options,
            faults: FaultSchedule { entries: f.faults, failure_probability: f.failure_probability },
            seed: f.seed,
            optimal_len: f.optimal_len,
            reference,
        })
    }
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        let lines = |v: &[ActionScript]| v.iter().map(|a| a.canonical()).collect::<Vec<_>>();
        ScenarioFile {
            name: s.name,
            scene: SceneSpec { rooms: s.world.rooms },
            objects: s.world.objects,
            agent: s.world.agent,
            goals: s
                .goals
                .into_iter()
                .map(|g| {
                    if g.weight == 1.0 {
                        GoalSpec::Plain(g.predicate)
                    } else {
                        GoalSpec::Weighted { predicate: g.predicate, weight: g.weight }
                    }
                })
                .collect(),
            plan: lines(&s.plan),
            options: s.options.iter().map(|(k, v)| (k.to_string(), lines(v))).collect(),
            faults: s.faults.entries,
            failure_probability: s.faults.failure_probability,
            seed: s.seed,
            optimal_len: s.optimal_len,
            reference: s.reference.as_deref().map(lines),
        }
    }
}
