//! Deterministic household world: state, action scripts, verb rules and the
//! fault-injecting step function.

pub mod rules;
pub mod script;
pub mod sim;
pub mod world;

pub use rules::{base_risk, expected_outcome, main_effect};
pub use script::{parse_script, suggest_verb, ActionScript, ArgToken, ScriptError, Verb};
pub use sim::{check_goal, step, FaultEntry, FaultSchedule, GoalReport, StepOutcome};
pub use world::{
    ActiveFault, AgentState, FaultBinding, Flag, ObjectState, Placement, Predicate, PredicateParseError, Property,
    WorldState,
};
