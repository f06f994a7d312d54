//! One deterministic simulator step with fault injection.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::rules;
use super::script::{ActionScript, Verb};
use super::world::{ActiveFault, FaultBinding, Predicate, WorldState};
use crate::error_engine::ErrorKind;
use crate::math;

/// A scripted fault for one primary step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub step: u32,
    pub kind: ErrorKind,
    #[serde(default)]
    pub sticky: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaultSchedule {
    #[serde(default)]
    pub entries: Vec<FaultEntry>,
    /// Chance that an unscheduled step suffers a transient fault.
    #[serde(default)]
    pub failure_probability: f64,
}

impl FaultSchedule {
    pub fn new(entries: Vec<FaultEntry>) -> Self {
        FaultSchedule { entries, failure_probability: 0.0 }
    }

    pub fn at(&self, step: u32) -> Option<&FaultEntry> {
        self.entries.iter().find(|e| e.step == step)
    }

    /// Same random failure rate, no scripted entries.
    pub fn unscripted(&self) -> FaultSchedule {
        FaultSchedule { entries: Vec::new(), failure_probability: self.failure_probability }
    }
}

/// Kinds drawn for random transient faults.
const TRANSIENT: [ErrorKind; 5] = [
    ErrorKind::Timeout,
    ErrorKind::ActionExecution,
    ErrorKind::SensorFailure,
    ErrorKind::PerceptionMismatch,
    ErrorKind::AgentPositioning,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// True successor state.
    pub world: WorldState,
    /// What the agent perceives; differs from `world` only under a perception fault.
    pub observed: WorldState,
    pub succeeded: bool,
    pub env_message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<ErrorKind>,
}

fn binding_for(kind: ErrorKind, action: &ActionScript) -> FaultBinding {
    match kind {
        ErrorKind::PerceptionMismatch => match action.target() {
            Some(t) => FaultBinding::Object(t.to_string()),
            None => FaultBinding::Action(action.key()),
        },
        ErrorKind::AgentPositioning => FaultBinding::Agent,
        ErrorKind::SensorFailure => FaultBinding::Sensors,
        _ => FaultBinding::Action(action.key()),
    }
}

fn binding_matches(b: &FaultBinding, action: &ActionScript) -> bool {
    match b {
        FaultBinding::Action(k) => *k == action.key(),
        FaultBinding::Object(o) => action.args.iter().any(|a| a.name == *o),
        FaultBinding::Agent => !action.verb.is_navigation(),
        FaultBinding::Sensors => action.verb != Verb::LookAt,
    }
}

fn clears(b: &FaultBinding, action: &ActionScript) -> bool {
    match b {
        FaultBinding::Action(_) => false,
        FaultBinding::Object(o) => {
            matches!(action.verb, Verb::LookAt | Verb::Close) && action.target() == Some(o.as_str())
        }
        FaultBinding::Agent => action.verb.is_navigation(),
        FaultBinding::Sensors => action.verb == Verb::LookAt,
    }
}

fn participle(verb: Verb) -> &'static str {
    match verb {
        Verb::Walk | Verb::WalkTowards | Verb::Move => "reached",
        Verb::LookAt => "in view",
        Verb::Grab | Verb::Push => "grabbed",
        Verb::Open => "opened",
        Verb::Close => "closed",
        Verb::PutIn | Verb::PutBack => "placed",
        Verb::SwitchOn => "switched on",
        Verb::SwitchOff => "switched off",
        Verb::Cut => "cut",
        Verb::Sit => "occupied",
        Verb::StandUp => "standing",
    }
}

fn fault_message(kind: ErrorKind, action: &ActionScript) -> String {
    let v = action.verb;
    let t = action.target().unwrap_or("agent");
    match kind {
        ErrorKind::ActionNameMismatch => format!("action name [{v}] not found in supported actions"),
        ErrorKind::ScriptParsing => format!("[{v}] lacks necessary parameters"),
        ErrorKind::ActionExecution => format!("{t} not found, not reachable, or not visible"),
        ErrorKind::Cascading => format!("[{v}] blocked by an earlier failure"),
        ErrorKind::SensorFailure => format!("sensor returned no reading for {t}"),
        ErrorKind::Collision => format!("agent collided with an obstacle during [{v}]"),
        ErrorKind::Timeout => format!("[{v}] timed out"),
        ErrorKind::HardwareFault => "gripper actuator fault: emergency stop".to_string(),
        ErrorKind::PerceptionMismatch => format!("{t} already {}", participle(v)),
        ErrorKind::AgentPositioning => format!("agent not localized relative to {t}"),
    }
}

/// Executes `action` in `state`.
///
/// A pure function of its inputs: scheduled faults take priority, then any
/// active sticky fault bound to the action, then a seeded random draw against
/// `faults.failure_probability`. Without a fault, the verb's precondition
/// rule decides success.
pub fn step(
    state: &WorldState,
    action: &ActionScript,
    faults: &FaultSchedule,
    step_index: u32,
    seed: u64,
) -> StepOutcome {
    let mut world = state.clone();
    if world.agent.halted {
        return StepOutcome {
            observed: world.clone(),
            world,
            succeeded: false,
            env_message: "actuator halted: emergency stop engaged".to_string(),
            injected: None,
        };
    }

    world.active_faults.retain(|f| !clears(&f.binding, action));

    let fault = if let Some(e) = faults.at(step_index) {
        Some((e.kind, e.sticky))
    } else if let Some(f) = world.active_faults.iter().find(|f| binding_matches(&f.binding, action)) {
        Some((f.kind, false))
    } else if faults.failure_probability > 0.0 {
        let mut rng = math::rng(math::mix_seed(seed, step_index as u64));
        if math::unit(&mut rng) < faults.failure_probability {
            let i = (math::unit(&mut rng) * TRANSIENT.len() as f64) as usize;
            Some((TRANSIENT[i.min(TRANSIENT.len() - 1)], false))
        } else {
            None
        }
    } else {
        None
    };

    let Some((kind, sticky)) = fault else {
        return match rules::execute(&world, action) {
            Ok(next) => StepOutcome {
                observed: next.clone(),
                world: next,
                succeeded: true,
                env_message: "ok".to_string(),
                injected: None,
            },
            Err(msg) => {
                StepOutcome { observed: world.clone(), world, succeeded: false, env_message: msg, injected: None }
            }
        };
    };

    if sticky {
        let f = ActiveFault { kind, binding: binding_for(kind, action) };
        if !world.active_faults.contains(&f) {
            world.active_faults.push(f);
        }
    }
    match kind {
        ErrorKind::Collision => world.agent.pose_ok = false,
        ErrorKind::HardwareFault => {
            world.agent.pose_ok = false;
            world.agent.halted = true;
        }
        _ => {}
    }
    let mut observed = world.clone();
    if kind == ErrorKind::PerceptionMismatch {
        // The agent perceives the intended effect as missing.
        if let Some(p) = rules::main_effect(action) {
            hide(&mut observed, &p);
        }
    }
    StepOutcome { world, observed, succeeded: false, env_message: fault_message(kind, action), injected: Some(kind) }
}

/// Makes `p` false in `w` by the smallest edit.
fn hide(w: &mut WorldState, p: &Predicate) {
    use super::world::Flag;
    let unflag = |w: &mut WorldState, x: &str, f: Flag| {
        if let Some(o) = w.objects.get_mut(x) {
            o.flags.remove(&f);
        }
    };
    match p {
        Predicate::Open(x) => unflag(w, x, Flag::Open),
        Predicate::Closed(x) => unflag(w, x, Flag::Closed),
        Predicate::SwitchedOn(x) => unflag(w, x, Flag::On),
        Predicate::SwitchedOff(x) => unflag(w, x, Flag::Off),
        Predicate::Cut(x) => unflag(w, x, Flag::Cut),
        Predicate::Grabbed(x) => {
            w.agent.holdings.remove(x);
            unflag(w, x, Flag::Grabbed);
        }
        Predicate::Facing(_) => w.agent.facing = None,
        Predicate::Inside(x, _) | Predicate::On(x, _) => {
            if let Some(o) = w.objects.get_mut(x) {
                o.placement = None;
            }
        }
        Predicate::Sitting(_) => w.agent.sitting = None,
        Predicate::At(_) | Predicate::Localized | Predicate::Standing => w.agent.pose_ok = false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalReport {
    pub satisfied: Vec<Predicate>,
    pub unsatisfied: Vec<Predicate>,
    pub ratio: f64,
}

/// Splits `goals` by whether they hold in `state`. The ratio is 1 when
/// there are no goals.
pub fn check_goal(state: &WorldState, goals: &[Predicate]) -> GoalReport {
    let (satisfied, unsatisfied): (Vec<_>, Vec<_>) = goals.iter().cloned().partition(|g| state.holds(g));
    let ratio = if goals.is_empty() { 1.0 } else { satisfied.len() as f64 / goals.len() as f64 };
    GoalReport { satisfied, unsatisfied, ratio }
}
