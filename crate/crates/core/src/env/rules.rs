//! Precondition and effect rules for each verb.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};

use super::script::{ActionScript, Verb};
use super::world::{Flag, Placement, Predicate, Property, WorldState};

/// Most objects an agent can hold at once.
pub const MAX_HOLDINGS: usize = 2;

/// The predicate a successful action is meant to establish.
pub fn main_effect(action: &ActionScript) -> Option<Predicate> {
    let a = |i: usize| action.arg(i).unwrap_or_default().to_string();
    Some(match action.verb {
        Verb::Walk | Verb::WalkTowards | Verb::Move => Predicate::At(a(0)),
        Verb::LookAt => Predicate::Facing(a(0)),
        Verb::Grab | Verb::Push => Predicate::Grabbed(a(0)),
        Verb::Open => Predicate::Open(a(0)),
        Verb::Close => Predicate::Closed(a(0)),
        Verb::PutIn => Predicate::Inside(a(0), a(1)),
        Verb::PutBack => Predicate::On(a(0), a(1)),
        Verb::SwitchOn => Predicate::SwitchedOn(a(0)),
        Verb::SwitchOff => Predicate::SwitchedOff(a(0)),
        Verb::Cut => Predicate::Cut(a(0)),
        Verb::Sit => Predicate::Sitting(a(0)),
        Verb::StandUp => Predicate::Standing,
    })
}

/// Expected outcome of a node executing `action`: its main effect, plus the
/// agent staying localized.
pub fn expected_outcome(action: &ActionScript) -> BTreeSet<Predicate> {
    let mut out = BTreeSet::new();
    out.extend(main_effect(action));
    out.insert(Predicate::Localized);
    out
}

/// Default per-verb risk used by the transition policy.
pub fn base_risk(verb: Verb) -> f64 {
    match verb {
        Verb::Walk | Verb::WalkTowards => 0.05,
        Verb::LookAt => 0.02,
        Verb::Grab => 0.2,
        Verb::Push => 0.35,
        Verb::Move => 0.2,
        Verb::Open | Verb::Close => 0.1,
        Verb::PutIn => 0.2,
        Verb::PutBack => 0.15,
        Verb::SwitchOn | Verb::SwitchOff => 0.05,
        Verb::Cut => 0.25,
        Verb::Sit | Verb::StandUp => 0.05,
    }
}

/// Checks the verb's preconditions; the error is a human-readable reason.
pub fn check(world: &WorldState, action: &ActionScript) -> Result<(), String> {
    let x = action.arg(0).unwrap_or_default();
    let here = |name: &str| -> Result<(), String> {
        let o = world.object(name).ok_or_else(|| format!("{name} not found"))?;
        if o.room != world.agent.room {
            return Err(format!("{name} not reachable from {}", world.agent.room));
        }
        Ok(())
    };
    let need = |name: &str, p: Property, what: &str| -> Result<(), String> {
        here(name)?;
        if world.object(name).is_some_and(|o| o.has(p)) {
            Ok(())
        } else {
            Err(format!("{name} cannot be {what}"))
        }
    };
    match action.verb {
        Verb::Walk | Verb::WalkTowards | Verb::Move => {
            world.room_of(x).map(|_| ()).ok_or_else(|| format!("{x} not found"))
        }
        Verb::LookAt => here(x),
        Verb::Grab | Verb::Push => {
            if world.agent.holdings.contains(x) {
                return Ok(());
            }
            need(x, Property::Grabbable, "grabbed")?;
            let o = &world.objects[x];
            if action.verb == Verb::Grab && o.is(Flag::Occluded) {
                return Err(format!("{x} not visible"));
            }
            if let Some(Placement::Inside(c)) = &o.placement {
                if world.object(c).is_some_and(|c| c.has(Property::Openable) && !c.is(Flag::Open)) {
                    return Err(format!("{x} not reachable inside closed {c}"));
                }
            }
            if world.agent.holdings.len() >= MAX_HOLDINGS {
                return Err("hands full".to_string());
            }
            Ok(())
        }
        Verb::Open | Verb::Close => need(x, Property::Openable, "opened or closed"),
        Verb::PutIn | Verb::PutBack => {
            let dst = action.arg(1).unwrap_or_default();
            if !world.agent.holdings.contains(x) {
                return Err(format!("{x} not held"));
            }
            if action.verb == Verb::PutIn {
                need(dst, Property::Container, "used as a container")?;
                let c = &world.objects[dst];
                if c.has(Property::Openable) && !c.is(Flag::Open) {
                    return Err(format!("{dst} is closed"));
                }
                Ok(())
            } else {
                need(dst, Property::Surface, "used as a surface")
            }
        }
        Verb::SwitchOn | Verb::SwitchOff => need(x, Property::Switchable, "switched"),
        Verb::Cut => need(x, Property::Cuttable, "cut"),
        Verb::Sit => need(x, Property::Sittable, "sat on"),
        Verb::StandUp => Ok(()),
    }
}

/// Applies the verb's effects. Callers must have checked preconditions.
pub fn apply(world: &mut WorldState, action: &ActionScript) {
    let x = action.arg(0).unwrap_or_default().to_string();
    let set = |world: &mut WorldState, name: &str, on: Flag, off: Flag| {
        if let Some(o) = world.objects.get_mut(name) {
            o.flags.insert(on);
            o.flags.remove(&off);
        }
    };
    match action.verb {
        Verb::Walk | Verb::WalkTowards | Verb::Move => {
            let room = world.room_of(&x).unwrap_or_default().to_string();
            for h in world.agent.holdings.clone() {
                if let Some(o) = world.objects.get_mut(&h) {
                    o.room = room.clone();
                }
            }
            world.agent.room = room;
            world.agent.pose_ok = true;
            world.agent.facing = None;
            world.agent.sitting = None;
        }
        Verb::LookAt => world.agent.facing = Some(x),
        Verb::Grab | Verb::Push => {
            if let Some(o) = world.objects.get_mut(&x) {
                o.flags.insert(Flag::Grabbed);
                o.flags.remove(&Flag::Occluded);
                o.placement = None;
            }
            world.agent.holdings.insert(x);
        }
        Verb::Open => set(world, &x, Flag::Open, Flag::Closed),
        Verb::Close => set(world, &x, Flag::Closed, Flag::Open),
        Verb::PutIn | Verb::PutBack => {
            let dst = action.arg(1).unwrap_or_default().to_string();
            let room = world.objects.get(&dst).map(|o| o.room.clone());
            world.agent.holdings.remove(&x);
            if let Some(o) = world.objects.get_mut(&x) {
                o.flags.remove(&Flag::Grabbed);
                if let Some(room) = room {
                    o.room = room;
                }
                o.placement =
                    Some(if action.verb == Verb::PutIn { Placement::Inside(dst) } else { Placement::On(dst) });
            }
        }
        Verb::SwitchOn => set(world, &x, Flag::On, Flag::Off),
        Verb::SwitchOff => set(world, &x, Flag::Off, Flag::On),
        Verb::Cut => {
            if let Some(o) = world.objects.get_mut(&x) {
                o.flags.insert(Flag::Cut);
            }
        }
        Verb::Sit => world.agent.sitting = Some(x),
        Verb::StandUp => world.agent.sitting = None,
    }
}

/// Checks preconditions and, if they hold, returns the successor state.
pub fn execute(world: &WorldState, action: &ActionScript) -> Result<WorldState, String> {
    check(world, action)?;
    let mut next = world.clone();
    apply(&mut next, action);
    Ok(next)
}
