//! Built-in benchmark scenarios: five household task families, each in two
//! room pairings, with scripted fault schedules.
//!
//! Faults are placed so that most moderate-error failures hit steps a local
//! rule can repair, collisions hit navigation steps (which replanning can
//! redo) and occluded objects make `grab` infeasible until pushed.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::env::{
    parse_script, ActionScript, FaultEntry, FaultSchedule, Flag, ObjectState, Placement, Property, WorldState,
};
use crate::error_engine::ErrorKind;
use crate::scenario::{Scenario, WeightedGoal};

use ErrorKind::*;
use Property::*;

struct Builder {
    s: Scenario,
}

fn act(line: &str) -> ActionScript {
    parse_script(line).unwrap_or_else(|e| panic!("built-in plan line {line:?}: {e}"))
}

impl Builder {
    fn new(name: &str, rooms: [&str; 2], agent: &str) -> Self {
        Builder {
            s: Scenario {
                name: name.to_string(),
                world: WorldState::new(rooms, agent),
                goals: Vec::new(),
                plan: Vec::new(),
                options: BTreeMap::new(),
                faults: FaultSchedule::default(),
                seed: 0,
                optimal_len: None,
                reference: None,
            },
        }
    }

    fn obj(mut self, name: &str, room: &str, props: &[Property]) -> Self {
        let mut o = ObjectState::new(room);
        for p in props {
            o = o.with(*p);
        }
        if o.has(Openable) {
            o = o.flagged(Flag::Closed);
        }
        if o.has(Switchable) {
            o = o.flagged(Flag::Off);
        }
        self.s.world.add(name, o);
        self
    }

    fn occluded(mut self, name: &str) -> Self {
        if let Some(o) = self.s.world.objects.get_mut(name) {
            o.flags.insert(Flag::Occluded);
        }
        self
    }

    fn on(mut self, name: &str, surface: &str) -> Self {
        if let Some(o) = self.s.world.objects.get_mut(name) {
            o.placement = Some(Placement::On(surface.to_string()));
        }
        self
    }

    fn goals(mut self, goals: &[&str]) -> Self {
        self.s.goals = goals
            .iter()
            .map(|g| WeightedGoal { predicate: g.parse().unwrap_or_else(|e| panic!("{e}")), weight: 1.0 })
            .collect();
        self
    }

    /// Plan lines; every grab step gets a push alternative.
    fn plan(mut self, lines: &[&str]) -> Self {
        self.s.plan = lines.iter().map(|l| act(l)).collect();
        for (i, a) in self.s.plan.iter().enumerate() {
            if a.verb == crate::env::Verb::Grab {
                let alt = ActionScript::new(crate::env::Verb::Push, &[a.target().unwrap_or_default()]);
                self.s.options.insert(i, vec![alt]);
            }
        }
        self.s.optimal_len = Some(lines.len());
        self.s.reference = Some(self.s.plan.clone());
        self
    }

    fn fault(mut self, step: u32, kind: ErrorKind, sticky: bool) -> Self {
        self.s.faults.entries.push(FaultEntry { step, kind, sticky });
        self
    }

    fn seed(mut self, seed: u64) -> Self {
        self.s.seed = seed;
        self
    }

    fn build(self) -> Scenario {
        self.s
    }
}

pub fn readbook_bedroom_kitchen() -> Scenario {
    Builder::new("readbook_bedroom_kitchen", ["bedroom", "kitchen"], "bedroom")
        .obj("book", "kitchen", &[Grabbable])
        .obj("table", "kitchen", &[Surface])
        .on("book", "table")
        .obj("bed", "bedroom", &[Sittable])
        .goals(&["grabbed(book)", "sitting(bed)", "facing(book)"])
        .plan(&["[walk] <kitchen>", "[grab] <book>", "[walk] <bedroom>", "[sit] <bed>", "[lookat] <book>"])
        .fault(1, PerceptionMismatch, true)
        .fault(3, AgentPositioning, true)
        .seed(101)
        .build()
}

pub fn readbook_bedroom_bathroom() -> Scenario {
    Builder::new("readbook_bedroom_bathroom", ["bedroom", "bathroom"], "bathroom")
        .obj("book", "bedroom", &[Grabbable])
        .occluded("book")
        .obj("bed", "bedroom", &[Sittable])
        .goals(&["grabbed(book)", "sitting(bed)", "facing(book)"])
        .plan(&["[walk] <bedroom>", "[grab] <book>", "[sit] <bed>", "[lookat] <book>"])
        .fault(0, AgentPositioning, false)
        .fault(3, SensorFailure, true)
        .seed(102)
        .build()
}

pub fn putdishwasher_bedroom_kitchen() -> Scenario {
    Builder::new("putdishwasher_bedroom_kitchen", ["bedroom", "kitchen"], "bedroom")
        .obj("plate", "bedroom", &[Grabbable])
        .obj("dishwasher", "kitchen", &[Openable, Container, Switchable])
        .goals(&["inside(plate,dishwasher)", "closed(dishwasher)", "switched_on(dishwasher)"])
        .plan(&[
            "[grab] <plate>",
            "[walk] <kitchen>",
            "[open] <dishwasher>",
            "[putin] <plate> <dishwasher>",
            "[close] <dishwasher>",
            "[switchon] <dishwasher>",
        ])
        .fault(2, Timeout, false)
        .fault(4, PerceptionMismatch, true)
        .fault(5, SensorFailure, true)
        .seed(103)
        .build()
}

pub fn putdishwasher_livingroom_bedroom() -> Scenario {
    Builder::new("putdishwasher_livingroom_bedroom", ["livingroom", "bedroom"], "bedroom")
        .obj("plate", "livingroom", &[Grabbable])
        .obj("dishwasher", "bedroom", &[Openable, Container, Switchable])
        .goals(&["inside(plate,dishwasher)", "closed(dishwasher)", "switched_on(dishwasher)"])
        .plan(&[
            "[walk] <livingroom>",
            "[grab] <plate>",
            "[walk] <bedroom>",
            "[open] <dishwasher>",
            "[putin] <plate> <dishwasher>",
            "[close] <dishwasher>",
            "[switchon] <dishwasher>",
        ])
        .fault(2, Collision, false)
        .fault(5, AgentPositioning, true)
        .seed(104)
        .build()
}

pub fn preparefood_kitchen_livingroom() -> Scenario {
    Builder::new("preparefood_kitchen_livingroom", ["kitchen", "livingroom"], "livingroom")
        .obj("bread", "kitchen", &[Grabbable, Cuttable])
        .obj("microwave", "kitchen", &[Openable, Container, Switchable])
        .goals(&["cut(bread)", "inside(bread,microwave)", "switched_on(microwave)"])
        .plan(&[
            "[walk] <kitchen>",
            "[grab] <bread>",
            "[cut] <bread>",
            "[open] <microwave>",
            "[putin] <bread> <microwave>",
            "[close] <microwave>",
            "[switchon] <microwave>",
        ])
        .fault(2, ActionNameMismatch, false)
        .fault(3, PerceptionMismatch, true)
        .fault(5, Timeout, false)
        .seed(105)
        .build()
}

pub fn preparefood_bedroom_bathroom() -> Scenario {
    Builder::new("preparefood_bedroom_bathroom", ["bedroom", "bathroom"], "bedroom")
        .obj("bread", "bathroom", &[Grabbable, Cuttable])
        .occluded("bread")
        .obj("microwave", "bedroom", &[Openable, Container, Switchable])
        .goals(&["cut(bread)", "inside(bread,microwave)", "switched_on(microwave)"])
        .plan(&[
            "[walk] <bathroom>",
            "[grab] <bread>",
            "[cut] <bread>",
            "[walk] <bedroom>",
            "[open] <microwave>",
            "[putin] <bread> <microwave>",
            "[switchon] <microwave>",
        ])
        .fault(2, SensorFailure, true)
        .fault(6, HardwareFault, false)
        .seed(106)
        .build()
}

pub fn putfridge_bathroom_livingroom() -> Scenario {
    Builder::new("putfridge_bathroom_livingroom", ["bathroom", "livingroom"], "bathroom")
        .obj("bananas", "livingroom", &[Grabbable])
        .occluded("bananas")
        .obj("fridge", "livingroom", &[Openable, Container])
        .goals(&["inside(bananas,fridge)", "closed(fridge)"])
        .plan(&[
            "[walk] <livingroom>",
            "[grab] <bananas>",
            "[open] <fridge>",
            "[putin] <bananas> <fridge>",
            "[close] <fridge>",
        ])
        .fault(2, PerceptionMismatch, true)
        .fault(3, AgentPositioning, false)
        .seed(107)
        .build()
}

pub fn putfridge_kitchen_bathroom() -> Scenario {
    Builder::new("putfridge_kitchen_bathroom", ["kitchen", "bathroom"], "bathroom")
        .obj("milk", "bathroom", &[Grabbable])
        .obj("fridge", "kitchen", &[Openable, Container])
        .goals(&["inside(milk,fridge)", "closed(fridge)"])
        .plan(&["[grab] <milk>", "[walk] <kitchen>", "[open] <fridge>", "[putin] <milk> <fridge>", "[close] <fridge>"])
        .fault(0, PerceptionMismatch, true)
        .fault(1, Collision, false)
        .fault(4, Timeout, false)
        .seed(108)
        .build()
}

pub fn setuptable_kitchen_bedroom() -> Scenario {
    Builder::new("setuptable_kitchen_bedroom", ["kitchen", "bedroom"], "bedroom")
        .obj("plate", "kitchen", &[Grabbable])
        .obj("cup", "kitchen", &[Grabbable])
        .occluded("cup")
        .obj("table", "kitchen", &[Surface])
        .goals(&["on(plate,table)", "on(cup,table)"])
        .plan(&[
            "[walk] <kitchen>",
            "[grab] <plate>",
            "[putback] <plate> <table>",
            "[grab] <cup>",
            "[putback] <cup> <table>",
        ])
        .fault(2, PerceptionMismatch, true)
        .fault(4, AgentPositioning, true)
        .seed(109)
        .build()
}

pub fn setuptable_livingroom_bedroom() -> Scenario {
    Builder::new("setuptable_livingroom_bedroom", ["livingroom", "bedroom"], "bedroom")
        .obj("plate", "bedroom", &[Grabbable])
        .obj("fork", "bedroom", &[Grabbable])
        .obj("table", "livingroom", &[Surface])
        .goals(&["on(plate,table)", "on(fork,table)"])
        .plan(&[
            "[grab] <plate>",
            "[grab] <fork>",
            "[walk] <livingroom>",
            "[putback] <plate> <table>",
            "[putback] <fork> <table>",
        ])
        .fault(1, PerceptionMismatch, true)
        .fault(2, Collision, false)
        .fault(4, SensorFailure, true)
        .seed(110)
        .build()
}

/// The ten built-in scenarios in a fixed order.
pub fn fault_suite() -> Vec<Scenario> {
    vec![
        readbook_bedroom_kitchen(),
        readbook_bedroom_bathroom(),
        putdishwasher_bedroom_kitchen(),
        putdishwasher_livingroom_bedroom(),
        preparefood_kitchen_livingroom(),
        preparefood_bedroom_bathroom(),
        putfridge_bathroom_livingroom(),
        putfridge_kitchen_bathroom(),
        setuptable_kitchen_bedroom(),
        setuptable_livingroom_bedroom(),
    ]
}

/// A fault-heavy copy of `base`: its scripted faults are replaced by a
/// seeded draw over all ten kinds (roughly every other step), and unscripted
/// steps fail with probability 0.2.
pub fn stress(base: &Scenario, seed: u64) -> Scenario {
    use rand_core::RngCore;
    let mut rng = crate::math::rng(crate::math::mix_seed(seed, 0x57e5));
    let mut s = base.clone();
    s.name = alloc::format!("{}_stress{seed}", base.name);
    s.seed = seed;
    s.faults.entries.clear();
    for step in 0..(base.plan.len() as u32 + 4) {
        if crate::math::unit(&mut rng) < 0.5 {
            let kind = ErrorKind::ALL[(rng.next_u32() % 10) as usize];
            let sticky = rng.next_u32().is_multiple_of(2);
            s.faults.entries.push(FaultEntry { step, kind, sticky });
        }
    }
    s.faults.failure_probability = 0.2;
    s
}

/// Task family of a scenario name (the part before the first `_`).
pub fn family(name: &str) -> String {
    name.split('_').next().unwrap_or(name).to_string()
}
