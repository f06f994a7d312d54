use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error_engine::ErrorKind;

/// Static capabilities of an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Grabbable,
    Openable,
    Container,
    Surface,
    Switchable,
    Sittable,
    Cuttable,
}

/// Mutable state flags of an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Open,
    Closed,
    On,
    Off,
    Grabbed,
    Cut,
    Occluded,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Open => "open",
            Flag::Closed => "closed",
            Flag::On => "on",
            Flag::Off => "off",
            Flag::Grabbed => "grabbed",
            Flag::Cut => "cut",
            Flag::Occluded => "occluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Inside(String),
    On(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectState {
    pub room: String,
    #[serde(default)]
    pub properties: BTreeSet<Property>,
    #[serde(default)]
    pub flags: BTreeSet<Flag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
}

impl ObjectState {
    pub fn new(room: impl Into<String>) -> Self {
        ObjectState { room: room.into(), properties: BTreeSet::new(), flags: BTreeSet::new(), placement: None }
    }

    pub fn with(mut self, p: Property) -> Self {
        self.properties.insert(p);
        self
    }

    pub fn flagged(mut self, f: Flag) -> Self {
        self.flags.insert(f);
        self
    }

    pub fn placed(mut self, p: Placement) -> Self {
        self.placement = Some(p);
        self
    }

    pub fn has(&self, p: Property) -> bool {
        self.properties.contains(&p)
    }

    pub fn is(&self, f: Flag) -> bool {
        self.flags.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub room: String,
    #[serde(default)]
    pub holdings: BTreeSet<String>,
    #[serde(default = "yes")]
    pub pose_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facing: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sitting: Option<String>,
    /// Set by an actuator fault; no further action can execute.
    #[serde(default)]
    pub halted: bool,
}

fn yes() -> bool {
    true
}

impl AgentState {
    pub fn in_room(room: impl Into<String>) -> Self {
        AgentState {
            room: room.into(),
            holdings: BTreeSet::new(),
            pose_ok: true,
            facing: None,
            sitting: None,
            halted: false,
        }
    }
}

/// What a sticky fault is attached to, and therefore what clears it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultBinding {
    /// Re-fires whenever the exact same action is issued again.
    Action(String),
    /// Re-fires on any action touching the object; cleared by `lookat`/`close` on it.
    Object(String),
    /// Re-fires on any non-navigation action; cleared by `walk`.
    Agent,
    /// Re-fires on any action but `lookat`, which re-reads the sensors.
    Sensors,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActiveFault {
    pub kind: ErrorKind,
    pub binding: FaultBinding,
}

/// Ground truth the simulator mutates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub rooms: BTreeSet<String>,
    pub objects: BTreeMap<String, ObjectState>,
    pub agent: AgentState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub active_faults: Vec<ActiveFault>,
}

impl WorldState {
    pub fn new<I, S>(rooms: I, agent_room: &str) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        WorldState {
            rooms: rooms.into_iter().map(Into::into).collect(),
            objects: BTreeMap::new(),
            agent: AgentState::in_room(agent_room),
            active_faults: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, obj: ObjectState) -> &mut Self {
        self.objects.insert(name.to_string(), obj);
        self
    }

    pub fn object(&self, name: &str) -> Option<&ObjectState> {
        self.objects.get(name)
    }

    pub fn is_room(&self, name: &str) -> bool {
        self.rooms.contains(name)
    }

    /// Room of a named location: the room itself, or the room holding the object.
    pub fn room_of(&self, name: &str) -> Option<&str> {
        if self.is_room(name) {
            return self.rooms.get(name).map(String::as_str);
        }
        self.objects.get(name).map(|o| o.room.as_str())
    }

    pub fn holds(&self, p: &Predicate) -> bool {
        let flag = |name: &str, f: Flag| self.objects.get(name).is_some_and(|o| o.is(f));
        match p {
            Predicate::At(x) => self.room_of(x) == Some(self.agent.room.as_str()),
            Predicate::Localized => self.agent.pose_ok,
            Predicate::Facing(x) => self.agent.facing.as_deref() == Some(x.as_str()),
            Predicate::Grabbed(x) => self.agent.holdings.contains(x),
            Predicate::Open(x) => flag(x, Flag::Open),
            Predicate::Closed(x) => flag(x, Flag::Closed),
            Predicate::SwitchedOn(x) => flag(x, Flag::On),
            Predicate::SwitchedOff(x) => flag(x, Flag::Off),
            Predicate::Cut(x) => flag(x, Flag::Cut),
            Predicate::Inside(x, c) => {
                self.objects.get(x).is_some_and(|o| o.placement == Some(Placement::Inside(c.clone())))
            }
            Predicate::On(x, s) => self.objects.get(x).is_some_and(|o| o.placement == Some(Placement::On(s.clone()))),
            Predicate::Sitting(x) => self.agent.sitting.as_deref() == Some(x.as_str()),
            Predicate::Standing => self.agent.sitting.is_none(),
        }
    }

    /// Object-level predicates currently true (agent location excluded).
    pub fn object_predicates(&self) -> BTreeSet<Predicate> {
        let mut out = BTreeSet::new();
        for (name, o) in &self.objects {
            let n = || name.clone();
            for f in &o.flags {
                let p = match f {
                    Flag::Open => Predicate::Open(n()),
                    Flag::Closed => Predicate::Closed(n()),
                    Flag::On => Predicate::SwitchedOn(n()),
                    Flag::Off => Predicate::SwitchedOff(n()),
                    Flag::Cut => Predicate::Cut(n()),
                    Flag::Grabbed => Predicate::Grabbed(n()),
                    Flag::Occluded => continue,
                };
                out.insert(p);
            }
            match &o.placement {
                Some(Placement::Inside(c)) => {
                    out.insert(Predicate::Inside(n(), c.clone()));
                }
                Some(Placement::On(s)) => {
                    out.insert(Predicate::On(n(), s.clone()));
                }
                None => {}
            }
        }
        out
    }

    /// Every predicate true in this state, including agent predicates.
    pub fn all_predicates(&self) -> BTreeSet<Predicate> {
        let mut out = self.object_predicates();
        out.insert(Predicate::At(self.agent.room.clone()));
        if self.agent.pose_ok {
            out.insert(Predicate::Localized);
        }
        if let Some(f) = &self.agent.facing {
            out.insert(Predicate::Facing(f.clone()));
        }
        match &self.agent.sitting {
            Some(s) => out.insert(Predicate::Sitting(s.clone())),
            None => out.insert(Predicate::Standing),
        };
        out
    }

    /// Checks the structural invariants; returns a description per violation.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.rooms.contains(&self.agent.room) {
            v.push(format!("agent room {} is not a room", self.agent.room));
        }
        for (name, o) in &self.objects {
            if !self.rooms.contains(&o.room) {
                v.push(format!("object {name} in unknown room {}", o.room));
            }
            if o.is(Flag::Grabbed) != self.agent.holdings.contains(name) {
                v.push(format!("object {name} grabbed flag disagrees with holdings"));
            }
            if let Some(Placement::Inside(c) | Placement::On(c)) = &o.placement {
                if !self.objects.contains_key(c) {
                    v.push(format!("object {name} placed in unknown {c}"));
                }
            }
        }
        for h in &self.agent.holdings {
            if !self.objects.contains_key(h) {
                v.push(format!("holding unknown object {h}"));
            }
        }
        v
    }

    /// Tokens describing what the agent currently perceives: its room, the
    /// objects in that room and their visible state flags.
    pub fn observation_tokens(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        out.insert(self.agent.room.clone());
        for (name, o) in &self.objects {
            if o.room == self.agent.room {
                out.insert(name.clone());
                for f in &o.flags {
                    out.insert(f.as_str().to_string());
                }
            }
        }
        out
    }
}

/// A symbolic world predicate, written `name(arg,...)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Predicate {
    At(String),
    Localized,
    Facing(String),
    Grabbed(String),
    Open(String),
    Closed(String),
    SwitchedOn(String),
    SwitchedOff(String),
    Cut(String),
    Inside(String, String),
    On(String, String),
    Sitting(String),
    Standing,
}

impl Predicate {
    pub fn name(&self) -> &'static str {
        match self {
            Predicate::At(_) => "at",
            Predicate::Localized => "localized",
            Predicate::Facing(_) => "facing",
            Predicate::Grabbed(_) => "grabbed",
            Predicate::Open(_) => "open",
            Predicate::Closed(_) => "closed",
            Predicate::SwitchedOn(_) => "switched_on",
            Predicate::SwitchedOff(_) => "switched_off",
            Predicate::Cut(_) => "cut",
            Predicate::Inside(..) => "inside",
            Predicate::On(..) => "on",
            Predicate::Sitting(_) => "sitting",
            Predicate::Standing => "standing",
        }
    }

    pub fn args(&self) -> Vec<&str> {
        match self {
            Predicate::Localized | Predicate::Standing => Vec::new(),
            Predicate::At(a)
            | Predicate::Facing(a)
            | Predicate::Grabbed(a)
            | Predicate::Open(a)
            | Predicate::Closed(a)
            | Predicate::SwitchedOn(a)
            | Predicate::SwitchedOff(a)
            | Predicate::Cut(a)
            | Predicate::Sitting(a) => alloc::vec![a.as_str()],
            Predicate::Inside(a, b) | Predicate::On(a, b) => alloc::vec![a.as_str(), b.as_str()],
        }
    }

    /// Name and arguments as separate tokens.
    pub fn tokens(&self) -> impl Iterator<Item = String> + '_ {
        core::iter::once(self.name().to_string()).chain(self.args().into_iter().map(String::from))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args = self.args();
        if args.is_empty() {
            f.write_str(self.name())
        } else {
            write!(f, "{}({})", self.name(), args.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse predicate `{0}`")]
pub struct PredicateParseError(pub String);

impl FromStr for Predicate {
    type Err = PredicateParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PredicateParseError(s.to_string());
        let s = s.trim();
        let (name, args): (&str, Vec<String>) = match s.find('(') {
            None => (s, Vec::new()),
            Some(i) => {
                let inner = s[i + 1..].strip_suffix(')').ok_or_else(err)?;
                let args = inner.split(',').map(|a| a.trim().to_string()).filter(|a| !a.is_empty()).collect();
                (s[..i].trim(), args)
            }
        };
        let one = |ctor: fn(String) -> Predicate| match args.as_slice() {
            [a] => Ok(ctor(a.clone())),
            _ => Err(err()),
        };
        let two = |ctor: fn(String, String) -> Predicate| match args.as_slice() {
            [a, b] => Ok(ctor(a.clone(), b.clone())),
            _ => Err(err()),
        };
        match name {
            "at" => one(Predicate::At),
            "facing" => one(Predicate::Facing),
            "grabbed" | "holding" => one(Predicate::Grabbed),
            "open" => one(Predicate::Open),
            "closed" => one(Predicate::Closed),
            "switched_on" | "on_switch" => one(Predicate::SwitchedOn),
            "switched_off" => one(Predicate::SwitchedOff),
            "cut" => one(Predicate::Cut),
            "sitting" => one(Predicate::Sitting),
            "inside" => two(Predicate::Inside),
            "on" => two(Predicate::On),
            "localized" if args.is_empty() => Ok(Predicate::Localized),
            "standing" if args.is_empty() => Ok(Predicate::Standing),
            _ => Err(err()),
        }
    }
}

impl Serialize for Predicate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicate_text_round_trip() {
        for s in ["inside(mug,dishwasher)", "open(fridge)", "localized", "at(kitchen)", "standing"] {
            let p: Predicate = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("inside(mug)".parse::<Predicate>().is_err());
        assert!("fly(bird)".parse::<Predicate>().is_err());
    }

    #[test]
    fn at_accepts_rooms_and_objects() {
        let mut w = WorldState::new(["kitchen", "bedroom"], "kitchen");
        w.add("fridge", ObjectState::new("kitchen"));
        assert!(w.holds(&Predicate::At("kitchen".into())));
        assert!(w.holds(&Predicate::At("fridge".into())));
        assert!(!w.holds(&Predicate::At("bedroom".into())));
    }
}
