use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The supported action verbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Walk,
    WalkTowards,
    LookAt,
    Grab,
    Open,
    Close,
    PutIn,
    PutBack,
    SwitchOn,
    SwitchOff,
    Push,
    Move,
    Cut,
    Sit,
    StandUp,
}

impl Verb {
    pub const ALL: [Verb; 15] = [
        Verb::Walk,
        Verb::WalkTowards,
        Verb::LookAt,
        Verb::Grab,
        Verb::Open,
        Verb::Close,
        Verb::PutIn,
        Verb::PutBack,
        Verb::SwitchOn,
        Verb::SwitchOff,
        Verb::Push,
        Verb::Move,
        Verb::Cut,
        Verb::Sit,
        Verb::StandUp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Walk => "walk",
            Verb::WalkTowards => "walktowards",
            Verb::LookAt => "lookat",
            Verb::Grab => "grab",
            Verb::Open => "open",
            Verb::Close => "close",
            Verb::PutIn => "putin",
            Verb::PutBack => "putback",
            Verb::SwitchOn => "switchon",
            Verb::SwitchOff => "switchoff",
            Verb::Push => "push",
            Verb::Move => "move",
            Verb::Cut => "cut",
            Verb::Sit => "sit",
            Verb::StandUp => "standup",
        }
    }

    pub fn from_name(s: &str) -> Option<Verb> {
        Verb::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            Verb::PutIn | Verb::PutBack => 2,
            Verb::StandUp => 0,
            _ => 1,
        }
    }

    /// Navigation verbs move the agent's base rather than manipulate objects.
    pub fn is_navigation(self) -> bool {
        matches!(self, Verb::Walk | Verb::WalkTowards | Verb::Move)
    }

    /// Semantic tags a scorer can match against observations.
    pub fn context_tags(self) -> &'static [&'static str] {
        match self {
            Verb::Push => &["reposition", "occluded"],
            Verb::Move | Verb::WalkTowards => &["reposition"],
            _ => &[],
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One `<name> (id)` argument.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArgToken {
    pub name: String,
    pub id: Option<u32>,
}

impl ArgToken {
    pub fn new(name: impl Into<String>) -> Self {
        ArgToken { name: name.into(), id: None }
    }
}

impl fmt::Display for ArgToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.id {
            Some(id) => write!(f, "{}#{}", self.name, id),
            None => f.write_str(&self.name),
        }
    }
}

/// A parsed script line such as `[putin] <bananas> (1) <fridge> (2)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionScript {
    pub verb: Verb,
    pub args: Vec<ArgToken>,
    pub raw: String,
}

impl ActionScript {
    pub fn new(verb: Verb, args: &[&str]) -> Self {
        let args: Vec<ArgToken> = args.iter().map(|a| ArgToken::new(*a)).collect();
        let raw = render(verb, &args);
        ActionScript { verb, args, raw }
    }

    pub fn arg(&self, i: usize) -> Option<&str> {
        self.args.get(i).map(|a| a.name.as_str())
    }

    /// Primary target: the first argument, if any.
    pub fn target(&self) -> Option<&str> {
        self.arg(0)
    }

    /// Canonical `verb(arg,...)` key, ignoring instance ids and raw spacing.
    pub fn key(&self) -> String {
        let names: Vec<&str> = self.args.iter().map(|a| a.name.as_str()).collect();
        format!("{}({})", self.verb, names.join(","))
    }

    /// Canonical script text.
    pub fn canonical(&self) -> String {
        render(self.verb, &self.args)
    }

    /// Tokens for semantic matching: verb plus argument names.
    pub fn tokens(&self) -> Vec<String> {
        let mut t = vec![self.verb.as_str().to_string()];
        t.extend(self.args.iter().map(|a| a.name.clone()));
        t
    }
}

fn render(verb: Verb, args: &[ArgToken]) -> String {
    let mut s = format!("[{verb}]");
    for a in args {
        s.push_str(" <");
        s.push_str(&a.name);
        s.push('>');
        if let Some(id) = a.id {
            s.push_str(&format!(" ({id})"));
        }
    }
    s
}

impl fmt::Display for ActionScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for ActionScript {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for ActionScript {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_script(&s).map_err(serde::de::Error::custom)
    }
}

impl FromStr for ActionScript {
    type Err = ScriptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_script(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScriptError {
    #[error("malformed script `{line}`: {reason}")]
    ParseFailure { line: String, reason: &'static str },
    #[error("[{verb}] lacks necessary parameters (expected {expected}, got {got})")]
    MissingParameter { verb: Verb, expected: usize, got: usize },
    #[error("[{verb}] takes {expected} parameter(s), got {got}")]
    ExtraParameter { verb: Verb, expected: usize, got: usize },
    #[error("action name [{verb}] not found in supported actions")]
    UnknownVerb { verb: String, suggestion: Option<Verb> },
}

/// Parses one script line.
///
/// Grammar: `[verb] <arg> (id)? (<arg2> (id)?)?`. Verb names are checked
/// against [`Verb::ALL`]; arity is checked per verb.
pub fn parse_script(text: &str) -> Result<ActionScript, ScriptError> {
    let line = text.trim();
    let fail = |reason| ScriptError::ParseFailure { line: line.to_string(), reason };
    let rest = line.strip_prefix('[').ok_or_else(|| fail("expected `[verb]`"))?;
    let close = rest.find(']').ok_or_else(|| fail("unclosed `[`"))?;
    let verb_name = rest[..close].trim();
    if verb_name.is_empty() {
        return Err(fail("empty verb"));
    }
    let mut rest = rest[close + 1..].trim_start();

    let mut args: Vec<ArgToken> = Vec::new();
    while !rest.is_empty() {
        let body = rest.strip_prefix('<').ok_or_else(|| fail("expected `<arg>`"))?;
        let end = body.find('>').ok_or_else(|| fail("unclosed `<`"))?;
        let name = body[..end].trim();
        if name.is_empty() || name.contains(['<', '[', ']', '(', ')']) {
            return Err(fail("bad argument name"));
        }
        rest = body[end + 1..].trim_start();
        let mut id = None;
        if let Some(paren) = rest.strip_prefix('(') {
            let end = paren.find(')').ok_or_else(|| fail("unclosed `(`"))?;
            let n = paren[..end].trim().parse::<u32>().map_err(|_| fail("bad instance id"))?;
            id = Some(n);
            rest = paren[end + 1..].trim_start();
        }
        args.push(ArgToken { name: name.to_string(), id });
        if args.len() > 2 {
            return Err(fail("more than two arguments"));
        }
    }

    let verb = match Verb::from_name(verb_name) {
        Some(v) => v,
        None => {
            return Err(ScriptError::UnknownVerb { verb: verb_name.to_string(), suggestion: suggest_verb(verb_name) })
        }
    };
    let expected = verb.arity();
    if args.len() < expected {
        return Err(ScriptError::MissingParameter { verb, expected, got: args.len() });
    }
    if args.len() > expected {
        return Err(ScriptError::ExtraParameter { verb, expected, got: args.len() });
    }
    Ok(ActionScript { verb, args, raw: line.to_string() })
}

/// Closest supported verb for an unknown name: exact match after dropping
/// separators, otherwise the smallest edit distance (at most 3).
pub fn suggest_verb(name: &str) -> Option<Verb> {
    let folded: String = name.chars().filter(|c| !matches!(c, '_' | '-' | ' ')).flat_map(char::to_lowercase).collect();
    if let Some(v) = Verb::from_name(&folded) {
        return Some(v);
    }
    Verb::ALL
        .into_iter()
        .map(|v| (edit_distance(&folded, v.as_str()), v))
        .filter(|(d, _)| *d <= 3)
        .min_by_key(|(d, _)| *d)
        .map(|(_, v)| v)
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}
