//! Execution error magnitude, the ten-type error taxonomy and the mapping
//! from a classified failure to a correction level.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::env::{Predicate, ScriptError, StepOutcome, WorldState};
use crate::graph::TaskNode;
use crate::traversal::EpisodeHistory;

/// Normalized predicate mismatch in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ErrorValue(f64);

impl ErrorValue {
    pub const ZERO: ErrorValue = ErrorValue(0.0);

    /// Clamps into `[0, 1]`; NaN becomes 0.
    pub fn new(v: f64) -> Self {
        ErrorValue(crate::math::clamp01(v))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Fraction of `expected` predicates that do not hold in `observed`
/// (0 when nothing is expected).
pub fn compute_error(observed: &WorldState, expected: &BTreeSet<Predicate>) -> ErrorValue {
    if expected.is_empty() {
        return ErrorValue::ZERO;
    }
    let missing = expected.iter().filter(|p| !observed.holds(p)).count();
    ErrorValue::new(missing as f64 / expected.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    #[serde(rename = "Action-Name-Mismatch-Error")]
    ActionNameMismatch,
    #[serde(rename = "Script-Parsing-Error")]
    ScriptParsing,
    #[serde(rename = "Action-Execution-Error")]
    ActionExecution,
    #[serde(rename = "Cascading-Execution-Failure")]
    Cascading,
    #[serde(rename = "Sensor-Failure-Error")]
    SensorFailure,
    #[serde(rename = "Collision-Detected-Error")]
    Collision,
    #[serde(rename = "Timeout-Error")]
    Timeout,
    #[serde(rename = "Hardware-Fault-Error")]
    HardwareFault,
    #[serde(rename = "Perception-Mismatch-Error")]
    PerceptionMismatch,
    #[serde(rename = "Agent-Positioning-Error")]
    AgentPositioning,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 10] = [
        ErrorKind::ActionNameMismatch,
        ErrorKind::ScriptParsing,
        ErrorKind::ActionExecution,
        ErrorKind::Cascading,
        ErrorKind::SensorFailure,
        ErrorKind::Collision,
        ErrorKind::Timeout,
        ErrorKind::HardwareFault,
        ErrorKind::PerceptionMismatch,
        ErrorKind::AgentPositioning,
    ];

    pub fn name(self) -> &'static str {
        self.row().name
    }

    pub fn from_name(s: &str) -> Option<ErrorKind> {
        ErrorKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn row(self) -> &'static TaxonomyRow {
        &TAXONOMY[self as usize]
    }

    pub fn family(self) -> ErrorFamily {
        match self {
            ErrorKind::ActionExecution | ErrorKind::SensorFailure | ErrorKind::PerceptionMismatch => {
                ErrorFamily::Grounding
            }
            ErrorKind::Cascading | ErrorKind::AgentPositioning => ErrorFamily::Precondition,
            ErrorKind::ActionNameMismatch | ErrorKind::ScriptParsing => ErrorFamily::Affordance,
            ErrorKind::Collision | ErrorKind::Timeout | ErrorKind::HardwareFault => ErrorFamily::Execution,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coarse grouping of error kinds used in error-ratio reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorFamily {
    Grounding,
    Precondition,
    Affordance,
    Execution,
}

impl ErrorFamily {
    pub const ALL: [ErrorFamily; 4] =
        [ErrorFamily::Grounding, ErrorFamily::Precondition, ErrorFamily::Affordance, ErrorFamily::Execution];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorFamily::Grounding => "grounding",
            ErrorFamily::Precondition => "precondition",
            ErrorFamily::Affordance => "affordance",
            ErrorFamily::Execution => "execution",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Recoverability {
    Yes,
    #[serde(rename = "Partially Yes")]
    Partial,
    No,
}

/// One row of the error taxonomy.
#[derive(Debug, Clone, Serialize)]
pub struct TaxonomyRow {
    pub name: &'static str,
    pub severity: Severity,
    pub typical_actions: &'static str,
    pub description: &'static str,
    pub recoverable: Recoverability,
    pub strategy: &'static str,
    pub transition_needed: bool,
}

/// The error taxonomy, indexed by `ErrorKind as usize`.
pub static TAXONOMY: [TaxonomyRow; 10] = [
    TaxonomyRow {
        name: "Action-Name-Mismatch-Error",
        severity: Severity::High,
        typical_actions: "[walk_to], [look_at]",
        description: "Action name not found in supported actions.",
        recoverable: Recoverability::Yes,
        strategy: "<walk/walktowards>, <lookat>",
        transition_needed: true,
    },
    TaxonomyRow {
        name: "Script-Parsing-Error",
        severity: Severity::High,
        typical_actions: "[putin] <obj>",
        description: "Action lacks necessary parameters, resulting in a parsing failure.",
        recoverable: Recoverability::No,
        strategy: "[putin] <obj1> <obj2>",
        transition_needed: false,
    },
    TaxonomyRow {
        name: "Action-Execution-Error",
        severity: Severity::Medium,
        typical_actions: "[open] <microwave>",
        description: "Action failed because target object was not found, not reachable, or not visible.",
        recoverable: Recoverability::Partial,
        strategy: "[switchon] <microwave>",
        transition_needed: true,
    },
    TaxonomyRow {
        name: "Cascading-Execution-Failure",
        severity: Severity::Low,
        typical_actions: "[putin] <bananas> <fridge>",
        description: "A cascading failure caused by previous unrecoverable action failures.",
        recoverable: Recoverability::No,
        strategy: "[open] <fridge> [putin] <bananas> <fridge>",
        transition_needed: true,
    },
    TaxonomyRow {
        name: "Sensor-Failure-Error",
        severity: Severity::Medium,
        typical_actions: "--",
        description: "Sensors failed to detect objects or environment state correctly.",
        recoverable: Recoverability::Partial,
        strategy: "Reinitialize sensor pipeline; use redundant sensor data for fusion.",
        transition_needed: true,
    },
    TaxonomyRow {
        name: "Collision-Detected-Error",
        severity: Severity::High,
        typical_actions: "[move], [push]",
        description: "Robot collided with obstacle or object during execution.",
        recoverable: Recoverability::Yes,
        strategy: "Drop Action",
        transition_needed: true,
    },
    TaxonomyRow {
        name: "Timeout-Error",
        severity: Severity::Medium,
        typical_actions: "--",
        description: "Action did not complete within expected time limits.",
        recoverable: Recoverability::Partial,
        strategy: "Retry Action",
        transition_needed: true,
    },
    TaxonomyRow {
        name: "Hardware-Fault-Error",
        severity: Severity::Critical,
        typical_actions: "--",
        description: "Physical actuator or gripper malfunction prevents action execution.",
        recoverable: Recoverability::No,
        strategy: "Emergency stop; notify human operator.",
        transition_needed: false,
    },
    TaxonomyRow {
        name: "Perception-Mismatch-Error",
        severity: Severity::Medium,
        typical_actions: "[open] <fridge> (fridge already opened)",
        description: "Perceived object pose differs from expected pose; causes partial failure.",
        recoverable: Recoverability::Yes,
        strategy: "[close] <fridge> [open] <fridge>",
        transition_needed: true,
    },
    TaxonomyRow {
        name: "Agent-Positioning-Error",
        severity: Severity::Medium,
        typical_actions: "[lookat] <kitchentable>",
        description: "Agent is not correctly localized relative to target object or navigation point, leading to approach failure.",
        recoverable: Recoverability::Yes,
        strategy: "<walk> kitchen, <lookat> <kitchentable>",
        transition_needed: true,
    },
];

/// A classified failure: the taxonomy row fields for one error kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorClass {
    pub kind: ErrorKind,
    pub severity: Severity,
    pub recoverable: Recoverability,
    pub transition_needed: bool,
    pub strategy: String,
}

impl ErrorClass {
    pub fn of(kind: ErrorKind) -> Self {
        let row = kind.row();
        ErrorClass {
            kind,
            severity: row.severity,
            recoverable: row.recoverable,
            transition_needed: row.transition_needed,
            strategy: row.strategy.to_string(),
        }
    }

    /// True iff every field agrees with the taxonomy row for `kind`.
    pub fn matches_row(&self) -> bool {
        *self == ErrorClass::of(self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClassifyError {
    #[error("no failure present: the step succeeded and no parse error was given")]
    NoFailurePresent,
}

/// Classifies a failed step.
///
/// Decision order: parse errors, then a halted agent, then an unrecovered
/// earlier failure (cascade), then the injected or diagnosed fault, and
/// finally a generic execution error.
pub fn classify(
    outcome: Option<&StepOutcome>,
    parse_error: Option<&ScriptError>,
    history: &EpisodeHistory,
) -> Result<ErrorClass, ClassifyError> {
    classify_with(outcome, parse_error, history.has_unrecovered_failure())
}

/// [`classify`] with the cascade condition supplied directly.
pub fn classify_with(
    outcome: Option<&StepOutcome>,
    parse_error: Option<&ScriptError>,
    prior_unrecovered: bool,
) -> Result<ErrorClass, ClassifyError> {
    if let Some(e) = parse_error {
        let kind = match e {
            ScriptError::UnknownVerb { .. } => ErrorKind::ActionNameMismatch,
            _ => ErrorKind::ScriptParsing,
        };
        return Ok(ErrorClass::of(kind));
    }
    let outcome = match outcome {
        Some(o) if !o.succeeded || o.injected.is_some() => o,
        _ => return Err(ClassifyError::NoFailurePresent),
    };
    if outcome.world.agent.halted {
        return Ok(ErrorClass::of(ErrorKind::HardwareFault));
    }
    if prior_unrecovered {
        return Ok(ErrorClass::of(ErrorKind::Cascading));
    }
    let kind = outcome.injected.or_else(|| diagnose(&outcome.env_message)).unwrap_or(ErrorKind::ActionExecution);
    Ok(ErrorClass::of(kind))
}

/// Keyword diagnosis of a simulator message.
pub fn diagnose(message: &str) -> Option<ErrorKind> {
    let m = message.to_ascii_lowercase();
    let has = |k: &str| m.contains(k);
    if has("actuator") || has("emergency") {
        Some(ErrorKind::HardwareFault)
    } else if has("collid") || has("collision") {
        Some(ErrorKind::Collision)
    } else if has("timed out") || has("timeout") {
        Some(ErrorKind::Timeout)
    } else if has("sensor") {
        Some(ErrorKind::SensorFailure)
    } else if has("already") || has("perceived") {
        Some(ErrorKind::PerceptionMismatch)
    } else if has("localiz") || has("positioning") {
        Some(ErrorKind::AgentPositioning)
    } else if has("earlier failure") {
        Some(ErrorKind::Cascading)
    } else if has("not found in supported actions") {
        Some(ErrorKind::ActionNameMismatch)
    } else if has("lacks necessary parameters") {
        Some(ErrorKind::ScriptParsing)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CorrectionLevel {
    L1,
    L2,
    L3,
    L4,
}

impl CorrectionLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionLevel::L1 => "L1",
            CorrectionLevel::L2 => "L2",
            CorrectionLevel::L3 => "L3",
            CorrectionLevel::L4 => "L4",
        }
    }
}

impl fmt::Display for CorrectionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Remaining budgets and the last level used for the failing node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LevelContext {
    pub l1_remaining: u32,
    pub options_remaining: usize,
    pub replans_remaining: u32,
    pub previous: Option<CorrectionLevel>,
}

/// Lowest correction level appropriate for a failure.
///
/// The result never drops below `ctx.previous`, so repeated failures on one
/// node escalate monotonically.
pub fn level_for(cls: &ErrorClass, error: ErrorValue, node: &TaskNode, ctx: &LevelContext) -> CorrectionLevel {
    use CorrectionLevel::*;
    let l1 = ctx.l1_remaining > 0 && node.local_rules.iter().any(|r| r.triggers(cls, error));
    let l2 = ctx.options_remaining > 0;
    let level = if cls.severity == Severity::Critical {
        L4
    } else {
        match cls.recoverable {
            Recoverability::No => L3,
            Recoverability::Partial if l2 => L2,
            Recoverability::Partial if l1 => L1,
            Recoverability::Yes if l1 && error.value() <= node.max_threshold => L1,
            Recoverability::Yes if l2 => L2,
            _ => L3,
        }
    };
    let mut level = match ctx.previous {
        Some(p) if p > level => p,
        _ => level,
    };
    if level == L2 && !l2 {
        level = L3;
    }
    if level == L3 && ctx.replans_remaining == 0 {
        level = L4;
    }
    level
}
