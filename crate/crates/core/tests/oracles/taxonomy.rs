//! The error classification table, transcribed row by row.

use hecg_core::error_engine::{Recoverability, Severity};
use hecg_core::ErrorKind;

pub struct Row {
    pub kind: ErrorKind,
    pub name: &'static str,
    pub severity: Severity,
    pub recoverable: Recoverability,
    pub transition_needed: bool,
}

const fn row(
    kind: ErrorKind,
    name: &'static str,
    severity: Severity,
    recoverable: Recoverability,
    transition_needed: bool,
) -> Row {
    Row { kind, name, severity, recoverable, transition_needed }
}

pub const ROWS: [Row; 10] = {
    use ErrorKind::*;
    use Recoverability::{No, Partial, Yes};
    use Severity::*;
    [
        row(ActionNameMismatch, "Action-Name-Mismatch-Error", High, Yes, true),
        row(ScriptParsing, "Script-Parsing-Error", High, No, false),
        row(ActionExecution, "Action-Execution-Error", Medium, Partial, true),
        row(Cascading, "Cascading-Execution-Failure", Low, No, true),
        row(SensorFailure, "Sensor-Failure-Error", Medium, Partial, true),
        row(Collision, "Collision-Detected-Error", High, Yes, true),
        row(Timeout, "Timeout-Error", Medium, Partial, true),
        row(HardwareFault, "Hardware-Fault-Error", Critical, No, false),
        row(PerceptionMismatch, "Perception-Mismatch-Error", Medium, Yes, true),
        row(AgentPositioning, "Agent-Positioning-Error", Medium, Yes, true),
    ]
};

/// Injects each fault kind through the simulator and classifies it back.
/// Returns the number of rows that round-trip exactly.
pub fn round_trip() -> Result<usize, String> {
    use hecg_core::env::{parse_script, step, FaultEntry, FaultSchedule, ObjectState, Property, WorldState};
    use hecg_core::error_engine::classify_with;

    let mut w = WorldState::new(["kitchen"], "kitchen");
    w.add("mug", ObjectState::new("kitchen").with(Property::Grabbable));
    let grab = parse_script("[grab] <mug>").unwrap();
    let mut ok = 0;
    for row in &ROWS {
        let faults = FaultSchedule::new(vec![FaultEntry { step: 0, kind: row.kind, sticky: false }]);
        let out = step(&w, &grab, &faults, 0, 1);
        let cls = classify_with(Some(&out), None, false).map_err(|e| format!("{}: {e}", row.name))?;
        let same = cls.kind == row.kind
            && cls.kind.name() == row.name
            && cls.severity == row.severity
            && cls.recoverable == row.recoverable
            && cls.transition_needed == row.transition_needed;
        if !same {
            return Err(format!("{}: classified as {:?}", row.name, cls));
        }
        ok += 1;
    }
    Ok(ok)
}
