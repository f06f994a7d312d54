//! Helpers shared by the `hecg` integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hecg_core::env::parse_script;
use hecg_core::metrics::EpisodeSummary;
use hecg_core::WorldState;
use serde_json::Value;

#[path = "../../../core/tests/oracles/mod.rs"]
pub mod oracles;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_hecg"))
}

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// The first `n` shipped scenario files, sorted by name.
pub fn scenario_files(n: usize) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(scenario_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v.truncate(n);
    v
}

pub struct LoggedEpisode {
    pub summary: EpisodeSummary,
    pub initial: WorldState,
    pub final_: WorldState,
}

fn from<T: serde::de::DeserializeOwned>(v: &Value) -> T {
    serde_json::from_value(v.clone()).unwrap()
}

/// Reads a merged trajectory log field by field, without the library's
/// log reader or summary constructor.
pub fn episodes_from_log(path: &Path) -> Vec<LoggedEpisode> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut out = Vec::new();
    let mut steps: Vec<Value> = Vec::new();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        if let Some(ep) = v.get("episode") {
            let h = &ep["history"];
            let arr = |k: &str| h[k].as_array().cloned().unwrap_or_default();
            let main_actions = steps
                .iter()
                .filter(|s| s["phase"] == "primary" && s["edge_kind"] == "main")
                .map(|s| parse_script(s["action"].as_str().unwrap()).unwrap())
                .collect();
            let summary = EpisodeSummary {
                scenario: ep["scenario"].as_str().unwrap().to_string(),
                seed: ep["seed"].as_u64().unwrap(),
                status: from(&ep["status"]),
                steps: ep["steps"].as_u64().unwrap() as u32,
                goals_total: ep["goals_total"].as_u64().unwrap() as usize,
                goals_satisfied: ep["goals_satisfied"].as_u64().unwrap() as usize,
                errors: arr("failures").iter().map(|f| from(&f["kind"])).collect(),
                replans: arr("replans").len(),
                correction_substeps: steps.iter().filter(|s| s["phase"] == "correction").count(),
                option_switches: arr("decisions").iter().filter(|d| d["level"] == "L2").count(),
                main_actions,
                decisions: arr("decisions").iter().map(|d| (from(&d["regime"]), from(&d["chosen"]))).collect(),
            };
            out.push(LoggedEpisode { summary, initial: from(&ep["initial_world"]), final_: from(&ep["final_world"]) });
            steps.clear();
        } else if v.get("dossier").is_none() {
            steps.push(v);
        }
    }
    assert!(steps.is_empty(), "trailing step records in {}", path.display());
    out
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
