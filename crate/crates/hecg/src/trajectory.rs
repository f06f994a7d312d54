//! JSON Lines trajectory logs and trajectory-memory files.
//!
//! An episode block is one line per step record
//! (`{step, phase, node, action, edge_kind, error_value, error_type, level, outcome}`),
//! with an `L4` dossier record placed before the step record it preceded
//! (or at the end) for each escalation, then one closing
//! `{"episode": …}` line holding the rest of the result. A merged log is the
//! concatenation of episode blocks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hecg_core::ccgr::{TrajectoryGraph, FORMAT_VERSION};
use hecg_core::correction::{FailureRecord, OperatorDecision};
use hecg_core::traversal::{EpisodeResult, StepRecord};
use hecg_core::CorrectionLevel;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{path}:{line}: {reason}")]
    Structure { path: PathBuf, line: usize, reason: String },
    #[error("{path}: memory format version {found}, expected {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io { path: path.into(), source }
}

/// One L4 hand-off; `step` counts the step records logged before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DossierRecord {
    pub step: u32,
    pub level: CorrectionLevel,
    pub decision: OperatorDecision,
    pub dossier: Vec<FailureRecord>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeLine {
    episode: EpisodeResult,
}

/// Writes one episode block.
pub fn write_episode(w: &mut impl Write, r: &EpisodeResult) -> std::io::Result<()> {
    let mut escalations = r.history.escalations.iter().peekable();
    for i in 0..=r.history.records.len() {
        while let Some(esc) = escalations.next_if(|e| e.step as usize == i) {
            let d = DossierRecord {
                step: esc.step,
                level: CorrectionLevel::L4,
                decision: esc.decision,
                dossier: esc.dossier.clone(),
            };
            serde_json::to_writer(&mut *w, &d)?;
            w.write_all(b"\n")?;
        }
        if let Some(rec) = r.history.records.get(i) {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")?;
        }
    }
    let mut rest = r.clone();
    rest.history.records.clear();
    serde_json::to_writer(&mut *w, &EpisodeLine { episode: rest })?;
    w.write_all(b"\n")
}

pub fn write_episode_file(path: &Path, r: &EpisodeResult) -> Result<(), LogError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    write_episode(&mut w, r).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Parses a log holding any number of episode blocks.
pub fn read_log(path: &Path) -> Result<Vec<EpisodeResult>, LogError> {
    let f = File::open(path).map_err(io_err(path))?;
    parse_log(BufReader::new(f), path)
}

pub fn parse_log(r: impl BufRead, path: &Path) -> Result<Vec<EpisodeResult>, LogError> {
    let mut out = Vec::new();
    let mut pending: Vec<StepRecord> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |source| LogError::Parse { path: path.into(), line: i + 1, source };
        let v: serde_json::Value = serde_json::from_str(&line).map_err(parse_err)?;
        if v.get("episode").is_some() {
            let mut ep = serde_json::from_value::<EpisodeLine>(v).map_err(parse_err)?.episode;
            ep.history.records = std::mem::take(&mut pending);
            out.push(ep);
        } else if v.get("dossier").is_some() {
            serde_json::from_value::<DossierRecord>(v).map_err(parse_err)?;
        } else {
            pending.push(serde_json::from_value(v).map_err(parse_err)?);
        }
    }
    if !pending.is_empty() {
        return Err(LogError::Structure {
            path: path.into(),
            line: 0,
            reason: format!("{} step records after the last episode line", pending.len()),
        });
    }
    Ok(out)
}

/// Concatenates episode files into one merged log, in the given order.
pub fn merge(parts: &[PathBuf], dest: &Path) -> Result<(), LogError> {
    let mut w = BufWriter::new(File::create(dest).map_err(io_err(dest))?);
    for p in parts {
        let mut f = File::open(p).map_err(io_err(p))?;
        std::io::copy(&mut f, &mut w).map_err(io_err(dest))?;
    }
    w.flush().map_err(io_err(dest))
}

pub fn load_memory(path: &Path) -> Result<TrajectoryGraph, LogError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let m: TrajectoryGraph =
        serde_json::from_str(&text).map_err(|source| LogError::Parse { path: path.into(), line: 1, source })?;
    if m.version != FORMAT_VERSION {
        return Err(LogError::Version { path: path.into(), found: m.version, expected: FORMAT_VERSION });
    }
    Ok(m)
}

pub fn save_memory(path: &Path, m: &TrajectoryGraph) -> Result<(), LogError> {
    let text = serde_json::to_string_pretty(m).expect("memory serializes");
    std::fs::write(path, text).map_err(io_err(path))
}
