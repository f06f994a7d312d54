//! Experiment commands: `run`, `ablate`, `sweep`, `report` and `validate`.
//!
//! A run directory holds `manifest.json`, `scenarios.json`, one JSON Lines
//! log per (scenario, seed) under `logs/`, the merged `trajectories.jsonl`,
//! and the report as `report.json`, `report.txt`, `report.csv` and the
//! regime grid `regimes.csv`. `ablate` and `sweep` write one run directory
//! per variant or scale plus a comparison table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use hecg_core::ccgr::TrajectoryGraph;
use hecg_core::correction::{AutoAbort, Operator};
use hecg_core::graph::ThresholdConfig;
use hecg_core::math::mix_seed;
use hecg_core::metrics::{build_report, MetricReport, TaskInfo};
use hecg_core::planner::{Planner, SemanticScorer, StubPlanner, StubScorer};
use hecg_core::scenario::Scenario;
use hecg_core::suite::fault_suite;
use hecg_core::traversal::{run_episode_seeded, EpisodeConfig, EpisodeError, EpisodeResult, EpisodeStatus};
use hecg_core::{EdgeKind, PolicyCoefficients, Variant};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Backend, ConfigError, ExperimentConfig};
use crate::llm::{ChatClient, Fallback, HttpPlanner, HttpScorer, LlmError};
use crate::operator;
use crate::report::{self, AblationRow, SweepRow};
use crate::trajectory::{self, LogError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_EPISODE_FAILURES: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario path {0} does not exist")]
    MissingScenario(PathBuf),
    #[error("scenario {path}: {reason}")]
    Scenario { path: String, reason: String },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        EXIT_USAGE
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.into(), source }
}

/// Command-line switches that are not part of the experiment config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; defaults to the available parallelism.
    pub jobs: Option<usize>,
    /// Answer with the stubs when an LLM backend fails.
    pub fallback_stub: bool,
    /// Ask on the terminal at L4 instead of aborting; runs sequentially.
    pub interactive: bool,
}

pub struct Backends {
    pub planner: Box<dyn Planner>,
    pub scorer: Box<dyn SemanticScorer>,
    pub planner_name: String,
    pub scorer_name: String,
}

impl Backends {
    pub fn stub() -> Self {
        Backends {
            planner: Box::new(StubPlanner),
            scorer: Box::new(StubScorer),
            planner_name: "stub".into(),
            scorer_name: "stub".into(),
        }
    }
}

pub fn backends(cfg: &ExperimentConfig, fallback: bool) -> Result<Backends, HarnessError> {
    let mut b = Backends::stub();
    if cfg.planner == Backend::Stub && cfg.scorer == Backend::Stub {
        return Ok(b);
    }
    let http = cfg.llm.clone().ok_or_else(|| ConfigError::Invalid("missing `llm` section".into()))?;
    let name = format!("http:{}{}", http.model, if fallback { "+stub" } else { "" });
    let client = Arc::new(ChatClient::new(http)?);
    if cfg.planner == Backend::Http {
        let p = HttpPlanner::new(client.clone())?;
        b.planner = if fallback { Box::new(Fallback(p)) } else { Box::new(p) };
        b.planner_name = name.clone();
    }
    if cfg.scorer == Backend::Http {
        let s = HttpScorer::new(client)?;
        b.scorer = if fallback { Box::new(Fallback(s)) } else { Box::new(s) };
        b.scorer_name = name;
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub name: String,
    pub source: String,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub entry: ScenarioEntry,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn loaded(scenario: Scenario, source: String) -> LoadedScenario {
    let sha256 = digest(&serde_json::to_vec(&scenario).expect("scenario serializes"));
    LoadedScenario { entry: ScenarioEntry { name: scenario.name.clone(), source, sha256 }, scenario }
}

pub fn read_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Scenario { path: path.display().to_string(), reason: e.to_string() })
}

/// The config's scenarios in order; directories contribute their `*.json`
/// files sorted by name. No paths means the built-in suite.
pub fn load_scenarios(cfg: &ExperimentConfig) -> Result<Vec<LoadedScenario>, HarnessError> {
    if cfg.scenarios.is_empty() {
        return Ok(fault_suite().into_iter().map(|s| loaded(s, "builtin".into())).collect());
    }
    let mut files = Vec::new();
    for p in &cfg.scenarios {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(HarnessError::MissingScenario(p.clone()));
        }
    }
    let mut out: Vec<LoadedScenario> = Vec::new();
    for f in files {
        let s = read_scenario(&f)?;
        if out.iter().any(|o| o.scenario.name == s.name) {
            return Err(HarnessError::Scenario {
                path: f.display().to_string(),
                reason: format!("duplicate name {}", s.name),
            });
        }
        out.push(loaded(s, f.display().to_string()));
    }
    Ok(out)
}

pub fn task_infos<'a>(scenarios: impl IntoIterator<Item = &'a Scenario>) -> BTreeMap<String, TaskInfo> {
    scenarios
        .into_iter()
        .map(|s| {
            let info = TaskInfo { goals: s.goals.clone(), optimal_len: s.optimal_len, reference: s.reference.clone() };
            (s.name.clone(), info)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub scenario: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Hash of the config with output locations blanked.
    pub config_hash: String,
    pub variant: Variant,
    pub epsilon_scale: f64,
    pub coefficients: PolicyCoefficients,
    pub episode: EpisodeConfig,
    pub seeds: Vec<u64>,
    pub scenarios: Vec<ScenarioEntry>,
    pub planner: String,
    pub scorer: String,
    /// Digest of the trajectory memory read at start, if any.
    pub memory_sha256: Option<String>,
    pub versions: BTreeMap<String, String>,
    pub jobs: usize,
    pub started_at: u64,
    pub finished_at: u64,
    pub episodes: usize,
    pub successes: usize,
    pub errors: Vec<CellError>,
}

impl Manifest {
    /// The inputs that determine the metric values.
    pub fn inputs(&self) -> (&[ScenarioEntry], &[u64], &Option<String>, &str, &str) {
        (&self.scenarios, &self.seeds, &self.memory_sha256, &self.planner, &self.scorer)
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = PathBuf::new();
    c.memory_out = None;
    c.hash()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Everything a command needs before it starts running episodes.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub scenarios: Vec<LoadedScenario>,
    pub seeds: Vec<u64>,
    pub backends: Backends,
    pub memory: Option<TrajectoryGraph>,
    memory_sha256: Option<String>,
    pub jobs: usize,
    interactive: bool,
}

/// Validates the config and loads scenarios, backends and memory. Nothing
/// is written, so a failure here leaves no artifacts.
pub fn prepare(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Prepared, HarnessError> {
    cfg.check()?;
    let seeds = cfg.seeds()?;
    let jobs = match opts.jobs {
        Some(0) => return Err(HarnessError::Usage("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let scenarios = load_scenarios(cfg)?;
    let backends = backends(cfg, opts.fallback_stub)?;
    let (memory, memory_sha256) = match &cfg.memory_in {
        Some(p) => {
            let m = trajectory::load_memory(p)?;
            let bytes = std::fs::read(p).map_err(io_err(p))?;
            (Some(m), Some(digest(&bytes)))
        }
        None => (None, None),
    };
    Ok(Prepared {
        cfg: cfg.clone(),
        scenarios,
        seeds,
        backends,
        memory,
        memory_sha256,
        jobs,
        interactive: opts.interactive,
    })
}

/// Artifacts of one run directory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub results: Vec<EpisodeResult>,
    pub report: MetricReport,
    pub manifest: Manifest,
}

impl RunOutcome {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.status != EpisodeStatus::Success).count() + self.manifest.errors.len()
    }

    pub fn exit_code(&self) -> i32 {
        if self.failures() > 0 {
            EXIT_EPISODE_FAILURES
        } else {
            EXIT_OK
        }
    }
}

fn run_cell(
    s: &Scenario,
    seed: u64,
    ec: &EpisodeConfig,
    b: &Backends,
    memory: Option<&TrajectoryGraph>,
    op: &mut dyn Operator,
) -> Result<EpisodeResult, EpisodeError> {
    let g = s.initial_graph(b.planner.as_ref(), &ec.thresholds)?;
    run_episode_seeded(g, s, mix_seed(s.seed, seed), ec, b.planner.as_ref(), b.scorer.as_ref(), memory, op)
}

impl Prepared {
    /// Runs every (scenario, seed) cell with one variant and threshold scale
    /// and writes a run directory at `out`.
    pub fn run_into(
        &self,
        command: &str,
        variant: Variant,
        scale: f64,
        out: &Path,
    ) -> Result<RunOutcome, HarnessError> {
        let started_at = now();
        let logs = out.join("logs");
        std::fs::create_dir_all(&logs).map_err(io_err(&logs))?;
        let ec = self.cfg.episode_config(variant, scale);
        let cells: Vec<(&LoadedScenario, u64)> =
            self.scenarios.iter().flat_map(|s| self.seeds.iter().map(move |seed| (s, *seed))).collect();
        let memory = self.memory.as_ref();
        let one =
            |s: &LoadedScenario, seed: u64, op: &mut dyn Operator| -> Result<(EpisodeResult, PathBuf), CellError> {
                let cell_err = |message: String| CellError { scenario: s.entry.name.clone(), seed, message };
                let r = run_cell(&s.scenario, seed, &ec, &self.backends, memory, op)
                    .map_err(|e| cell_err(e.to_string()))?;
                let path = logs.join(format!("{}__seed{seed}.jsonl", file_stem(&s.entry.name)));
                trajectory::write_episode_file(&path, &r).map_err(|e| cell_err(e.to_string()))?;
                Ok((r, path))
            };
        let outcomes: Vec<Result<(EpisodeResult, PathBuf), CellError>> = if self.interactive {
            let mut op = operator::terminal();
            cells.iter().map(|(s, seed)| one(s, *seed, &mut op)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build()
                .map_err(|e| HarnessError::Usage(format!("cannot start {} workers: {e}", self.jobs)))?;
            pool.install(|| cells.par_iter().map(|(s, seed)| one(s, *seed, &mut AutoAbort)).collect())
        };
        let mut results = Vec::new();
        let mut parts = Vec::new();
        let mut errors = Vec::new();
        for o in outcomes {
            match o {
                Ok((r, p)) => {
                    results.push(r);
                    parts.push(p);
                }
                Err(e) => {
                    warn!("{} seed {}: {}", e.scenario, e.seed, e.message);
                    errors.push(e);
                }
            }
        }
        trajectory::merge(&parts, &out.join("trajectories.jsonl"))?;
        let scenarios: Vec<&Scenario> = self.scenarios.iter().map(|s| &s.scenario).collect();
        write_json(&out.join("scenarios.json"), &scenarios)?;
        let report = build_report(&results, &task_infos(scenarios.iter().copied()));
        write_report(out, &report)?;
        let manifest = Manifest {
            command: command.to_string(),
            config_hash: config_hash(&self.cfg),
            variant,
            epsilon_scale: scale,
            coefficients: ec.coeffs,
            episode: ec.clone(),
            seeds: self.seeds.clone(),
            scenarios: self.scenarios.iter().map(|s| s.entry.clone()).collect(),
            planner: self.backends.planner_name.clone(),
            scorer: self.backends.scorer_name.clone(),
            memory_sha256: self.memory_sha256.clone(),
            versions: BTreeMap::from([
                ("hecg".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("hecg-core".to_string(), hecg_core::VERSION.to_string()),
            ]),
            jobs: if self.interactive { 1 } else { self.jobs },
            started_at,
            finished_at: now(),
            episodes: results.len(),
            successes: results.iter().filter(|r| r.status == EpisodeStatus::Success).count(),
            errors,
        };
        write_json(&out.join("manifest.json"), &manifest)?;
        info!("{}: {} episodes, {} successes", out.display(), manifest.episodes, manifest.successes);
        Ok(RunOutcome { dir: out.to_path_buf(), results, report, manifest })
    }

    /// Adds the outcomes' histories to the loaded memory (or a fresh one)
    /// and writes it to `memory_out`, if set.
    pub fn save_memory<'a>(&self, runs: impl IntoIterator<Item = &'a RunOutcome>) -> Result<(), HarnessError> {
        let Some(path) = &self.cfg.memory_out else { return Ok(()) };
        let mut m = self.memory.clone().unwrap_or_default();
        let goals: BTreeMap<&str, _> =
            self.scenarios.iter().map(|s| (s.scenario.name.as_str(), s.scenario.goal_predicates())).collect();
        for run in runs {
            for r in &run.results {
                m.ingest(&r.history, goals.get(r.scenario.as_str()).map(Vec::as_slice).unwrap_or(&[]));
            }
        }
        trajectory::save_memory(path, &m)?;
        Ok(())
    }
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<(), HarnessError> {
    write_json(&dir.join("report.json"), report)?;
    write_text(&dir.join("report.txt"), &report::text_report(report))?;
    write_text(&dir.join("report.csv"), &report::metrics_csv(report))?;
    write_text(&dir.join("regimes.csv"), &report::regime_csv([("all", &report.aggregate.regimes)]))
}

pub fn cmd_run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    let p = prepare(cfg, opts)?;
    let run = p.run_into("run", cfg.variant, cfg.epsilon_scale, &cfg.out_dir)?;
    p.save_memory([&run])?;
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<RunOutcome>,
}

impl AblationOutcome {
    pub fn exit_code(&self) -> i32 {
        self.runs.iter().map(RunOutcome::exit_code).max().unwrap_or(EXIT_OK)
    }
}

/// Runs each listed variant on the same scenarios and seeds.
pub fn cmd_ablate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<AblationOutcome, HarnessError> {
    if cfg.variants.len() < 2 {
        return Err(HarnessError::Usage(format!("ablate needs at least 2 variants, got {}", cfg.variants.len())));
    }
    let p = prepare(cfg, opts)?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for (i, v) in cfg.variants.iter().enumerate() {
        let label = format!("{i:02}-{}", v.as_str());
        let run = p.run_into("ablate", *v, cfg.epsilon_scale, &cfg.out_dir.join(&label))?;
        rows.push(AblationRow::of(&label, v.as_str(), &run.report));
        runs.push(run);
    }
    let out = &cfg.out_dir;
    write_json(&out.join("ablation.json"), &rows)?;
    write_text(&out.join("ablation.txt"), &report::ablation_text(&rows))?;
    write_text(&out.join("ablation.csv"), &report::ablation_csv(&rows))?;
    write_text(&out.join("regimes.csv"), &report::regime_csv(rows.iter().map(|r| (r.label.as_str(), &r.regimes))))?;
    p.save_memory(&runs)?;
    Ok(AblationOutcome { rows, runs })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunOutcome>,
}

impl SweepOutcome {
    pub fn exit_code(&self) -> i32 {
        self.runs.iter().map(RunOutcome::exit_code).max().unwrap_or(EXIT_OK)
    }
}

/// One run per threshold scale, in the listed order. Each scale replaces
/// the config's `epsilon_scale`.
pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepOutcome, HarnessError> {
    if cfg.epsilon_scales.len() < 2 {
        return Err(HarnessError::Usage(format!("sweep needs at least 2 scales, got {}", cfg.epsilon_scales.len())));
    }
    let p = prepare(cfg, opts)?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for (i, scale) in cfg.epsilon_scales.iter().enumerate() {
        let run = p.run_into("sweep", cfg.variant, *scale, &cfg.out_dir.join(format!("scale-{i:02}")))?;
        let t = ThresholdConfig::default().scaled(*scale);
        let regimes = &run.report.aggregate.regimes;
        let total: usize = regimes.counts.values().flat_map(|r| r.values()).sum();
        let main: usize = regimes.counts.values().filter_map(|r| r.get(&EdgeKind::Main)).sum();
        rows.push(SweepRow {
            scale: *scale,
            local_threshold: t.local,
            max_threshold: t.max,
            tsr: run.report.aggregate.tsr.tsr,
            sr_final: run.report.aggregate.plan.sr_final,
            mean_recovery_steps: run.report.aggregate.mean_recovery_steps,
            main_share: if total == 0 { 0.0 } else { main as f64 / total as f64 },
        });
        runs.push(run);
    }
    let out = &cfg.out_dir;
    write_json(&out.join("sweep.json"), &rows)?;
    write_text(&out.join("sweep.txt"), &report::sweep_text(&rows))?;
    write_text(&out.join("sweep.csv"), &report::sweep_csv(&rows))?;
    p.save_memory(&runs)?;
    Ok(SweepOutcome { rows, runs })
}

/// Rebuilds the report of a run directory from its logs and scenarios.
pub fn cmd_report(dir: &Path) -> Result<MetricReport, HarnessError> {
    let scen_path = dir.join("scenarios.json");
    let text = std::fs::read_to_string(&scen_path).map_err(io_err(&scen_path))?;
    let scenarios: Vec<Scenario> = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Scenario { path: scen_path.display().to_string(), reason: e.to_string() })?;
    let results = trajectory::read_log(&dir.join("trajectories.jsonl"))?;
    let report = build_report(&results, &task_infos(&scenarios));
    write_report(dir, &report)?;
    Ok(report)
}

/// One line per scenario describing its initial graph.
pub fn cmd_validate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<String>, HarnessError> {
    let p = prepare(cfg, opts)?;
    let ec = cfg.episode_config(cfg.variant, cfg.epsilon_scale);
    let mut lines = Vec::new();
    for s in &p.scenarios {
        let g = s
            .scenario
            .initial_graph(p.backends.planner.as_ref(), &ec.thresholds)
            .map_err(|e| HarnessError::Scenario { path: s.entry.source.clone(), reason: e.to_string() })?;
        lines.push(format!("{}: ok, {}", s.entry.name, g.summary()));
    }
    Ok(lines)
}
