//! Experiment commands against the shipped scenarios.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use common::oracles::{close, metrics as om, policy as op};
use hecg::harness::{self, HarnessError, EXIT_USAGE};
use hecg::{ExperimentConfig, RunOptions};
use hecg_core::graph::ThresholdConfig;
use hecg_core::planner::{StubPlanner, StubScorer};
use hecg_core::policy::Regime;
use hecg_core::scenario::Scenario;
use hecg_core::traversal::{run_one, EpisodeConfig};
use hecg_core::Variant;
use serde_json::Value;
use tempfile::TempDir;

fn config(scenarios: usize, seeds: &[u64], out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        scenarios: common::scenario_files(scenarios),
        seeds: seeds.to_vec(),
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn opts(jobs: usize) -> RunOptions {
    RunOptions { jobs: Some(jobs), ..RunOptions::default() }
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn without_timestamps(mut v: Value) -> Value {
    let m = v.as_object_mut().unwrap();
    m.remove("started_at");
    m.remove("finished_at");
    v
}

#[test]
fn single_run_writes_artifacts_and_repeats_exactly() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let ra = harness::cmd_run(&config(1, &[7], a.path()), &opts(2)).unwrap();
    let rb = harness::cmd_run(&config(1, &[7], b.path()), &opts(2)).unwrap();
    for f in [
        "manifest.json",
        "report.json",
        "report.txt",
        "report.csv",
        "regimes.csv",
        "trajectories.jsonl",
        "scenarios.json",
    ] {
        assert!(a.path().join(f).is_file(), "{f}");
    }
    let logs: Vec<_> = std::fs::read_dir(a.path().join("logs")).unwrap().collect();
    assert_eq!(logs.len(), 1);
    for f in ["report.json", "report.txt", "report.csv", "regimes.csv", "trajectories.jsonl"] {
        assert_eq!(bytes(a.path().join(f)), bytes(b.path().join(f)), "{f}");
    }
    let ma = without_timestamps(common::read_json(&a.path().join("manifest.json")));
    let mb = without_timestamps(common::read_json(&b.path().join("manifest.json")));
    assert_eq!(ma, mb);
    assert_eq!(ra.manifest.seeds, vec![7]);
    assert_eq!(ra.manifest.config_hash, rb.manifest.config_hash);
    assert_eq!(ra.manifest.versions["hecg-core"], hecg_core::VERSION);
}

#[test]
fn worker_count_does_not_change_results() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    harness::cmd_run(&config(10, &[0, 1, 2], a.path()), &opts(1)).unwrap();
    harness::cmd_run(&config(10, &[0, 1, 2], b.path()), &opts(8)).unwrap();
    assert_eq!(bytes(a.path().join("report.json")), bytes(b.path().join("report.json")));
    assert_eq!(bytes(a.path().join("trajectories.jsonl")), bytes(b.path().join("trajectories.jsonl")));
}

#[test]
fn batch_matches_sequential_single_runs() {
    let dir = TempDir::new().unwrap();
    let seeds: Vec<u64> = (0..10).collect();
    let run = harness::cmd_run(&config(5, &seeds, dir.path()), &opts(4)).unwrap();
    assert_eq!(run.results.len(), 50);
    let ec = EpisodeConfig::default();
    let mut want: BTreeMap<String, usize> = BTreeMap::new();
    let mut got: BTreeMap<String, usize> = BTreeMap::new();
    for f in common::scenario_files(5) {
        let s: Scenario = serde_json::from_str(&std::fs::read_to_string(f).unwrap()).unwrap();
        for seed in &seeds {
            let r = run_one(&s, &ec, *seed, &StubPlanner, &StubScorer, None).unwrap();
            *want.entry(s.name.clone()).or_default() +=
                r.status.eq(&hecg_core::traversal::EpisodeStatus::Success) as usize;
        }
    }
    for r in &run.results {
        *got.entry(r.scenario.clone()).or_default() +=
            r.status.eq(&hecg_core::traversal::EpisodeStatus::Success) as usize;
    }
    assert_eq!(got, want);
}

fn field(v: &Value, path: &[&str]) -> Value {
    path.iter().fold(v.clone(), |v, k| v[*k].clone())
}

fn same(got: &Value, want: f64, what: &str) {
    let g = got.as_f64().unwrap_or_else(|| panic!("{what}: {got}"));
    assert!(close(g, want, 1e-9), "{what}: report {g}, oracle {want}");
}

fn same_opt(got: &Value, want: Option<f64>, what: &str) {
    match want {
        Some(w) => same(got, w, what),
        None => assert!(got.is_null(), "{what}: report {got}, oracle none"),
    }
}

#[test]
fn report_matches_formulas_recomputed_from_logs() {
    let dir = TempDir::new().unwrap();
    harness::cmd_run(&config(5, &[0, 1, 2, 3], dir.path()), &opts(4)).unwrap();
    let report = common::read_json(&dir.path().join("report.json"));
    let scenarios: Vec<Scenario> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scenarios.json")).unwrap()).unwrap();
    let episodes = common::episodes_from_log(&dir.path().join("trajectories.jsonl"));
    assert_eq!(episodes.len(), 20);

    let all: Vec<_> = episodes.iter().map(|e| e.summary.clone()).collect();
    let agg = om::tsr(&all);
    let a = &report["aggregate"]["tsr"];
    same(&a["tsr"], agg.tsr, "aggregate tsr");
    same(&a["tsr_r"], agg.tsr_r, "aggregate tsr_r");
    same(&a["tsr_r_sum"], agg.tsr_r_sum, "aggregate tsr_r_sum");
    same_opt(&a["tsr_c"], agg.tsr_c, "aggregate tsr_c");
    same(&a["er"], agg.er, "aggregate er");

    let mut compliance_sum = 0.0;
    for s in &scenarios {
        let mine: Vec<_> = episodes.iter().filter(|e| e.summary.scenario == s.name).collect();
        let sums: Vec<_> = mine.iter().map(|e| e.summary.clone()).collect();
        let t = &report["per_task"][s.name.as_str()];
        let o = om::tsr(&sums);
        same(&field(t, &["tsr", "tsr"]), o.tsr, &format!("{} tsr", s.name));
        same(&field(t, &["tsr", "tsr_r"]), o.tsr_r, &format!("{} tsr_r", s.name));
        same_opt(&field(t, &["tsr", "tsr_c"]), o.tsr_c, &format!("{} tsr_c", s.name));
        same(&field(t, &["tsr", "er"]), o.er, &format!("{} er", s.name));
        let reference = s.reference.clone().unwrap();
        let p = om::plan(&sums, &reference, s.optimal_len.unwrap());
        same(&field(t, &["plan", "sr_final"]), p.sr_final, &format!("{} sr", s.name));
        same(&field(t, &["plan", "improvement"]), p.improvement, &format!("{} improvement", s.name));
        same(&field(t, &["plan", "action_accuracy"]), p.action_accuracy, &format!("{} aa", s.name));
        same(&field(t, &["plan", "efficiency"]), p.efficiency, &format!("{} efficiency", s.name));
        same_opt(&field(t, &["plan", "cv"]), p.cv, &format!("{} cv", s.name));
        let comps: Vec<_> = mine
            .iter()
            .map(|e| {
                om::compliance(&om::ComplianceCase {
                    initial: e.initial.clone(),
                    final_: e.final_.clone(),
                    goals: s.goals.clone(),
                    executed_len: e.summary.steps as usize,
                    optimal_len: s.optimal_len.unwrap(),
                })
            })
            .collect();
        let mean = |f: fn(&om::Compliance) -> f64| comps.iter().map(f).sum::<f64>() / comps.len() as f64;
        let c = &t["compliance"];
        same(&c["compliance"], mean(|c| c.compliance), &format!("{} compliance", s.name));
        same(&c["soft_recall"], mean(|c| c.soft_recall), &format!("{} soft recall", s.name));
        same(&c["soft_precision"], mean(|c| c.soft_precision), &format!("{} soft precision", s.name));
        same(&c["soft_f1"], mean(|c| c.soft_f1), &format!("{} soft f1", s.name));
        same(&c["composite"], mean(|c| c.composite), &format!("{} composite", s.name));
        compliance_sum += comps.iter().map(|c| c.compliance).sum::<f64>();
    }
    same(&report["aggregate"]["compliance"]["compliance"], compliance_sum / 20.0, "aggregate compliance");
}

#[test]
fn report_command_rebuilds_the_same_report() {
    let dir = TempDir::new().unwrap();
    let run = harness::cmd_run(&config(3, &[0, 1], dir.path()), &opts(2)).unwrap();
    let before = bytes(dir.path().join("report.json"));
    let rebuilt = harness::cmd_report(dir.path()).unwrap();
    assert_eq!(rebuilt, run.report);
    assert_eq!(bytes(dir.path().join("report.json")), before);
}

#[test]
fn missing_scenario_is_a_usage_error_without_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut cfg = config(1, &[0], &out);
    cfg.scenarios.push(PathBuf::from("/no/such/scenario.json"));
    let err = harness::cmd_run(&cfg, &opts(1)).unwrap_err();
    assert!(matches!(err, HarnessError::MissingScenario(_)));
    assert_eq!(err.exit_code(), EXIT_USAGE);
    assert!(!out.exists());
}

#[test]
fn ablate_and_sweep_need_two_settings() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(1, &[0], dir.path());
    cfg.variants = vec![Variant::Full];
    assert!(matches!(harness::cmd_ablate(&cfg, &opts(1)), Err(HarnessError::Usage(_))));
    cfg.epsilon_scales = vec![1.0];
    assert!(matches!(harness::cmd_sweep(&cfg, &opts(1)), Err(HarnessError::Usage(_))));
    assert!(matches!(harness::cmd_run(&cfg, &opts(0)), Err(HarnessError::Usage(_))));
}

#[test]
fn full_against_full_gives_identical_reports() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(10, &[0, 1, 2], dir.path());
    cfg.variants = vec![Variant::Full, Variant::Full];
    let a = harness::cmd_ablate(&cfg, &opts(4)).unwrap();
    assert_eq!(a.rows[0].tsr, a.rows[1].tsr);
    assert_eq!(bytes(dir.path().join("00-full/report.json")), bytes(dir.path().join("01-full/report.json")));
    assert_eq!(a.runs[0].manifest.inputs(), a.runs[1].manifest.inputs());
}

#[test]
fn variants_share_inputs_and_write_comparisons() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(10, &[0, 1], dir.path());
    cfg.variants = vec![Variant::Full, Variant::NoRisk, Variant::NoLlm];
    let a = harness::cmd_ablate(&cfg, &opts(4)).unwrap();
    let first = a.runs[0].manifest.inputs();
    assert!(a.runs.iter().all(|r| r.manifest.inputs() == first));
    assert_eq!(a.runs[1].manifest.coefficients.gamma, 0.0);
    assert_eq!(a.runs[2].manifest.coefficients.lambda, 0.0);
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let grid = std::fs::read_to_string(dir.path().join("regimes.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 3 * 3);
    assert!(dir.path().join("ablation.txt").is_file() && dir.path().join("ablation.json").is_file());
}

#[test]
fn variant_zeroing_equals_manual_coefficients() {
    for (variant, manual) in [
        (Variant::NoValue, r#"{"alpha":0}"#),
        (Variant::NoCost, r#"{"beta":0}"#),
        (Variant::NoRisk, r#"{"gamma":0}"#),
        (Variant::NoLlm, r#"{"lambda":0}"#),
    ] {
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        let mut by_variant = config(10, &[0, 1], a.path());
        by_variant.variant = variant;
        let mut by_hand = config(10, &[0, 1], b.path());
        by_hand.coefficients = serde_json::from_str(manual).unwrap();
        let ra = harness::cmd_run(&by_variant, &opts(4)).unwrap();
        let rb = harness::cmd_run(&by_hand, &opts(4)).unwrap();
        assert_eq!(ra.report, rb.report, "{}", variant.as_str());
        assert_eq!(bytes(a.path().join("trajectories.jsonl")), bytes(b.path().join("trajectories.jsonl")));
    }
}

#[test]
fn sweep_at_unit_scale_equals_a_plain_run() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let mut cfg = config(10, &[0, 1], a.path());
    cfg.epsilon_scales = vec![0.5, 1.0];
    let sweep = harness::cmd_sweep(&cfg, &opts(4)).unwrap();
    let run = harness::cmd_run(&config(10, &[0, 1], b.path()), &opts(4)).unwrap();
    assert_eq!(sweep.runs[1].report, run.report);
    assert_eq!(bytes(a.path().join("scale-01/report.json")), bytes(b.path().join("report.json")));
    assert_eq!(sweep.rows[1].tsr, run.report.aggregate.tsr.tsr);
    assert_eq!((sweep.rows[1].local_threshold, sweep.rows[1].max_threshold), (0.25, 0.75));
    assert!(a.path().join("sweep.csv").is_file() && a.path().join("sweep.txt").is_file());
}

#[test]
fn sweep_keeps_the_listed_order_and_clamps() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(2, &[0], dir.path());
    cfg.epsilon_scales = vec![2.0, 0.0, 0.5];
    let s = harness::cmd_sweep(&cfg, &opts(2)).unwrap();
    let scales: Vec<f64> = s.rows.iter().map(|r| r.scale).collect();
    assert_eq!(scales, vec![2.0, 0.0, 0.5]);
    assert_eq!((s.rows[0].local_threshold, s.rows[0].max_threshold), (0.5, 1.0));
    assert!(s.rows[1].local_threshold > 0.0 && s.rows[1].local_threshold < 1e-3);
}

#[test]
fn zero_scale_moves_every_error_out_of_the_low_regime() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(10, &[0, 1], dir.path());
    cfg.epsilon_scales = vec![0.0, 1.0];
    let s = harness::cmd_sweep(&cfg, &opts(4)).unwrap();
    let t = ThresholdConfig::default().scaled(0.0);
    let mut faulted = 0;
    for r in &s.runs[0].results {
        for d in &r.history.decisions {
            if d.error_value > 0.0 {
                faulted += 1;
                assert_ne!(d.regime, Regime::Low, "{}: {d:?}", r.scenario);
                if d.error_value > t.max {
                    assert_eq!(d.regime, Regime::High);
                }
            }
        }
    }
    assert!(faulted > 0);
    // Every failed step that was moderate at unit scale is high at scale zero.
    let moderate = |i: usize| s.runs[i].report.aggregate.regimes.total(Regime::Moderate);
    assert!(moderate(1) > 0);
    assert!(moderate(0) < moderate(1));
}

#[test]
fn main_routing_share_grows_with_scale_over_logged_errors() {
    let dir = TempDir::new().unwrap();
    let run = harness::cmd_run(&config(10, &[0, 1, 2], dir.path()), &opts(4)).unwrap();
    let errors: Vec<f64> = run.results.iter().flat_map(|r| r.history.decisions.iter().map(|d| d.error_value)).collect();
    assert!(errors.iter().any(|e| *e > 0.0));
    let mut last = -1.0;
    for i in 0..=40 {
        let scale = i as f64 * 0.1;
        let t = ThresholdConfig::default().scaled(scale);
        let main = errors.iter().filter(|e| op::route(**e, t.local, t.max) == hecg_core::EdgeKind::Main).count();
        let share = main as f64 / errors.len() as f64;
        assert!(share >= last, "scale {scale}: {share} < {last}");
        last = share;
    }
    assert_eq!(last, 1.0);
}

#[test]
fn memory_is_saved_and_reloaded() {
    let dir = TempDir::new().unwrap();
    let mem = dir.path().join("memory.json");
    let mut cfg = config(3, &[0, 1], &dir.path().join("first"));
    cfg.memory_out = Some(mem.clone());
    harness::cmd_run(&cfg, &opts(2)).unwrap();
    let saved = hecg::trajectory::load_memory(&mem).unwrap();
    assert_eq!(saved.episodes, 6);
    assert!(!saved.nodes.is_empty());

    let mut cfg = config(3, &[0, 1], &dir.path().join("second"));
    cfg.memory_in = Some(mem.clone());
    cfg.memory_out = Some(mem.clone());
    let run = harness::cmd_run(&cfg, &opts(2)).unwrap();
    assert!(run.manifest.memory_sha256.is_some());
    assert_eq!(hecg::trajectory::load_memory(&mem).unwrap().episodes, 12);
}

#[test]
fn validate_lists_every_scenario() {
    let lines = harness::cmd_validate(&config(10, &[0], Path::new("unused")), &opts(1)).unwrap();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l.contains(": ok")));
}
