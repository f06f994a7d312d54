use std::collections::BTreeSet;

use hecg_core::correction::{BannedPair, OperatorDecision, ScriptedOperator};
use hecg_core::env::Predicate;
use hecg_core::planner::{StubPlanner, StubScorer};
use hecg_core::scenario::Scenario;
use hecg_core::suite::{fault_suite, stress};
use hecg_core::traversal::{
    run_batch, run_episode, run_one, EpisodeConfig, EpisodeError, EpisodeResult, EpisodeStatus, Phase,
};
use hecg_core::{CorrectionLevel, EdgeKind, ErrorKind};

fn kitchen(faults: &str) -> Scenario {
    let text = format!(
        r#"{{
        "name": "kitchen",
        "scene": {{"rooms": ["kitchen", "livingroom"]}},
        "objects": {{
            "fridge": {{"room": "kitchen", "properties": ["openable", "container"], "flags": ["closed"]}},
            "mug": {{"room": "kitchen", "properties": ["grabbable"]}}
        }},
        "agent": {{"room": "livingroom"}},
        "goals": ["grabbed(mug)", "open(fridge)"],
        "plan": ["[walk] <kitchen>", "[grab] <mug>", "[open] <fridge>"],
        "faults": {faults},
        "seed": 7
    }}"#
    );
    serde_json::from_str(&text).unwrap()
}

fn run(s: &Scenario) -> EpisodeResult {
    let cfg = EpisodeConfig::default();
    let g = s.initial_graph(&StubPlanner, &cfg.thresholds).unwrap();
    run_episode(g, s, &cfg, &StubPlanner, &StubScorer, None, &mut ScriptedOperator::default()).unwrap()
}

fn primary_kinds(r: &EpisodeResult) -> Vec<EdgeKind> {
    r.history.records.iter().filter(|x| x.phase == Phase::Primary).map(|x| x.edge_kind).collect()
}

#[test]
fn fault_free_plan_runs_on_main_edges() {
    let r = run(&kitchen("[]"));
    assert_eq!(r.status, EpisodeStatus::Success);
    assert_eq!(r.steps, 3);
    assert_eq!(r.goal_ratio, 1.0);
    assert_eq!(primary_kinds(&r), vec![EdgeKind::Main; 3]);
    assert!(r.history.failures.is_empty());
}

#[test]
fn perception_fault_is_corrected_locally() {
    let r = run(&kitchen(r#"[{"step": 1, "kind": "Perception-Mismatch-Error"}]"#));
    assert_eq!(r.status, EpisodeStatus::Success);
    assert_eq!(primary_kinds(&r), vec![EdgeKind::Main, EdgeKind::Corr, EdgeKind::Main]);
    let grab = &r.history.records[1];
    assert_eq!(grab.level, Some(CorrectionLevel::L1));
    assert_eq!(grab.error_type, Some(ErrorKind::PerceptionMismatch));
    // re-observe rule: look at the target, then retry
    let subs: Vec<String> =
        r.history.records.iter().filter(|x| x.phase == Phase::Correction).map(|x| x.action.canonical()).collect();
    assert_eq!(subs, ["[lookat] <mug>", "[grab] <mug>"]);
    assert!(r.history.records.iter().filter(|x| x.phase == Phase::Correction).all(|x| x.corrects == Some(1)));
    assert!(r.history.replans.is_empty());
}

#[test]
fn hardware_fault_escalates() {
    let r = run(&kitchen(r#"[{"step": 1, "kind": "Hardware-Fault-Error"}]"#));
    assert_eq!(r.status, EpisodeStatus::Escalated);
    let esc = r.history.escalations.last().unwrap();
    assert_eq!(esc.dossier.last().unwrap().kind, ErrorKind::HardwareFault);
    assert_eq!(r.history.records[1].level, Some(CorrectionLevel::L4));
}

fn run_with(s: &Scenario, decisions: Vec<OperatorDecision>) -> EpisodeResult {
    let cfg = EpisodeConfig::default();
    let g = s.initial_graph(&StubPlanner, &cfg.thresholds).unwrap();
    run_episode(g, s, &cfg, &StubPlanner, &StubScorer, None, &mut ScriptedOperator(decisions)).unwrap()
}

fn actions(r: &EpisodeResult) -> Vec<String> {
    r.history.records.iter().map(|x| x.action.canonical()).collect()
}

#[test]
fn operator_retry_clears_the_stop_and_reruns() {
    let r = run_with(&kitchen(r#"[{"step": 1, "kind": "Hardware-Fault-Error"}]"#), vec![OperatorDecision::Retry]);
    assert_eq!(r.status, EpisodeStatus::Success);
    assert_eq!(actions(&r), ["[walk] <kitchen>", "[grab] <mug>", "[grab] <mug>", "[open] <fridge>"]);
    assert_eq!(r.history.escalations.len(), 1);
    assert_eq!(r.history.escalations[0].step, 2);
    assert!(!r.final_world.agent.halted);
}

#[test]
fn operator_skip_moves_past_the_node() {
    let r = run_with(&kitchen(r#"[{"step": 1, "kind": "Hardware-Fault-Error"}]"#), vec![OperatorDecision::Skip]);
    assert_eq!(r.status, EpisodeStatus::Failed);
    assert_eq!(actions(&r), ["[walk] <kitchen>", "[grab] <mug>", "[open] <fridge>"]);
    assert_eq!(r.goals_satisfied, 1);
}

#[test]
fn invalid_graph_is_rejected() {
    let s = kitchen("[]");
    let mut g = s.initial_graph(&StubPlanner, &EpisodeConfig::default().thresholds).unwrap();
    g.edges.retain(|e| e.kind != EdgeKind::Main);
    let err = run_episode(
        g,
        &s,
        &EpisodeConfig::default(),
        &StubPlanner,
        &StubScorer,
        None,
        &mut ScriptedOperator::default(),
    )
    .unwrap_err();
    assert!(matches!(err, EpisodeError::InvalidGraph(_)));
}

fn check_log(r: &EpisodeResult, cfg: &EpisodeConfig) {
    let h = &r.history;
    assert_eq!(h.records.len(), r.steps as usize + h.correction_substeps(), "{}", r.scenario);
    assert!(h.records.windows(2).all(|w| w[0].step < w[1].step));
    assert!(r.steps <= cfg.step_limit);
    if r.status == EpisodeStatus::Success {
        assert_eq!(r.goal_ratio, 1.0);
    }
    for x in &h.records {
        if x.phase == Phase::Correction {
            assert_eq!(x.edge_kind, EdgeKind::Corr);
            assert!(x.corrects.is_some_and(|c| c < x.step));
        }
    }
}

#[test]
fn suite_logs_are_complete() {
    let cfg = EpisodeConfig::default();
    let seeds: Vec<u64> = (0..5).collect();
    for r in run_batch(&fault_suite(), &cfg, 5, &seeds, &StubPlanner, &StubScorer, None).unwrap() {
        check_log(&r, &cfg);
    }
}

#[test]
fn batch_is_ordered_and_matches_single_runs() {
    let cfg = EpisodeConfig::default();
    let suite: Vec<Scenario> = fault_suite().into_iter().take(5).collect();
    let seeds: Vec<u64> = (0..10).collect();
    let batch = run_batch(&suite, &cfg, 10, &seeds, &StubPlanner, &StubScorer, None).unwrap();
    assert_eq!(batch.len(), 50);
    for (i, s) in suite.iter().enumerate() {
        let cell = &batch[i * 10..(i + 1) * 10];
        assert!(cell.iter().all(|r| r.scenario == s.name));
        let single: Vec<EpisodeResult> =
            seeds.iter().map(|seed| run_one(s, &cfg, *seed, &StubPlanner, &StubScorer, None).unwrap()).collect();
        let ok = |rs: &[EpisodeResult]| rs.iter().filter(|r| r.status == EpisodeStatus::Success).count();
        assert_eq!(ok(cell), ok(&single), "{}", s.name);
        assert_eq!(cell, &single[..]);
    }
}

#[test]
fn batch_edge_cases() {
    let cfg = EpisodeConfig::default();
    assert!(run_batch(&[], &cfg, 2, &[1, 2], &StubPlanner, &StubScorer, None).unwrap().is_empty());
    let one = [kitchen("[]")];
    let a = run_batch(&one, &cfg, 3, &[4, 5, 6], &StubPlanner, &StubScorer, None).unwrap();
    let b = run_batch(&one, &cfg, 3, &[4, 5, 6], &StubPlanner, &StubScorer, None).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    let err = run_batch(&one, &cfg, 3, &[4], &StubPlanner, &StubScorer, None).unwrap_err();
    assert!(matches!(err, EpisodeError::Config(_)));
}

/// Agent room before each record, read from the `at(room)` predicate.
fn room_before(r: &EpisodeResult, i: usize) -> String {
    let x = &r.history.records[i];
    x.outcome
        .before
        .iter()
        .find_map(|p| match p {
            Predicate::At(room) if r.initial_world.rooms.contains(room) => Some(room.clone()),
            _ => None,
        })
        .unwrap()
}

#[test]
fn stress_episodes_escalate_monotonically() {
    let cfg = EpisodeConfig::default();
    let suite = fault_suite();
    let mut replanned = 0;
    for seed in 0..100u64 {
        let s = stress(&suite[seed as usize % suite.len()], seed);
        let r = run_one(&s, &cfg, seed, &StubPlanner, &StubScorer, None).unwrap();
        check_log(&r, &cfg);
        for f in &r.history.failures {
            assert!(f.levels.windows(2).all(|w| w[0] <= w[1]), "{}: {:?}", s.name, f.levels);
        }
        let mut last: std::collections::BTreeMap<_, CorrectionLevel> = Default::default();
        for d in &r.history.decisions {
            if let Some(l) = d.level {
                let prev = last.insert(d.node, l);
                assert!(prev.is_none_or(|p| p <= l), "{}: {} dropped from {prev:?} to {l:?}", s.name, d.node);
            }
        }
        // Replans start a new generation, so the first record of generation g+1 marks the ban point.
        for ev in &r.history.replans {
            replanned += 1;
            let start = r.history.records.iter().position(|x| x.node.generation == ev.generation);
            let Some(start) = start else { continue };
            let banned: BTreeSet<String> = ev.banned.iter().cloned().collect();
            for i in start..r.history.records.len() {
                let pair = BannedPair::of(&r.history.records[i].action, &room_before(&r, i));
                assert!(!banned.contains(&pair.to_string()), "{}: {pair} reappeared", s.name);
            }
        }
    }
    assert!(replanned > 0, "stress seeds never replanned");
}
