//! Synthetic episode logs and straight-from-formula metric recomputation.

use std::collections::{BTreeMap, BTreeSet};

use hecg_core::env::{parse_script, ActionScript, AgentState, Flag, ObjectState, Placement, Predicate, WorldState};
use hecg_core::metrics::EpisodeSummary;
use hecg_core::policy::Regime;
use hecg_core::scenario::WeightedGoal;
use hecg_core::traversal::EpisodeStatus;
use hecg_core::{EdgeKind, ErrorKind};

use super::Gen;

const ACTIONS: [&str; 6] = [
    "[walk] <kitchen>",
    "[grab] <mug>",
    "[open] <fridge>",
    "[putin] <mug> <fridge>",
    "[close] <fridge>",
    "[push] <mug>",
];

pub fn reference() -> Vec<ActionScript> {
    ACTIONS[..5].iter().map(|a| parse_script(a).unwrap()).collect()
}

/// One random summary. Successful episodes satisfy every goal.
pub fn summary(g: &mut Gen, i: usize) -> EpisodeSummary {
    let status =
        *g.pick(&[EpisodeStatus::Success, EpisodeStatus::Failed, EpisodeStatus::Escalated, EpisodeStatus::StepLimit]);
    let goals_total = 1 + g.below(5);
    let goals_satisfied = if status == EpisodeStatus::Success { goals_total } else { g.below(goals_total + 1) };
    let errors: Vec<ErrorKind> = (0..g.below(4)).map(|_| *g.pick(&ErrorKind::ALL)).collect();
    let failing = !errors.is_empty();
    let main_actions = (0..g.below(7)).map(|_| parse_script(g.pick(&ACTIONS)).unwrap()).collect();
    let decisions = (0..g.below(8))
        .map(|_| (*g.pick(&Regime::ALL), *g.pick(&[EdgeKind::Main, EdgeKind::Opt, EdgeKind::Corr, EdgeKind::Fb])))
        .collect();
    EpisodeSummary {
        scenario: g.pick(&["alpha", "beta", "gamma"]).to_string(),
        seed: i as u64,
        status,
        steps: g.below(12) as u32,
        goals_total,
        goals_satisfied,
        errors,
        replans: if failing { g.below(3) } else { 0 },
        correction_substeps: if failing { g.below(4) } else { 0 },
        option_switches: if failing { g.below(2) } else { 0 },
        main_actions,
        decisions,
    }
}

/// A synthetic log of `n` episodes.
pub fn log(seed: u64, n: usize) -> Vec<EpisodeSummary> {
    let mut g = Gen::new(seed);
    (0..n).map(|i| summary(&mut g, i)).collect()
}

pub struct Tsr {
    pub tsr: f64,
    pub tsr_r: f64,
    pub tsr_r_sum: f64,
    pub tsr_c: Option<f64>,
    pub er: f64,
    pub error_ratios: BTreeMap<ErrorKind, f64>,
    pub family_ratios: BTreeMap<&'static str, f64>,
}

/// Family table: grounding, precondition, affordance, execution.
pub fn family(k: ErrorKind) -> &'static str {
    use ErrorKind::*;
    match k {
        ActionExecution | SensorFailure | PerceptionMismatch => "grounding",
        Cascading | AgentPositioning => "precondition",
        ActionNameMismatch | ScriptParsing => "affordance",
        Collision | Timeout | HardwareFault => "execution",
    }
}

pub fn tsr(log: &[EpisodeSummary]) -> Tsr {
    let n = log.len() as f64;
    let ratio = |e: &EpisodeSummary| e.goals_satisfied as f64 / e.goals_total as f64;
    let tsr = log.iter().map(ratio).sum::<f64>() / n;

    // Replan success: goals achieved after at least one failure and a replan.
    let mut tsr_r_sum = 0.0;
    let mut failing = 0usize;
    let mut with_replan = 0usize;
    let mut with_correction = 0usize;
    let mut failed_after_error = 0usize;
    for e in log {
        if e.errors.is_empty() {
            continue;
        }
        failing += 1;
        if e.replans > 0 {
            tsr_r_sum += ratio(e);
            with_replan += e.goals_satisfied;
            if e.correction_substeps + e.option_switches > 0 {
                with_correction += e.goals_satisfied;
            }
        }
        if e.status != EpisodeStatus::Success {
            failed_after_error += 1;
        }
    }
    let tsr_r = if failing == 0 { 0.0 } else { tsr_r_sum / failing as f64 };
    let tsr_c = if with_replan == 0 { None } else { Some(with_correction as f64 / with_replan as f64) };

    let all: Vec<ErrorKind> = log.iter().flat_map(|e| e.errors.iter().copied()).collect();
    let mut error_ratios = BTreeMap::new();
    let mut family_ratios = BTreeMap::new();
    for k in &all {
        *error_ratios.entry(*k).or_insert(0.0) += 1.0 / all.len() as f64;
        *family_ratios.entry(family(*k)).or_insert(0.0) += 1.0 / all.len() as f64;
    }
    Tsr { tsr, tsr_r, tsr_r_sum, tsr_c, er: failed_after_error as f64 / n, error_ratios, family_ratios }
}

pub struct Plan {
    pub sr_final: f64,
    pub sr_original: f64,
    pub improvement: f64,
    pub action_accuracy: f64,
    pub efficiency: f64,
    pub cv: Option<f64>,
}

#[allow(clippy::needless_range_loop)]
pub fn plan(log: &[EpisodeSummary], reference: &[ActionScript], optimal_len: usize) -> Plan {
    let n = log.len() as f64;
    let wins = log.iter().filter(|e| e.status == EpisodeStatus::Success).count() as f64;
    let wins_no_replan = log.iter().filter(|e| e.status == EpisodeStatus::Success && e.replans == 0).count() as f64;
    let mut aa = 0.0;
    let mut eff = 0.0;
    for e in log {
        let mut hits = 0;
        for i in 0..e.main_actions.len().min(reference.len()) {
            if e.main_actions[i] == reference[i] {
                hits += 1;
            }
        }
        aa += if e.main_actions.is_empty() { 0.0 } else { hits as f64 / e.main_actions.len() as f64 };
        eff += if e.steps == 0 { 1.0 } else { f64::min(1.0, optimal_len as f64 / e.steps as f64) };
    }
    let ratios: Vec<f64> = log.iter().map(|e| e.goals_satisfied as f64 / e.goals_total as f64).collect();
    let mu = ratios.iter().sum::<f64>() / n;
    let sd = (ratios.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / n).sqrt();
    Plan {
        sr_final: wins / n,
        sr_original: wins_no_replan / n,
        improvement: (wins - wins_no_replan) / n,
        action_accuracy: aa / n,
        efficiency: eff / n,
        cv: if mu == 0.0 { None } else { Some(sd / mu) },
    }
}

const OBJECTS: [&str; 5] = ["fridge", "mug", "stove", "bread", "table"];

fn random_object(g: &mut Gen) -> ObjectState {
    let mut o = ObjectState::new("kitchen");
    for f in [Flag::Open, Flag::On, Flag::Cut, Flag::Grabbed, Flag::Occluded] {
        if g.below(3) == 0 {
            o.flags.insert(f);
        }
    }
    if !o.flags.contains(&Flag::Open) {
        o.flags.insert(Flag::Closed);
    }
    if !o.flags.contains(&Flag::On) && g.coin() {
        o.flags.insert(Flag::Off);
    }
    o.placement = match g.below(3) {
        0 => Some(Placement::Inside("fridge".into())),
        1 => Some(Placement::On("table".into())),
        _ => None,
    };
    o
}

fn random_world(g: &mut Gen) -> WorldState {
    let objects = OBJECTS.iter().map(|n| (n.to_string(), random_object(g))).collect();
    WorldState {
        rooms: ["kitchen".to_string()].into_iter().collect(),
        objects,
        agent: AgentState::in_room("kitchen"),
        active_faults: Vec::new(),
    }
}

pub struct ComplianceCase {
    pub initial: WorldState,
    pub final_: WorldState,
    pub goals: Vec<WeightedGoal>,
    pub executed_len: usize,
    pub optimal_len: usize,
}

pub fn compliance_case(seed: u64) -> ComplianceCase {
    let mut g = Gen::new(seed ^ 0xc0ff_ee00);
    let initial = random_world(&mut g);
    let mut final_ = initial.clone();
    for name in OBJECTS {
        if g.below(3) == 0 {
            final_.objects.insert(name.to_string(), random_object(&mut g));
        }
    }
    let goals = (0..1 + g.below(4))
        .map(|_| {
            let x = g.pick(&OBJECTS[1..4]).to_string();
            let predicate = match g.below(5) {
                0 => Predicate::Open(x),
                1 => Predicate::Closed(x),
                2 => Predicate::SwitchedOn(x),
                3 => Predicate::Inside(x, "fridge".into()),
                _ => Predicate::On(x, "table".into()),
            };
            WeightedGoal { predicate, weight: g.range(0.1, 2.0) }
        })
        .collect();
    ComplianceCase { initial, final_, goals, executed_len: g.below(12), optimal_len: 1 + g.below(8) }
}

pub struct Compliance {
    pub compliance: f64,
    pub soft_recall: f64,
    pub soft_precision: f64,
    pub soft_f1: f64,
    pub size_penalty: f64,
    pub composite: f64,
}

/// Object facts as `(name, object, other)` triples read from raw fields.
fn facts(w: &WorldState) -> BTreeSet<(String, String, String)> {
    let mut out = BTreeSet::new();
    for (name, o) in &w.objects {
        for f in &o.flags {
            if *f != Flag::Occluded {
                out.insert((format!("{f:?}"), name.clone(), String::new()));
            }
        }
        match &o.placement {
            Some(Placement::Inside(c)) => out.insert(("inside".into(), name.clone(), c.clone())),
            Some(Placement::On(s)) => out.insert(("on".into(), name.clone(), s.clone())),
            None => false,
        };
    }
    out
}

fn satisfied(w: &WorldState, p: &Predicate) -> bool {
    let flag = |x: &str, f: Flag| w.objects[x].flags.contains(&f);
    let placed = |x: &str, p: Placement| w.objects[x].placement.as_ref() == Some(&p);
    match p {
        Predicate::Open(x) => flag(x, Flag::Open),
        Predicate::Closed(x) => flag(x, Flag::Closed),
        Predicate::SwitchedOn(x) => flag(x, Flag::On),
        Predicate::SwitchedOff(x) => flag(x, Flag::Off),
        Predicate::Cut(x) => flag(x, Flag::Cut),
        Predicate::Inside(x, c) => placed(x, Placement::Inside(c.clone())),
        Predicate::On(x, s) => placed(x, Placement::On(s.clone())),
        Predicate::Grabbed(x) => w.agent.holdings.contains(x),
        Predicate::At(x) => w.agent.room == *x || w.objects.get(x).is_some_and(|o| o.room == w.agent.room),
        Predicate::Facing(x) => w.agent.facing.as_deref() == Some(x.as_str()),
        Predicate::Sitting(x) => w.agent.sitting.as_deref() == Some(x.as_str()),
        Predicate::Standing => w.agent.sitting.is_none(),
        Predicate::Localized => w.agent.pose_ok,
    }
}

pub fn compliance(c: &ComplianceCase) -> Compliance {
    let sat: Vec<bool> = c.goals.iter().map(|g| satisfied(&c.final_, &g.predicate)).collect();
    let compliance = sat.iter().filter(|s| **s).count() as f64 / c.goals.len() as f64;
    let total_w: f64 = c.goals.iter().map(|g| g.weight).sum();
    let sat_w: f64 = c.goals.iter().zip(&sat).filter(|(_, s)| **s).map(|(g, _)| g.weight).sum();
    let soft_recall = sat_w / total_w;

    let goal_objects: BTreeSet<String> = c
        .goals
        .iter()
        .flat_map(|g| match &g.predicate {
            Predicate::Inside(a, b) | Predicate::On(a, b) => vec![a.clone(), b.clone()],
            Predicate::Open(a)
            | Predicate::Closed(a)
            | Predicate::SwitchedOn(a)
            | Predicate::SwitchedOff(a)
            | Predicate::Cut(a)
            | Predicate::Grabbed(a)
            | Predicate::At(a)
            | Predicate::Facing(a)
            | Predicate::Sitting(a) => vec![a.clone()],
            Predicate::Standing | Predicate::Localized => vec![],
        })
        .collect();
    let a = facts(&c.initial);
    let b = facts(&c.final_);
    let changed: Vec<_> = a.symmetric_difference(&b).collect();
    let relevant = changed.iter().filter(|(_, x, y)| goal_objects.contains(x) || goal_objects.contains(y)).count();
    let soft_precision = if changed.is_empty() { 1.0 } else { relevant as f64 / changed.len() as f64 };
    let soft_f1 = if soft_precision + soft_recall == 0.0 {
        0.0
    } else {
        2.0 * soft_precision * soft_recall / (soft_precision + soft_recall)
    };
    let size_penalty =
        if c.executed_len == 0 { 1.0 } else { f64::min(1.0, c.optimal_len as f64 / c.executed_len as f64) };
    Compliance { compliance, soft_recall, soft_precision, soft_f1, size_penalty, composite: soft_f1 * size_penalty }
}

fn cmp(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: library {got}, oracle {want}"))
    }
}

fn cmp_opt(what: &str, got: Option<f64>, want: Option<f64>, tol: f64) -> Result<(), String> {
    match (got, want) {
        (Some(a), Some(b)) => cmp(what, a, b, tol),
        (None, None) => Ok(()),
        _ => Err(format!("{what}: library {got:?}, oracle {want:?}")),
    }
}

/// Library metrics against the oracle over `logs` synthetic logs of 1..=30
/// episodes each, plus one compliance case per log.
pub fn check(logs: usize, tol: f64) -> Result<(), String> {
    use hecg_core::metrics::{compliance_metrics, plan_metrics, tsr_suite};
    let reference = reference();
    for i in 0..logs as u64 {
        let n = 1 + (i as usize * 7) % 30;
        let log = log(i, n);
        let ctx = |e: String| format!("log {i}: {e}");
        let got = tsr_suite(&log);
        let want = tsr(&log);
        cmp("tsr", got.tsr, want.tsr, tol).map_err(ctx)?;
        cmp("tsr_r", got.tsr_r, want.tsr_r, tol).map_err(ctx)?;
        cmp("tsr_r_sum", got.tsr_r_sum, want.tsr_r_sum, tol).map_err(ctx)?;
        cmp_opt("tsr_c", got.tsr_c, want.tsr_c, tol).map_err(ctx)?;
        cmp("er", got.er, want.er, tol).map_err(ctx)?;
        if got.error_ratios.len() != want.error_ratios.len() {
            return Err(ctx("error ratio keys differ".into()));
        }
        for (k, v) in &want.error_ratios {
            cmp(k.name(), got.error_ratios.get(k).copied().unwrap_or(-1.0), *v, tol).map_err(ctx)?;
        }
        for (f, v) in &got.family_ratios {
            let name = format!("{f:?}").to_lowercase();
            cmp(&name, *v, want.family_ratios.get(name.as_str()).copied().unwrap_or(0.0), tol).map_err(ctx)?;
        }
        if !want.error_ratios.is_empty() {
            cmp("error ratio sum", got.error_ratios.values().sum(), 1.0, tol).map_err(ctx)?;
        }

        let optimal = 1 + (i as usize % 6);
        let got = plan_metrics(&log, Some(&reference), Some(optimal), true).map_err(|e| ctx(e.to_string()))?;
        let want = plan(&log, &reference, optimal);
        cmp("sr_final", got.sr_final, want.sr_final, tol).map_err(ctx)?;
        cmp("sr_original", got.sr_original, want.sr_original, tol).map_err(ctx)?;
        cmp("improvement", got.improvement, want.improvement, tol).map_err(ctx)?;
        cmp_opt("action_accuracy", got.action_accuracy, Some(want.action_accuracy), tol).map_err(ctx)?;
        cmp_opt("efficiency", got.efficiency, Some(want.efficiency), tol).map_err(ctx)?;
        cmp_opt("cv", got.cv, want.cv, tol).map_err(ctx)?;

        let c = compliance_case(i);
        let got = compliance_metrics(&c.initial, &c.final_, &c.goals, c.executed_len, c.optimal_len);
        let want = compliance(&c);
        cmp("compliance", got.compliance, want.compliance, tol).map_err(ctx)?;
        cmp("soft_recall", got.soft_recall, want.soft_recall, tol).map_err(ctx)?;
        cmp("soft_precision", got.soft_precision, want.soft_precision, tol).map_err(ctx)?;
        cmp("soft_f1", got.soft_f1, want.soft_f1, tol).map_err(ctx)?;
        cmp("size_penalty", got.size_penalty, want.size_penalty, tol).map_err(ctx)?;
        cmp("composite", got.composite, want.composite, tol).map_err(ctx)?;
    }
    Ok(())
}
