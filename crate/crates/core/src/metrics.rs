//! Evaluation metrics over episode results.
//!
//! All aggregations first sort episodes by (scenario, seed) so results do
//! not depend on the order episodes finished in.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{ActionScript, Predicate, WorldState};
use crate::error_engine::{ErrorFamily, ErrorKind};
use crate::graph::EdgeKind;
use crate::math;
use crate::policy::Regime;
use crate::scenario::WeightedGoal;
use crate::traversal::{EpisodeResult, EpisodeStatus};

/// The metric-relevant facts of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub scenario: String,
    pub seed: u64,
    pub status: EpisodeStatus,
    pub steps: u32,
    pub goals_total: usize,
    pub goals_satisfied: usize,
    /// Classified error kinds, in order.
    pub errors: Vec<ErrorKind>,
    pub replans: usize,
    pub correction_substeps: usize,
    pub option_switches: usize,
    /// Actions of primary steps that left along a main edge.
    pub main_actions: Vec<ActionScript>,
    pub decisions: Vec<(Regime, EdgeKind)>,
}

impl EpisodeSummary {
    pub fn of(r: &EpisodeResult) -> Self {
        EpisodeSummary {
            scenario: r.scenario.clone(),
            seed: r.seed,
            status: r.status,
            steps: r.steps,
            goals_total: r.goals_total,
            goals_satisfied: r.goals_satisfied,
            errors: r.history.failures.iter().map(|f| f.kind).collect(),
            replans: r.history.replans.len(),
            correction_substeps: r.history.correction_substeps(),
            option_switches: r.history.option_switches(),
            main_actions: r.history.main_actions().into_iter().cloned().collect(),
            decisions: r.history.decisions.iter().map(|d| (d.regime, d.chosen)).collect(),
        }
    }

    pub fn goal_ratio(&self) -> f64 {
        if self.goals_total == 0 {
            1.0
        } else {
            self.goals_satisfied as f64 / self.goals_total as f64
        }
    }

    pub fn succeeded(&self) -> bool {
        self.status == EpisodeStatus::Success
    }

    pub fn had_failure(&self) -> bool {
        !self.errors.is_empty()
    }

    /// L1 sub-steps plus L2 switches plus L3 events.
    pub fn recovery_steps(&self) -> usize {
        self.correction_substeps + self.option_switches + self.replans
    }

    pub fn corrected(&self) -> bool {
        self.correction_substeps > 0 || self.option_switches > 0
    }
}

fn sorted(eps: &[EpisodeSummary]) -> Vec<&EpisodeSummary> {
    let mut v: Vec<&EpisodeSummary> = eps.iter().collect();
    v.sort_by(|a, b| {
        (a.scenario.as_str(), a.seed, a.steps, a.goals_satisfied).cmp(&(
            b.scenario.as_str(),
            b.seed,
            b.steps,
            b.goals_satisfied,
        ))
    });
    v
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("action accuracy needs a reference action list")]
    MissingReference,
    #[error("optimal plan length must be at least 1")]
    BadOptimalLength,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub sr_final: f64,
    pub sr_original: f64,
    pub improvement: f64,
    pub action_accuracy: Option<f64>,
    pub efficiency: Option<f64>,
    /// Coefficient of variation of per-episode goal ratios; absent when the mean is 0.
    pub cv: Option<f64>,
}

/// Positional matches over the executed main-edge actions.
pub fn action_accuracy(executed: &[ActionScript], reference: &[ActionScript]) -> f64 {
    if executed.is_empty() {
        return 0.0;
    }
    let hits = executed.iter().zip(reference).filter(|(a, b)| a.canonical() == b.canonical()).count();
    hits as f64 / executed.len() as f64
}

pub fn plan_metrics(
    eps: &[EpisodeSummary],
    reference: Option<&[ActionScript]>,
    optimal_len: Option<usize>,
    want_accuracy: bool,
) -> Result<PlanMetrics, MetricsError> {
    if want_accuracy && reference.is_none() {
        return Err(MetricsError::MissingReference);
    }
    if optimal_len == Some(0) {
        return Err(MetricsError::BadOptimalLength);
    }
    let eps = sorted(eps);
    if eps.is_empty() {
        return Ok(PlanMetrics::default());
    }
    let n = eps.len() as f64;
    let sr_final = eps.iter().filter(|e| e.succeeded()).count() as f64 / n;
    let sr_original = eps.iter().filter(|e| e.succeeded() && e.replans == 0).count() as f64 / n;
    let action_accuracy =
        reference.map(|r| mean(eps.iter().map(|e| action_accuracy(&e.main_actions, r))).unwrap_or(0.0));
    let efficiency = optimal_len.map(|o| {
        mean(eps.iter().map(|e| if e.steps == 0 { 1.0 } else { (o as f64 / e.steps as f64).min(1.0) })).unwrap_or(0.0)
    });
    let ratios: Vec<f64> = eps.iter().map(|e| e.goal_ratio()).collect();
    let mu = ratios.iter().sum::<f64>() / n;
    let cv = (mu > 0.0).then(|| {
        let var = ratios.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / n;
        math::sqrt(var) / mu
    });
    Ok(PlanMetrics { sr_final, sr_original, improvement: sr_final - sr_original, action_accuracy, efficiency, cv })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TsrMetrics {
    pub tsr: f64,
    /// Mean over executions with at least one failure.
    pub tsr_r: f64,
    /// Summed over executions, as printed in the formula (may exceed 1).
    pub tsr_r_sum: f64,
    /// Goals achieved with explicit corrections over goals achieved after replanning.
    pub tsr_c: Option<f64>,
    /// Share of executions that ended unsuccessfully after a failure.
    pub er: f64,
    pub error_ratios: BTreeMap<ErrorKind, f64>,
    pub family_ratios: BTreeMap<ErrorFamily, f64>,
}

pub fn tsr_suite(eps: &[EpisodeSummary]) -> TsrMetrics {
    let eps = sorted(eps);
    if eps.is_empty() {
        return TsrMetrics::default();
    }
    let tsr = mean(eps.iter().map(|e| e.goal_ratio())).unwrap_or(0.0);
    let replan_term = |e: &EpisodeSummary| {
        if e.replans > 0 && e.goals_total > 0 {
            e.goals_satisfied as f64 / e.goals_total as f64
        } else {
            0.0
        }
    };
    let failing: Vec<&&EpisodeSummary> = eps.iter().filter(|e| e.had_failure()).collect();
    let tsr_r_sum: f64 = failing.iter().map(|e| replan_term(e)).sum();
    let tsr_r = if failing.is_empty() { 0.0 } else { tsr_r_sum / failing.len() as f64 };
    let replan_goals: usize = failing.iter().filter(|e| e.replans > 0).map(|e| e.goals_satisfied).sum();
    let corr_goals: usize = failing.iter().filter(|e| e.replans > 0 && e.corrected()).map(|e| e.goals_satisfied).sum();
    let tsr_c = (replan_goals > 0).then(|| corr_goals as f64 / replan_goals as f64);
    let er = eps.iter().filter(|e| e.had_failure() && !e.succeeded()).count() as f64 / eps.len() as f64;

    let mut counts: BTreeMap<ErrorKind, usize> = BTreeMap::new();
    for e in &eps {
        for k in &e.errors {
            *counts.entry(*k).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    let mut error_ratios = BTreeMap::new();
    let mut family_ratios = BTreeMap::new();
    if total > 0 {
        for (k, c) in &counts {
            error_ratios.insert(*k, *c as f64 / total as f64);
        }
        for f in ErrorFamily::ALL {
            let c: usize = counts.iter().filter(|(k, _)| k.family() == f).map(|(_, c)| c).sum();
            family_ratios.insert(f, c as f64 / total as f64);
        }
    }
    TsrMetrics { tsr, tsr_r, tsr_r_sum, tsr_c, er, error_ratios, family_ratios }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComplianceMetrics {
    pub compliance: f64,
    pub soft_recall: f64,
    pub soft_precision: f64,
    pub soft_f1: f64,
    pub size_penalty: f64,
    pub composite: f64,
}

/// Object-level predicates that differ between the two states.
pub fn state_changes(initial: &WorldState, final_: &WorldState) -> BTreeSet<Predicate> {
    let a = initial.object_predicates();
    let b = final_.object_predicates();
    a.symmetric_difference(&b).cloned().collect()
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn size_penalty(optimal_len: usize, executed_len: usize) -> f64 {
    if executed_len == 0 {
        1.0
    } else {
        (optimal_len as f64 / executed_len as f64).min(1.0)
    }
}

/// Goal compliance and soft scores of one final state.
///
/// A state change is goal-relevant when it mentions an object named in a goal.
pub fn compliance_metrics(
    initial: &WorldState,
    final_: &WorldState,
    goals: &[WeightedGoal],
    executed_len: usize,
    optimal_len: usize,
) -> ComplianceMetrics {
    let sat: Vec<bool> = goals.iter().map(|g| final_.holds(&g.predicate)).collect();
    let compliance =
        if goals.is_empty() { 1.0 } else { sat.iter().filter(|s| **s).count() as f64 / goals.len() as f64 };
    let wsum: f64 = goals.iter().map(|g| g.weight).sum();
    let soft_recall = if wsum > 0.0 {
        goals.iter().zip(&sat).filter(|(_, s)| **s).map(|(g, _)| g.weight).sum::<f64>() / wsum
    } else {
        1.0
    };
    let goal_objects: BTreeSet<&str> = goals.iter().flat_map(|g| g.predicate.args()).collect();
    let changes = state_changes(initial, final_);
    let soft_precision = if changes.is_empty() {
        1.0
    } else {
        changes.iter().filter(|c| c.args().iter().any(|a| goal_objects.contains(a))).count() as f64
            / changes.len() as f64
    };
    let soft_f1 = f1(soft_precision, soft_recall);
    let size_penalty = size_penalty(optimal_len.max(1), executed_len);
    ComplianceMetrics {
        compliance,
        soft_recall,
        soft_precision,
        soft_f1,
        size_penalty,
        composite: soft_f1 * size_penalty,
    }
}

/// Counts of chosen edge kinds per error regime.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegimeTable {
    pub counts: BTreeMap<Regime, BTreeMap<EdgeKind, usize>>,
}

impl RegimeTable {
    pub fn from_decisions<'a>(it: impl IntoIterator<Item = &'a (Regime, EdgeKind)>) -> Self {
        let mut t = RegimeTable::default();
        for (r, k) in it {
            *t.counts.entry(*r).or_default().entry(*k).or_default() += 1;
        }
        t
    }

    pub fn merge(&mut self, other: &RegimeTable) {
        for (r, row) in &other.counts {
            for (k, c) in row {
                *self.counts.entry(*r).or_default().entry(*k).or_default() += c;
            }
        }
    }

    pub fn total(&self, regime: Regime) -> usize {
        self.counts.get(&regime).map(|r| r.values().sum()).unwrap_or(0)
    }

    /// Share of `kind` among decisions in `regime`; absent when the regime is empty.
    pub fn share(&self, regime: Regime, kind: EdgeKind) -> Option<f64> {
        let total = self.total(regime);
        (total > 0)
            .then(|| self.counts.get(&regime).and_then(|r| r.get(&kind)).copied().unwrap_or(0) as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskReport {
    pub episodes: usize,
    pub plan: PlanMetrics,
    pub tsr: TsrMetrics,
    /// Means over episodes.
    pub compliance: ComplianceMetrics,
    pub mean_recovery_steps: f64,
    pub mean_steps: f64,
    pub regimes: RegimeTable,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_task: BTreeMap<String, TaskReport>,
    pub aggregate: TaskReport,
}

/// Per-scenario facts the report needs beyond the episode results.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskInfo {
    pub goals: Vec<WeightedGoal>,
    pub optimal_len: Option<usize>,
    pub reference: Option<Vec<ActionScript>>,
}

fn task_report(results: &[&EpisodeResult], info: Option<&TaskInfo>) -> TaskReport {
    let sums: Vec<EpisodeSummary> = results.iter().map(|r| EpisodeSummary::of(r)).collect();
    let reference = info.and_then(|i| i.reference.as_deref());
    let optimal = info.and_then(|i| i.optimal_len);
    let plan = plan_metrics(&sums, reference, optimal, false).unwrap_or_default();
    let comps: Vec<ComplianceMetrics> = results
        .iter()
        .map(|r| {
            let goals = info.map(|i| i.goals.as_slice()).unwrap_or(&[]);
            let opt = optimal.unwrap_or(r.steps.max(1) as usize);
            compliance_metrics(&r.initial_world, &r.final_world, goals, r.steps as usize, opt)
        })
        .collect();
    let m = |f: fn(&ComplianceMetrics) -> f64| mean(comps.iter().map(f)).unwrap_or(0.0);
    let mut regimes = RegimeTable::default();
    for s in &sums {
        regimes.merge(&RegimeTable::from_decisions(&s.decisions));
    }
    TaskReport {
        episodes: sums.len(),
        tsr: tsr_suite(&sums),
        plan,
        compliance: ComplianceMetrics {
            compliance: m(|c| c.compliance),
            soft_recall: m(|c| c.soft_recall),
            soft_precision: m(|c| c.soft_precision),
            soft_f1: m(|c| c.soft_f1),
            size_penalty: m(|c| c.size_penalty),
            composite: m(|c| c.composite),
        },
        mean_recovery_steps: mean(sums.iter().map(|s| s.recovery_steps() as f64)).unwrap_or(0.0),
        mean_steps: mean(sums.iter().map(|s| s.steps as f64)).unwrap_or(0.0),
        regimes,
    }
}

/// Builds per-scenario and aggregate reports.
pub fn build_report(results: &[EpisodeResult], tasks: &BTreeMap<String, TaskInfo>) -> MetricReport {
    let mut ordered: Vec<&EpisodeResult> = results.iter().collect();
    ordered.sort_by(|a, b| (a.scenario.as_str(), a.seed).cmp(&(b.scenario.as_str(), b.seed)));
    let mut groups: BTreeMap<String, Vec<&EpisodeResult>> = BTreeMap::new();
    for r in &ordered {
        groups.entry(r.scenario.clone()).or_default().push(r);
    }
    let per_task = groups.iter().map(|(name, rs)| (name.clone(), task_report(rs, tasks.get(name)))).collect();
    let mut aggregate = task_report(&ordered, None);
    // Compliance needs each scenario's goals, so average the per-task values weighted by episodes.
    let per: &BTreeMap<String, TaskReport> = &per_task;
    let n: usize = per.values().map(|t| t.episodes).sum();
    if n > 0 {
        let w = |f: fn(&ComplianceMetrics) -> f64| {
            per.values().map(|t| f(&t.compliance) * t.episodes as f64).sum::<f64>() / n as f64
        };
        aggregate.compliance = ComplianceMetrics {
            compliance: w(|c| c.compliance),
            soft_recall: w(|c| c.soft_recall),
            soft_precision: w(|c| c.soft_precision),
            soft_f1: w(|c| c.soft_f1),
            size_penalty: w(|c| c.size_penalty),
            composite: w(|c| c.composite),
        };
    }
    MetricReport { per_task, aggregate }
}
