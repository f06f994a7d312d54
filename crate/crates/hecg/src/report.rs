//! Rendering of metric reports as aligned text tables and CSV.
//!
//! Soft precision and the composite score are defined by convention rather
//! than by a published formula; their columns carry a `(convention)` label.

use hecg_core::error_engine::ErrorFamily;
use hecg_core::metrics::{MetricReport, RegimeTable, TaskReport};
use hecg_core::policy::Regime;
use hecg_core::{EdgeKind, ErrorKind};
use serde::{Deserialize, Serialize};

pub const METRIC_COLUMNS: [&str; 20] = [
    "task",
    "episodes",
    "sr_final",
    "sr_original",
    "improvement",
    "action_accuracy",
    "efficiency",
    "cv",
    "tsr",
    "tsr_r (mean)",
    "tsr_r (sum)",
    "tsr_c",
    "er",
    "compliance",
    "soft_recall",
    "soft_precision (convention)",
    "soft_f1",
    "size_penalty",
    "composite (convention)",
    "recovery_steps",
];

const EDGE_COLUMNS: [EdgeKind; 4] = [EdgeKind::Main, EdgeKind::Opt, EdgeKind::Corr, EdgeKind::Fb];

fn num(x: f64) -> String {
    format!("{x:.4}")
}

fn opt(x: Option<f64>, absent: &str) -> String {
    x.map(num).unwrap_or_else(|| absent.to_string())
}

fn task_row(name: &str, t: &TaskReport, absent: &str) -> Vec<String> {
    let (p, s, c) = (&t.plan, &t.tsr, &t.compliance);
    vec![
        name.to_string(),
        t.episodes.to_string(),
        num(p.sr_final),
        num(p.sr_original),
        num(p.improvement),
        opt(p.action_accuracy, absent),
        opt(p.efficiency, absent),
        opt(p.cv, absent),
        num(s.tsr),
        num(s.tsr_r),
        num(s.tsr_r_sum),
        opt(s.tsr_c, absent),
        num(s.er),
        num(c.compliance),
        num(c.soft_recall),
        num(c.soft_precision),
        num(c.soft_f1),
        num(c.size_penalty),
        num(c.composite),
        num(t.mean_recovery_steps),
    ]
}

/// Left-aligned first column, right-aligned others, two-space gutters.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, s)| if i == 0 { format!("{s:<w$}", w = width[i]) } else { format!("{s:>w$}", w = width[i]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(rows: &[Vec<String>]) -> String {
    rows.iter().map(|r| r.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(",") + "\n").collect()
}

fn metric_rows(r: &MetricReport, absent: &str) -> Vec<Vec<String>> {
    let mut rows = vec![METRIC_COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for (name, t) in &r.per_task {
        rows.push(task_row(name, t, absent));
    }
    rows.push(task_row("all", &r.aggregate, absent));
    rows
}

/// The main text report: metric table, error breakdown and regime table.
pub fn text_report(r: &MetricReport) -> String {
    let mut out = align(&metric_rows(r, "-"));
    out.push('\n');
    out.push_str(&error_table(r));
    out.push('\n');
    out.push_str(&regime_table(&r.aggregate.regimes));
    out
}

pub fn metrics_csv(r: &MetricReport) -> String {
    to_csv(&metric_rows(r, ""))
}

/// Share of each error type and family among all failures.
pub fn error_table(r: &MetricReport) -> String {
    let t = &r.aggregate.tsr;
    let mut rows = vec![vec!["error type".to_string(), "share".to_string()]];
    for k in ErrorKind::ALL {
        rows.push(vec![k.name().to_string(), num(t.error_ratios.get(&k).copied().unwrap_or(0.0))]);
    }
    for f in ErrorFamily::ALL {
        rows.push(vec![format!("family: {}", f.as_str()), num(t.family_ratios.get(&f).copied().unwrap_or(0.0))]);
    }
    align(&rows)
}

fn regime_cells(t: &RegimeTable, regime: Regime, pct: bool) -> Vec<String> {
    let mut row: Vec<String> = EDGE_COLUMNS
        .iter()
        .map(|k| match t.share(regime, *k) {
            Some(s) if pct => format!("{:.1}%", 100.0 * s),
            Some(s) => num(s),
            None if pct => "-".into(),
            None => String::new(),
        })
        .collect();
    row.push(t.total(regime).to_string());
    row
}

fn regime_header(first: &[&str]) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain(EDGE_COLUMNS.iter().map(|k| k.as_str().to_string()))
        .chain(["n".into()])
        .collect()
}

/// Edge-kind distribution per error regime: one row per regime, one column
/// per edge kind, as percentages of the regime's decisions.
pub fn regime_table(t: &RegimeTable) -> String {
    let mut rows = vec![regime_header(&["regime"])];
    for r in Regime::ALL {
        let mut row = vec![r.as_str().to_string()];
        row.extend(regime_cells(t, r, true));
        rows.push(row);
    }
    align(&rows)
}

/// Heatmap grid: `label,regime,main,opt,corr,fb,n` with shares in `[0, 1]`.
pub fn regime_csv<'a>(tables: impl IntoIterator<Item = (&'a str, &'a RegimeTable)>) -> String {
    let mut rows = vec![regime_header(&["label", "regime"])];
    for (label, t) in tables {
        for r in Regime::ALL {
            let mut row = vec![label.to_string(), r.as_str().to_string()];
            row.extend(regime_cells(t, r, false));
            rows.push(row);
        }
    }
    to_csv(&rows)
}

/// One variant of an ablation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: String,
    pub tsr: f64,
    pub sr_final: f64,
    pub mean_recovery_steps: f64,
    pub regimes: RegimeTable,
}

impl AblationRow {
    pub fn of(label: &str, variant: &str, r: &MetricReport) -> Self {
        AblationRow {
            label: label.to_string(),
            variant: variant.to_string(),
            tsr: r.aggregate.tsr.tsr,
            sr_final: r.aggregate.plan.sr_final,
            mean_recovery_steps: r.aggregate.mean_recovery_steps,
            regimes: r.aggregate.regimes.clone(),
        }
    }
}

fn ablation_rows(rows: &[AblationRow]) -> Vec<Vec<String>> {
    let mut out = vec![["variant", "tsr", "sr_final", "recovery_steps"].map(String::from).to_vec()];
    out.extend(rows.iter().map(|r| vec![r.label.clone(), num(r.tsr), num(r.sr_final), num(r.mean_recovery_steps)]));
    out
}

pub fn ablation_text(rows: &[AblationRow]) -> String {
    let mut out = align(&ablation_rows(rows));
    for r in rows {
        out.push_str(&format!("\n{}\n", r.label));
        out.push_str(&regime_table(&r.regimes));
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    to_csv(&ablation_rows(rows))
}

/// One threshold scale of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: f64,
    pub local_threshold: f64,
    pub max_threshold: f64,
    pub tsr: f64,
    pub sr_final: f64,
    pub mean_recovery_steps: f64,
    /// Share of main-edge choices among all routing decisions.
    pub main_share: f64,
}

fn sweep_rows(rows: &[SweepRow]) -> Vec<Vec<String>> {
    let mut out = vec![["scale", "epsilon", "epsilon_max", "tsr", "sr_final", "recovery_steps", "main_share"]
        .map(String::from)
        .to_vec()];
    out.extend(rows.iter().map(|r| {
        vec![
            format!("{}", r.scale),
            num(r.local_threshold),
            num(r.max_threshold),
            num(r.tsr),
            num(r.sr_final),
            num(r.mean_recovery_steps),
            num(r.main_share),
        ]
    }));
    out
}

pub fn sweep_text(rows: &[SweepRow]) -> String {
    align(&sweep_rows(rows))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    to_csv(&sweep_rows(rows))
}
