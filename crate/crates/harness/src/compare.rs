//! Cross-seed summaries and optimizer-versus-optimizer comparisons.

use std::collections::{BTreeMap, BTreeSet};

use orthograd::calibration::CalibrationReport;
use orthograd::optim::Variant;
use orthograd::stats::{
    aggregate, compare, compare_sets, comparison_csv, comparison_markdown, metric_label, ComparisonStats,
    MetricSummary, SeedMetricSet, TABLE_ROWS,
};
use serde::{Deserialize, Serialize};

use crate::corrupt::Operator;
use crate::error::{HarnessError, Result};
use crate::record::RunRecord;

/// Metrics tabulated per corruption level.
pub const CORRUPTION_METRICS: [&str; 5] = ["top1_acc", "nll", "ece", "conf_acc_corr", "mean_entropy"];

/// The table metrics of one report, plus the correlation when defined.
pub fn report_metrics(r: &CalibrationReport) -> BTreeMap<String, f64> {
    let mut m: BTreeMap<String, f64> = [
        ("top1_acc", r.top1_acc),
        ("top5_acc", r.top5_acc),
        ("nll", r.nll),
        ("ece", r.ece),
        ("brier", r.brier),
        ("mean_entropy", r.mean_entropy),
        ("mean_max_softmax", r.mean_max_softmax),
        ("mean_max_logit", r.mean_max_logit),
        ("mean_logit_variance", r.mean_logit_variance),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    if let Some(c) = r.conf_acc_corr {
        m.insert("conf_acc_corr".into(), c);
    }
    m
}

/// Clean-test metrics of a record plus weight norm and temperature-scaling results.
pub fn record_metrics(r: &RunRecord) -> SeedMetricSet {
    let mut metrics = report_metrics(&r.clean);
    metrics.insert("final_theta_norm".into(), r.final_theta_norm);
    metrics.insert("t_star".into(), r.temperature.val.t_star);
    metrics.insert("ts_nll".into(), r.temperature.test.nll_after);
    metrics.insert("ts_ece".into(), r.temperature.test.ece_after);
    metrics.insert("ts_brier".into(), r.temperature.test.brier_after);
    SeedMetricSet { seed: r.seed, metrics }
}

/// Drops metrics missing from any set (an undefined correlation in one seed)
/// and returns their names.
fn common_metrics(sets: &mut [SeedMetricSet]) -> Vec<String> {
    let all: BTreeSet<String> = sets.iter().flat_map(|s| s.metrics.keys().cloned()).collect();
    let dropped: Vec<String> =
        all.into_iter().filter(|k| sets.iter().any(|s| !s.metrics.contains_key(k))).collect();
    for s in sets.iter_mut() {
        for k in &dropped {
            s.metrics.remove(k);
        }
    }
    dropped
}

/// Which direction counts as better for a metric, if any.
pub fn better_direction(metric: &str) -> Option<Direction> {
    match metric {
        "top1_acc" | "top5_acc" | "mean_entropy" | "conf_acc_corr" => Some(Direction::Higher),
        "nll" | "ece" | "brier" | "mean_max_softmax" | "mean_max_logit" | "mean_logit_variance" | "t_star"
        | "ts_nll" | "ts_ece" | "ts_brier" => Some(Direction::Lower),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Higher,
    Lower,
}

/// Metrics where the published SGD-versus-orthogonalized comparison favoured
/// the orthogonalized optimizer (every Table-1 row, the correlation, and the
/// lower fitted temperature).
fn paper_favours_perp(metric: &str) -> bool {
    TABLE_ROWS.iter().any(|(k, _)| *k == metric) || metric == "conf_acc_corr" || metric == "t_star"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionEntry {
    pub metric: String,
    pub better: Direction,
    /// Label of the group with the better mean, or `"tie"`.
    pub winner: String,
    /// Label of the group the published comparison favoured, when one side is
    /// SGD and the other an orthogonalized variant.
    pub paper_winner: Option<String>,
    pub agrees_with_paper: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionCell {
    pub operator: Operator,
    pub severity: u8,
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Absent with fewer than two seeds per group.
    pub stats: Option<ComparisonStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub label_a: String,
    pub label_b: String,
    pub variant_a: Variant,
    pub variant_b: Variant,
    pub protocol_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonStats>,
    /// Metrics left out because they were undefined for some seed.
    pub omitted: Vec<String>,
    pub direction: Vec<DirectionEntry>,
    pub corruption: Vec<CorruptionCell>,
}

fn check_protocol(records: &[RunRecord], side: &str) -> Result<(Variant, String)> {
    let first = records
        .first()
        .ok_or_else(|| HarnessError::Schema(format!("no records for {side}")))?;
    for r in records {
        if r.protocol_hash != first.protocol_hash || r.variant != first.variant {
            return Err(HarnessError::Schema(format!(
                "{side}: seed {} was produced by a different configuration than seed {}",
                r.seed, first.seed
            )));
        }
    }
    Ok((first.variant, first.protocol_hash.clone()))
}

/// Per-metric statistics of `a` against `b`. The records must share one
/// protocol (configuration up to the optimizer variant) and one seed list.
pub fn compare_runs(a: &[RunRecord], b: &[RunRecord], label_a: &str, label_b: &str) -> Result<ComparisonReport> {
    let (variant_a, hash_a) = check_protocol(a, label_a)?;
    let (variant_b, hash_b) = check_protocol(b, label_b)?;
    if hash_a != hash_b {
        return Err(HarnessError::Config(format!(
            "{label_a} and {label_b} differ in more than the optimizer variant (protocol {hash_a} vs {hash_b})"
        )));
    }
    let mut sets_a: Vec<SeedMetricSet> = a.iter().map(record_metrics).collect();
    let mut sets_b: Vec<SeedMetricSet> = b.iter().map(record_metrics).collect();
    let mut joined: Vec<SeedMetricSet> = sets_a.iter().chain(&sets_b).cloned().collect();
    let omitted = common_metrics(&mut joined);
    for s in sets_a.iter_mut().chain(sets_b.iter_mut()) {
        for k in &omitted {
            s.metrics.remove(k);
        }
    }
    let rows = compare_sets(&sets_a, &sets_b)?;

    let perp_side = match (variant_a, variant_b) {
        (Variant::Sgd, v) if v != Variant::Sgd => Some(label_b),
        (v, Variant::Sgd) if v != Variant::Sgd => Some(label_a),
        _ => None,
    };
    let direction = rows
        .iter()
        .filter_map(|r| {
            let better = better_direction(&r.metric)?;
            let a_better = match better {
                Direction::Higher => r.mean_a > r.mean_b,
                Direction::Lower => r.mean_a < r.mean_b,
            };
            let winner = if r.mean_a == r.mean_b {
                "tie".to_string()
            } else if a_better {
                label_a.to_string()
            } else {
                label_b.to_string()
            };
            let paper_winner = perp_side.filter(|_| paper_favours_perp(&r.metric)).map(str::to_string);
            let agrees_with_paper = paper_winner.as_ref().map(|p| *p == winner);
            Some(DirectionEntry { metric: r.metric.clone(), better, winner, paper_winner, agrees_with_paper })
        })
        .collect();

    Ok(ComparisonReport {
        label_a: label_a.into(),
        label_b: label_b.into(),
        variant_a,
        variant_b,
        protocol_hash: hash_a,
        seeds: a.iter().map(|r| r.seed).collect(),
        rows,
        omitted,
        direction,
        corruption: corruption_cells(a, b)?,
    })
}

fn corruption_metric(r: &RunRecord, op: Operator, severity: u8, metric: &str) -> Option<f64> {
    let c = r.corruption_result(op, severity)?;
    report_metrics(&c.report).get(metric).copied()
}

fn corruption_levels(records: &[RunRecord]) -> BTreeSet<(Operator, u8)> {
    records.iter().flat_map(|r| r.corruption.iter().map(|c| (c.operator, c.severity))).collect()
}

fn corruption_cells(a: &[RunRecord], b: &[RunRecord]) -> Result<Vec<CorruptionCell>> {
    let levels = corruption_levels(a);
    if levels != corruption_levels(b) {
        return Err(HarnessError::Config("the two groups were evaluated on different corruption levels".into()));
    }
    let mut cells = Vec::new();
    for (operator, severity) in levels {
        for metric in CORRUPTION_METRICS {
            let va: Vec<f64> = a.iter().filter_map(|r| corruption_metric(r, operator, severity, metric)).collect();
            let vb: Vec<f64> = b.iter().filter_map(|r| corruption_metric(r, operator, severity, metric)).collect();
            if va.is_empty() || vb.is_empty() {
                continue;
            }
            let stats = if va.len() >= 2 && vb.len() >= 2 {
                let mut s = compare(&va, &vb)?;
                s.metric = metric.to_string();
                Some(s)
            } else {
                None
            };
            cells.push(CorruptionCell {
                operator,
                severity,
                metric: metric.to_string(),
                mean_a: orthograd::stats::mean(&va),
                mean_b: orthograd::stats::mean(&vb),
                stats,
            });
        }
    }
    Ok(cells)
}

impl ComparisonReport {
    pub fn to_markdown(&self) -> String {
        let (a, b) = (&self.label_a, &self.label_b);
        let mut out = format!("# {a} vs {b}\n\nSeeds: {} ({:?})\n\n", self.seeds.len(), self.seeds);
        out.push_str(&comparison_markdown(&self.rows, a, b));
        if !self.omitted.is_empty() {
            out.push_str(&format!("\nOmitted (undefined for some seed): {}\n", self.omitted.join(", ")));
        }

        out.push_str("\n## Direction\n\n| Metric | Better | Winner | Published winner |\n|---|---|---|---|\n");
        for d in &self.direction {
            let better = match d.better {
                Direction::Higher => "higher",
                Direction::Lower => "lower",
            };
            out.push_str(&format!(
                "| {} | {better} | {} | {} |\n",
                metric_label(&d.metric),
                d.winner,
                d.paper_winner.as_deref().unwrap_or("-")
            ));
        }

        let operators: BTreeSet<Operator> = self.corruption.iter().map(|c| c.operator).collect();
        for op in operators {
            out.push_str(&format!("\n## {op}\n\n| Severity |"));
            let metrics: Vec<&str> =
                CORRUPTION_METRICS.iter().copied().filter(|m| self.corruption.iter().any(|c| c.metric == *m)).collect();
            for m in &metrics {
                out.push_str(&format!(" {} ({a}) | {} ({b}) |", metric_label(m), metric_label(m)));
            }
            out.push_str(&format!("\n|---|{}\n", "---|---|".repeat(metrics.len())));
            let severities: BTreeSet<u8> =
                self.corruption.iter().filter(|c| c.operator == op).map(|c| c.severity).collect();
            for s in severities {
                out.push_str(&format!("| {s} |"));
                for m in &metrics {
                    match self.corruption.iter().find(|c| c.operator == op && c.severity == s && c.metric == *m) {
                        Some(c) => out.push_str(&format!(" {:.4} | {:.4} |", c.mean_a, c.mean_b)),
                        None => out.push_str(" - | - |"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// The main table as CSV (full precision).
    pub fn to_csv(&self) -> String {
        comparison_csv(&self.rows)
    }

    /// Per-corruption cells as CSV.
    pub fn corruption_csv(&self) -> String {
        let mut out = String::from("operator,severity,metric,mean_a,mean_b,effect_size,ci_lo,ci_hi,p_value\n");
        for c in &self.corruption {
            let stats = c.stats.as_ref().map_or(",,,".to_string(), |s| {
                format!("{},{},{},{}", s.effect_size, s.ci_lo, s.ci_hi, s.p_value)
            });
            out.push_str(&format!("{},{},{},{},{},{stats}\n", c.operator, c.severity, c.metric, c.mean_a, c.mean_b));
        }
        out
    }
}

/// Mean and SD of every clean metric across the records of one run.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<MetricSummary>> {
    let mut sets: Vec<SeedMetricSet> = records.iter().map(record_metrics).collect();
    common_metrics(&mut sets);
    Ok(aggregate(&sets)?)
}

pub fn summary_markdown(label: &str, rows: &[MetricSummary]) -> String {
    let mut out = format!("| Metric | {label} mean | SD | n |\n|---|---|---|---|\n");
    for r in rows {
        let sd = r.sd.map_or("-".to_string(), |s| format!("{s:.4}"));
        out.push_str(&format!("| {} | {:.4} | {sd} | {} |\n", metric_label(&r.metric), r.mean, r.n));
    }
    out
}

pub fn summary_csv(rows: &[MetricSummary]) -> String {
    let mut out = String::from("metric,n,mean,sd\n");
    for r in rows {
        let sd = r.sd.map_or(String::new(), |s| s.to_string());
        out.push_str(&format!("{},{},{},{sd}\n", r.metric, r.n, r.mean));
    }
    out
}
