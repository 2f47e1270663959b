//! CSV tables for external plotting: per-severity metric curves and pooled
//! reliability diagrams.

use std::path::{Path, PathBuf};

use orthograd::calibration::{CalibrationReport, ReliabilityBin};
use orthograd::stats::{mean, sample_variance};
use serde::{Deserialize, Serialize};

use crate::compare::report_metrics;
use crate::corrupt::Operator;
use crate::error::{io_err, HarnessError, Result};
use crate::record::{write_text, RunRecord};

/// Curve files and the report metric each one plots.
pub const CURVES: [(&str, &str); 4] =
    [("accuracy", "top1_acc"), ("loss", "nll"), ("ece", "ece"), ("entropy", "mean_entropy")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub optimizer: String,
    pub operator: Operator,
    pub severity: u8,
    pub n: usize,
    pub mean: f64,
    /// Sample SD across seeds; empty for a single seed.
    pub sd: Option<f64>,
}

fn summarize(optimizer: &str, operator: Operator, severity: u8, values: &[f64]) -> Option<CurveRow> {
    if values.is_empty() {
        return None;
    }
    Some(CurveRow {
        optimizer: optimizer.to_string(),
        operator,
        severity,
        n: values.len(),
        mean: mean(values),
        sd: (values.len() >= 2).then(|| sample_variance(values).sqrt()),
    })
}

fn levels(records: &[RunRecord]) -> Vec<(Operator, u8)> {
    let mut v: Vec<(Operator, u8)> =
        records.iter().flat_map(|r| r.corruption.iter().map(|c| (c.operator, c.severity))).collect();
    v.sort();
    v.dedup();
    v
}

/// One row per (optimizer, operator, severity) for a metric of the corrupted
/// test reports. Clean results are not part of the curve.
pub fn curve_rows(groups: &[(&str, &[RunRecord])], metric: &str) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for (label, records) in groups {
        for (op, s) in levels(records) {
            let values: Vec<f64> = records
                .iter()
                .filter_map(|r| r.corruption_result(op, s))
                .filter_map(|c| report_metrics(&c.report).get(metric).copied())
                .collect();
            rows.extend(summarize(label, op, s, &values));
        }
    }
    rows
}

/// Mean absolute input change per severity, averaged across seeds.
pub fn perturbation_rows(groups: &[(&str, &[RunRecord])]) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for (label, records) in groups {
        for (op, s) in levels(records) {
            let values: Vec<f64> =
                records.iter().filter_map(|r| r.corruption_result(op, s)).map(|c| c.mean_perturbation).collect();
            rows.extend(summarize(label, op, s, &values));
        }
    }
    rows
}

/// Bins of several reports merged by count-weighting each bin's means.
pub fn pool_bins<'a>(reports: impl IntoIterator<Item = &'a CalibrationReport>) -> Vec<ReliabilityBin> {
    let mut pooled: Vec<ReliabilityBin> = Vec::new();
    for r in reports {
        if pooled.is_empty() {
            pooled = r
                .bins
                .iter()
                .map(|b| ReliabilityBin { count: 0, mean_confidence: 0.0, mean_accuracy: 0.0, ..b.clone() })
                .collect();
        }
        for (p, b) in pooled.iter_mut().zip(&r.bins) {
            p.mean_confidence += b.mean_confidence * b.count as f64;
            p.mean_accuracy += b.mean_accuracy * b.count as f64;
            p.count += b.count;
        }
    }
    for p in pooled.iter_mut() {
        if p.count > 0 {
            p.mean_confidence /= p.count as f64;
            p.mean_accuracy /= p.count as f64;
        }
    }
    pooled
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::Ingest {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| HarnessError::Ingest {
                location: format!("{}:{}", path.display(), i + 2),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes every plot table for `groups` into `dir` and returns the paths.
///
/// * `fig1_{accuracy,loss,ece,entropy}.csv`: corruption curves per optimizer
/// * `corruption_perturbation.csv`: input change per severity
/// * `reliability_{label}.csv`, `reliability_{label}_corrupted.csv`: pooled bins
pub fn emit_plotdata(groups: &[(&str, &[RunRecord])], dir: &Path) -> Result<Vec<PathBuf>> {
    if groups.iter().all(|(_, r)| r.is_empty()) {
        return Err(HarnessError::Schema("no records to plot".into()));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for (name, metric) in CURVES {
        let path = dir.join(format!("fig1_{name}.csv"));
        write_curve_csv(&path, &curve_rows(groups, metric))?;
        written.push(path);
    }
    let path = dir.join("corruption_perturbation.csv");
    write_curve_csv(&path, &perturbation_rows(groups))?;
    written.push(path);

    for (label, records) in groups {
        let clean = pool_bins(records.iter().map(|r| &r.clean));
        let path = dir.join(format!("reliability_{label}.csv"));
        write_text(&path, &orthograd::calibration::bins_to_csv(&clean))?;
        written.push(path);
        if records.iter().any(|r| !r.corruption.is_empty()) {
            let corrupted = pool_bins(records.iter().flat_map(|r| r.corruption.iter().map(|c| &c.report)));
            let path = dir.join(format!("reliability_{label}_corrupted.csv"));
            write_text(&path, &orthograd::calibration::bins_to_csv(&corrupted))?;
            written.push(path);
        }
    }
    Ok(written)
}
