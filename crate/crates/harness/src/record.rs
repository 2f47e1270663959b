//! Persisted per-seed results and their schema check.

use std::path::{Path, PathBuf};

use orthograd::calibration::{CalibrationReport, TemperatureResult};
use orthograd::optim::{EpochLog, Variant};
use orthograd::stats::TABLE_ROWS;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corrupt::Operator;
use crate::data::SplitSummary;
use crate::error::{io_err, HarnessError, Result};

pub const SCHEMA: &str = "orthograd.run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureOutcome {
    /// Fit on the validation split.
    pub val: TemperatureResult,
    /// The validation-fitted temperature applied to the test split.
    pub test: TemperatureResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionResult {
    pub operator: Operator,
    pub severity: u8,
    pub mean_perturbation: f64,
    pub report: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub name: String,
    pub config_hash: String,
    /// Hash of the configuration with the optimizer variant blanked out.
    pub protocol_hash: String,
    pub variant: Variant,
    pub seed: u64,
    pub splits: SplitSummary,
    pub epochs: Vec<EpochLog>,
    pub initial_theta_norm: f64,
    pub final_theta_norm: f64,
    pub clean: CalibrationReport,
    pub temperature: TemperatureOutcome,
    pub corruption: Vec<CorruptionResult>,
    /// Seconds spent on the seed. Kept out of the JSON so that records are
    /// byte-reproducible; written to `timings.csv` instead.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn corruption_result(&self, operator: Operator, severity: u8) -> Option<&CorruptionResult> {
        self.corruption.iter().find(|c| c.operator == operator && c.severity == severity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

fn field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| HarnessError::Schema(format!("{ctx}: missing `{key}`")))
}

fn number(v: &Value, key: &str, ctx: &str) -> Result<f64> {
    field(v, key, ctx)?
        .as_f64()
        .ok_or_else(|| HarnessError::Schema(format!("{ctx}: `{key}` is not a number")))
}

fn check_report(r: &Value, ctx: &str) -> Result<()> {
    let samples = field(r, "samples", ctx)?
        .as_u64()
        .ok_or_else(|| HarnessError::Schema(format!("{ctx}: `samples` is not an integer")))?;
    for (key, _) in TABLE_ROWS {
        number(r, key, ctx)?;
    }
    let corr = field(r, "conf_acc_corr", ctx)?;
    if !(corr.is_null() || corr.is_f64()) {
        return Err(HarnessError::Schema(format!("{ctx}: `conf_acc_corr` must be a number or null")));
    }
    let ece = number(r, "ece", ctx)?;
    if !(0.0..=1.0).contains(&ece) {
        return Err(HarnessError::Schema(format!("{ctx}: ece {ece} outside [0, 1]")));
    }
    let bins = field(r, "bins", ctx)?
        .as_array()
        .ok_or_else(|| HarnessError::Schema(format!("{ctx}: `bins` is not an array")))?;
    let mut total = 0;
    for (i, b) in bins.iter().enumerate() {
        let bctx = format!("{ctx}.bins[{i}]");
        for key in ["lo", "hi", "mean_confidence", "mean_accuracy"] {
            number(b, key, &bctx)?;
        }
        total += field(b, "count", &bctx)?
            .as_u64()
            .ok_or_else(|| HarnessError::Schema(format!("{bctx}: `count` is not an integer")))?;
    }
    if total != samples {
        return Err(HarnessError::Schema(format!("{ctx}: bin counts sum to {total}, expected {samples}")));
    }
    Ok(())
}

/// Checks the JSON form of a [`RunRecord`] field by field so that problems are
/// reported by name rather than as a deserialization position.
pub fn validate_record_json(v: &Value) -> Result<()> {
    let ctx = "record";
    match field(v, "schema", ctx)?.as_str() {
        Some(SCHEMA) => {}
        other => return Err(HarnessError::Schema(format!("unknown schema {other:?}, expected {SCHEMA:?}"))),
    }
    for key in ["name", "config_hash", "protocol_hash", "variant"] {
        field(v, key, ctx)?
            .as_str()
            .ok_or_else(|| HarnessError::Schema(format!("{ctx}: `{key}` is not a string")))?;
    }
    field(v, "seed", ctx)?
        .as_u64()
        .ok_or_else(|| HarnessError::Schema(format!("{ctx}: `seed` is not an integer")))?;
    number(v, "initial_theta_norm", ctx)?;
    number(v, "final_theta_norm", ctx)?;
    let epochs = field(v, "epochs", ctx)?
        .as_array()
        .ok_or_else(|| HarnessError::Schema(format!("{ctx}: `epochs` is not an array")))?;
    for (i, e) in epochs.iter().enumerate() {
        number(e, "train_loss", &format!("epochs[{i}]"))?;
        number(e, "theta_norm", &format!("epochs[{i}]"))?;
    }
    check_report(field(v, "clean", ctx)?, "clean")?;
    let temp = field(v, "temperature", ctx)?;
    for part in ["val", "test"] {
        let t = field(temp, part, "temperature")?;
        let tctx = format!("temperature.{part}");
        for key in ["t_star", "nll_before", "nll_after", "ece_before", "ece_after", "brier_before", "brier_after"] {
            number(t, key, &tctx)?;
        }
    }
    let val = field(temp, "val", "temperature")?;
    if number(val, "nll_after", "temperature.val")? > number(val, "nll_before", "temperature.val")? + 1e-12 {
        return Err(HarnessError::Schema("temperature.val: nll_after exceeds nll_before".into()));
    }
    let corr = field(v, "corruption", ctx)?
        .as_array()
        .ok_or_else(|| HarnessError::Schema(format!("{ctx}: `corruption` is not an array")))?;
    for (i, c) in corr.iter().enumerate() {
        let cctx = format!("corruption[{i}]");
        let s = field(c, "severity", &cctx)?.as_u64().unwrap_or(0);
        if !(1..=5).contains(&s) {
            return Err(HarnessError::Schema(format!("{cctx}: severity {s} outside 1..=5")));
        }
        number(c, "mean_perturbation", &cctx)?;
        check_report(field(c, "report", &cctx)?, &format!("{cctx}.report"))?;
    }
    Ok(())
}

pub fn record_file_name(seed: u64) -> String {
    format!("seed_{seed}.json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let value: Value = serde_json::from_str(&text)?;
    validate_record_json(&value).map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_value(value)?)
}

/// Every `seed_*.json` in `dir`, validated, in ascending seed order.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let p = entry.map_err(io_err(dir))?.path();
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
        if name.starts_with("seed_") && name.ends_with(".json") {
            paths.push(p);
        }
    }
    let mut records = paths.iter().map(|p| read_record(p)).collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.seed);
    if records.is_empty() {
        return Err(HarnessError::Schema(format!("no seed_*.json records in {}", dir.display())));
    }
    Ok(records)
}
