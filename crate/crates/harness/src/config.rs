//! Experiment configuration: one TOML file, overridable from the command line
//! with dotted `key=value` assignments.

use std::path::{Path, PathBuf};

use orthograd::optim::{OptimConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corrupt::Operator;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoMoons {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        /// Seed of the synthetic population. Fixed across runs so every seed
        /// sees the same test set; the run seed drives subsampling only.
        #[serde(default)]
        data_seed: u64,
    },
    GaussianBlobs {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        /// Standard deviation of each blob around its center.
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        data_seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
        /// `[height, width]` when the feature vector is a flattened grid.
        #[serde(default)]
        grid: Option<[usize; 2]>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
}

fn default_n_train() -> usize {
    10_000
}
fn default_n_test() -> usize {
    2_000
}
fn default_noise() -> f64 {
    0.1
}
fn default_classes() -> usize {
    3
}
fn default_dim() -> usize {
    2
}
fn default_spread() -> f64 {
    1.0
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoMoons {
            n_train: default_n_train(),
            n_test: default_n_test(),
            noise: default_noise(),
            data_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    /// Hidden layer widths; input and output sizes come from the dataset.
    pub hidden: Vec<usize>,
    pub has_bias: bool,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self { hidden: vec![64, 64], has_bias: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub operators: Vec<Operator>,
    pub severities: Vec<u8>,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self { operators: vec![Operator::GaussianNoise], severities: vec![1, 2, 3, 4, 5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    /// Z-score features with statistics of the training split.
    pub standardize: bool,
    pub network: NetworkSpec,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub label_fraction: f64,
    pub ece_bins: usize,
    pub corruption: CorruptionConfig,
    pub output_dir: PathBuf,
    /// Worker threads for seeds; 0 uses every core.
    pub parallelism: usize,
    /// Write one NDJSON line per parameter group and step.
    pub trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: DatasetSpec::default(),
            standardize: true,
            network: NetworkSpec::default(),
            optim: OptimConfig::default(),
            epochs: 100,
            batch_size: 64,
            seeds: vec![0],
            label_fraction: 0.1,
            ece_bins: orthograd::calibration::DEFAULT_BINS,
            corruption: CorruptionConfig::default(),
            output_dir: PathBuf::from("out"),
            parallelism: 0,
            trace: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        // `--set dataset.n_train=..` without a file creates a table with no tag
        if let Some(ds) = value.get_mut("dataset").and_then(|d| d.as_table_mut()) {
            ds.entry("kind").or_insert_with(|| "two_moons".into());
        }
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(HarnessError::Config(format!("label_fraction must be in (0, 1], got {}", self.label_fraction)));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be >= 1".into()));
        }
        if self.ece_bins == 0 {
            return Err(HarnessError::Config("ece_bins must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(HarnessError::Config(format!("seed {s} listed twice")));
            }
        }
        if let Some(bad) = self.corruption.severities.iter().find(|&&s| !(1..=5).contains(&s)) {
            return Err(HarnessError::Config(format!("severity {bad} outside 1..=5")));
        }
        if self.network.hidden.contains(&0) {
            return Err(HarnessError::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, leaving out settings that do not
    /// change results (output location, thread count, tracing).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.parallelism = 0;
        c.trace = false;
        hash_json(&c)
    }

    /// Like [`hash`](Self::hash) but also blind to the optimizer variant, so
    /// runs that differ only in the variant share it.
    pub fn protocol_hash(&self) -> String {
        let mut c = self.clone();
        c.optim.variant = Variant::Sgd;
        c.hash()
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.optim.variant = variant;
        c
    }
}

fn hash_json<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_vec(v).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// Applies `a.b.c=value` to a TOML tree. The value is parsed as TOML when it
/// can be (numbers, booleans, arrays, quoted strings) and taken as a bare
/// string otherwise.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(HarnessError::Config(format!("override `{assignment}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{key}`: `{part}` is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| HarnessError::Config(format!("`{key}` does not address a table entry")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "moons"
seeds = [0, 1, 2]
epochs = 5

[dataset]
kind = "two_moons"
n_train = 1000

[optim]
variant = "perp_renorm"
"#;

    #[test]
    fn dataset_override_without_kind_uses_default_dataset() {
        let c = ExperimentConfig::from_toml_str("", &["dataset.n_train=300".into()]).unwrap();
        assert!(matches!(c.dataset, DatasetSpec::TwoMoons { n_train: 300, .. }));
    }

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml_str(SAMPLE, &[]).unwrap();
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.optim.eta, 0.01);
        assert_eq!(c.optim.momentum, 0.9);
        assert_eq!(c.optim.weight_decay, 5e-4);
        match c.dataset {
            DatasetSpec::TwoMoons { n_train, n_test, .. } => assert_eq!((n_train, n_test), (1000, 2000)),
            _ => panic!("wrong dataset"),
        }
    }

    #[test]
    fn overrides_replace_and_create_keys() {
        let o = [
            "epochs=7".to_string(),
            "optim.variant=sgd".to_string(),
            "optim.eta = 0.5".to_string(),
            "network.hidden=[8, 8]".to_string(),
            "name=other".to_string(),
        ];
        let c = ExperimentConfig::from_toml_str(SAMPLE, &o).unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.optim.variant, Variant::Sgd);
        assert_eq!(c.optim.eta, 0.5);
        assert_eq!(c.network.hidden, vec![8, 8]);
        assert_eq!(c.name, "other");
    }

    #[test]
    fn rejects_bad_values() {
        for o in ["label_fraction=0", "seeds=[1, 1]", "optim.eta=-1", "bogus=1", "corruption.severities=[6]"] {
            assert!(ExperimentConfig::from_toml_str(SAMPLE, &[o.to_string()]).is_err(), "{o}");
        }
        assert!(ExperimentConfig::from_toml_str(SAMPLE, &["noequals".into()]).is_err());
    }

    #[test]
    fn hash_ignores_execution_settings() {
        let a = ExperimentConfig::from_toml_str(SAMPLE, &[]).unwrap();
        let b = ExperimentConfig::from_toml_str(SAMPLE, &["output_dir=elsewhere".into(), "parallelism=3".into()])
            .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_toml_str(SAMPLE, &["epochs=6".into()]).unwrap();
        assert_ne!(a.hash(), c.hash());
        let d = a.with_variant(Variant::Sgd);
        assert_ne!(a.hash(), d.hash());
        assert_eq!(a.protocol_hash(), d.protocol_hash());
    }
}
