//! Datasets: synthetic generators, CSV / IDX ingestion and stratified splits.

use std::io::Read;
use std::path::Path;

use orthograd::rng::{stream, Rng, Stream};
use orthograd::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::DatasetSpec;
use crate::corrupt::FeatureRange;
use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// `[height, width]` when features are a flattened grid.
    pub grid: Option<[usize; 2]>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, grid: Option<[usize; 2]>) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(HarnessError::Config(format!(
                "{} labels for features of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(HarnessError::Config(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self { features, labels, classes, grid })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            grid: self.grid,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

/// Train / validation (temperature fitting) / test splits of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Per-feature bounds of the training split after standardization.
    pub range: FeatureRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub features: usize,
    pub classes: usize,
}

impl Splits {
    pub fn summary(&self) -> SplitSummary {
        SplitSummary {
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
            features: self.train.dim(),
            classes: self.train.classes,
        }
    }
}

/// Two interleaving half circles; labels alternate so classes are balanced.
pub fn two_moons(n: usize, noise: f64, rng: &mut Rng) -> Dataset {
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = std::f64::consts::PI * rng.random::<f64>();
        let y = i % 2;
        let (a, b) = if y == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        let na: f64 = rng.sample(StandardNormal);
        let nb: f64 = rng.sample(StandardNormal);
        data.push(a + noise * na);
        data.push(b + noise * nb);
        labels.push(y);
    }
    Dataset { features: Tensor::new(vec![n, 2], data).expect("shape"), labels, classes: 2, grid: None }
}

/// Isotropic Gaussian clusters around `centers`; labels cycle through classes.
pub fn gaussian_blobs(n: usize, centers: &[Vec<f64>], spread: f64, rng: &mut Rng) -> Dataset {
    let classes = centers.len();
    let dim = centers[0].len();
    let noise = Normal::new(0.0, spread).expect("spread >= 0");
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        for c in &centers[y] {
            data.push(c + noise.sample(rng));
        }
        labels.push(y);
    }
    Dataset { features: Tensor::new(vec![n, dim], data).expect("shape"), labels, classes, grid: None }
}

pub fn blob_centers(classes: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let spread = Normal::new(0.0, 3.0).expect("sd");
    (0..classes).map(|_| (0..dim).map(|_| spread.sample(rng)).collect()).collect()
}

/// CSV with a header row; every column but the last is a feature and the
/// last is an integer class label.
pub fn read_csv(path: &Path) -> Result<(Tensor, Vec<usize>)> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    parse_csv(file, &path.display().to_string())
}

pub fn parse_csv<R: Read>(reader: R, name: &str) -> Result<(Tensor, Vec<usize>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let at = |line: u64| format!("{name}:{line}");
    let headers = rdr
        .headers()
        .map_err(|e| HarnessError::Ingest { location: at(1), message: e.to_string() })?
        .clone();
    if headers.len() < 2 {
        return Err(HarnessError::Ingest {
            location: at(1),
            message: "need at least one feature column and a label column".into(),
        });
    }
    let d = headers.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            HarnessError::Ingest { location: at(line), message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for j in 0..d {
            let v: f64 = rec[j].parse().map_err(|_| HarnessError::Ingest {
                location: at(line),
                message: format!("column {} value {:?} is not a number", j + 1, &rec[j]),
            })?;
            if !v.is_finite() {
                return Err(HarnessError::Ingest {
                    location: at(line),
                    message: format!("column {} is not finite", j + 1),
                });
            }
            data.push(v);
        }
        let y: usize = rec[d].parse().map_err(|_| HarnessError::Ingest {
            location: at(line),
            message: format!("label {:?} is not a non-negative integer", &rec[d]),
        })?;
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(HarnessError::Ingest { location: at(2), message: "no data rows".into() });
    }
    let n = labels.len();
    Ok((Tensor::new(vec![n, d], data).map_err(HarnessError::from)?, labels))
}

/// An IDX array: big-endian header (two zero bytes, a type code, the rank,
/// then one u32 per dimension) followed by big-endian values.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    parse_idx(&bytes, &path.display().to_string())
}

pub fn parse_idx(bytes: &[u8], name: &str) -> Result<IdxArray> {
    let err = |offset: usize, message: String| HarnessError::Ingest { location: format!("{name}: byte {offset}"), message };
    if bytes.len() < 4 {
        return Err(err(0, "file shorter than the 4-byte magic".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(err(0, format!("magic must start with two zero bytes, got {:#04x} {:#04x}", bytes[0], bytes[1])));
    }
    let width = match bytes[2] {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        t => return Err(err(2, format!("unknown type code {t:#04x}"))),
    };
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(err(3, "rank must be >= 1".into()));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(err(bytes.len(), format!("header needs {header} bytes")));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let need = header + count * width;
    if bytes.len() != need {
        return Err(err(bytes.len().min(need), format!("expected {need} bytes for dims {dims:?}, file has {}", bytes.len())));
    }
    let body = &bytes[header..];
    let data = (0..count)
        .map(|i| {
            let b = &body[i * width..(i + 1) * width];
            match bytes[2] {
                0x08 => b[0] as f64,
                0x09 => b[0] as i8 as f64,
                0x0B => i16::from_be_bytes([b[0], b[1]]) as f64,
                0x0C => i32::from_be_bytes(b.try_into().expect("4")) as f64,
                0x0D => f32::from_be_bytes(b.try_into().expect("4")) as f64,
                _ => f64::from_be_bytes(b.try_into().expect("8")),
            }
        })
        .collect();
    Ok(IdxArray { dims, data })
}

/// Encodes `dims` / `data` as an unsigned-byte IDX file (values are truncated to u8).
pub fn encode_idx_u8(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

fn idx_dataset(images: &Path, labels: &Path) -> Result<(Tensor, Vec<usize>, Option<[usize; 2]>)> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    let n = img.dims[0];
    if lab.dims != [n] {
        return Err(HarnessError::Ingest {
            location: labels.display().to_string(),
            message: format!("label dims {:?} do not match {n} images", lab.dims),
        });
    }
    let d: usize = img.dims[1..].iter().product::<usize>().max(1);
    let grid = (img.dims.len() == 3).then(|| [img.dims[1], img.dims[2]]);
    let y = lab
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(HarnessError::Ingest {
                    location: format!("{}: item {i}", labels.display()),
                    message: format!("label {v} is not a class index"),
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Tensor::new(vec![n, d], img.data).map_err(HarnessError::from)?, y, grid))
}

/// Labeled source data before subsampling: a train pool and, when the spec
/// provides one, a fixed test set.
pub fn load_source(spec: &DatasetSpec) -> Result<(Dataset, Option<Dataset>)> {
    match spec {
        DatasetSpec::TwoMoons { n_train, n_test, noise, data_seed } => {
            let mut rng = stream(*data_seed, Stream::Data);
            let train = two_moons(*n_train, *noise, &mut rng);
            let test = two_moons(*n_test, *noise, &mut rng);
            Ok((train, Some(test)))
        }
        DatasetSpec::GaussianBlobs { n_train, n_test, classes, dim, spread, data_seed } => {
            if *classes < 2 || *dim == 0 {
                return Err(HarnessError::Config("gaussian_blobs needs classes >= 2 and dim >= 1".into()));
            }
            let mut rng = stream(*data_seed, Stream::Data);
            let centers = blob_centers(*classes, *dim, &mut rng);
            let train = gaussian_blobs(*n_train, &centers, *spread, &mut rng);
            let test = gaussian_blobs(*n_test, &centers, *spread, &mut rng);
            Ok((train, Some(test)))
        }
        DatasetSpec::Csv { path, test_path, grid } => {
            let (x, y) = read_csv(path)?;
            let test = test_path.as_deref().map(read_csv).transpose()?;
            let classes = y.iter().chain(test.iter().flat_map(|t| t.1.iter())).max().map_or(0, |m| m + 1);
            if let Some([h, w]) = grid {
                if h * w != x.cols() {
                    return Err(HarnessError::Config(format!("grid {h}x{w} does not match {} features", x.cols())));
                }
            }
            let train = Dataset::new(x, y, classes, *grid)?;
            let test = test.map(|(x, y)| Dataset::new(x, y, classes, *grid)).transpose()?;
            check_same_dim(&train, test.as_ref())?;
            Ok((train, test))
        }
        DatasetSpec::Idx { images, labels, test_images, test_labels } => {
            let (x, y, grid) = idx_dataset(images, labels)?;
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some(idx_dataset(i, l)?),
                (None, None) => None,
                _ => return Err(HarnessError::Config("give both test_images and test_labels or neither".into())),
            };
            let classes = y.iter().chain(test.iter().flat_map(|t| t.1.iter())).max().map_or(0, |m| m + 1);
            let train = Dataset::new(x, y, classes, grid)?;
            let test = test.map(|(x, y, g)| Dataset::new(x, y, classes, g)).transpose()?;
            check_same_dim(&train, test.as_ref())?;
            Ok((train, test))
        }
    }
}

fn check_same_dim(train: &Dataset, test: Option<&Dataset>) -> Result<()> {
    match test {
        Some(t) if t.dim() != train.dim() => Err(HarnessError::Config(format!(
            "test set has {} features, train has {}",
            t.dim(),
            train.dim()
        ))),
        _ => Ok(()),
    }
}

fn indices_by_class(labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by[y].push(i);
    }
    by
}

/// Draws `round(fraction * n_c)` indices uniformly within each class `c`
/// (at least one when the class is non-empty). Returned in ascending order.
pub fn stratified_subsample(labels: &[usize], classes: usize, fraction: f64, rng: &mut Rng) -> Vec<usize> {
    let mut picked = Vec::new();
    for mut idx in indices_by_class(labels, classes) {
        if idx.is_empty() {
            continue;
        }
        let take = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len());
        idx.shuffle(rng);
        picked.extend_from_slice(&idx[..take]);
    }
    picked.sort_unstable();
    picked
}

/// Splits `idx` per class into parts of `round(f * n_c)` for each fraction in
/// `fractions`, with the remainder first. Each part is sorted.
fn stratified_partition(
    idx: &[usize],
    labels: &[usize],
    classes: usize,
    fractions: &[f64],
    rng: &mut Rng,
) -> Vec<Vec<usize>> {
    let mut parts = vec![Vec::new(); fractions.len() + 1];
    let sub: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    for members in indices_by_class(&sub, classes) {
        let mut members: Vec<usize> = members.into_iter().map(|k| idx[k]).collect();
        members.shuffle(rng);
        let n = members.len();
        let mut end = n;
        for (p, f) in fractions.iter().enumerate() {
            let take = ((f * n as f64).round() as usize).min(end);
            parts[p + 1].extend_from_slice(&members[end - take..end]);
            end -= take;
        }
        parts[0].extend_from_slice(&members[..end]);
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    parts
}

fn standardize(splits: &mut [&mut Dataset]) {
    let train = &splits[0].features;
    let (n, d) = (train.rows(), train.cols());
    if n == 0 {
        return;
    }
    let mut mean = vec![0.0; d];
    for row in train.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut sd = vec![0.0; d];
    for row in train.iter_rows() {
        for j in 0..d {
            sd[j] += (row[j] - mean[j]).powi(2);
        }
    }
    for s in sd.iter_mut() {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    for ds in splits.iter_mut() {
        for i in 0..ds.features.rows() {
            for (j, v) in ds.features.row_mut(i).iter_mut().enumerate() {
                *v = (*v - mean[j]) / sd[j];
            }
        }
    }
}

/// Builds the splits of one run. The labeled pool is a stratified
/// `label_fraction` subsample of the training source. With a separate test
/// set the pool splits 90/10 into train/val; otherwise 80/10/10 into
/// train/val/test. Validation data only ever feeds temperature fitting.
pub fn make_splits(source: &Dataset, test: Option<&Dataset>, label_fraction: f64, standardize_features: bool, seed: u64) -> Result<Splits> {
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(HarnessError::Config(format!("label_fraction must be in (0, 1], got {label_fraction}")));
    }
    let mut rng = stream(seed, Stream::Subsample);
    let pool = stratified_subsample(&source.labels, source.classes, label_fraction, &mut rng);
    let (mut train, mut val, mut test) = match test {
        Some(t) => {
            let parts = stratified_partition(&pool, &source.labels, source.classes, &[0.1], &mut rng);
            (source.select(&parts[0]), source.select(&parts[1]), t.clone())
        }
        None => {
            let parts = stratified_partition(&pool, &source.labels, source.classes, &[0.1, 0.1], &mut rng);
            (source.select(&parts[0]), source.select(&parts[1]), source.select(&parts[2]))
        }
    };
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(HarnessError::Config(format!(
            "split too small: train {}, val {}, test {}",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    if standardize_features {
        standardize(&mut [&mut train, &mut val, &mut test]);
    }
    let range = FeatureRange::from_features(&train.features);
    Ok(Splits { train, val, test, range })
}

/// Loads the source data of `spec` and builds the splits for `seed`.
pub fn make_dataset(spec: &DatasetSpec, label_fraction: f64, standardize_features: bool, seed: u64) -> Result<Splits> {
    let (source, test) = load_source(spec)?;
    make_splits(&source, test.as_ref(), label_fraction, standardize_features, seed)
}
