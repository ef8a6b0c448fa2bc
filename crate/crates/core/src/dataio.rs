//! Per-device datasets: CSV ingestion, 1:1 train/test split, z-score
//! normalization, synthetic scenario generation and the canonical on-disk
//! scenario format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::par;
use crate::rng::{Purpose, Streams, GLOBAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    Scr4,
    Scr5,
    Synthetic,
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioTag::Scr4 => "scr4",
            ScenarioTag::Scr5 => "scr5",
            ScenarioTag::Synthetic => "synthetic",
        })
    }
}

/// Where a row came from. Cloud-side code must only ever see `Synthetic`
/// rows in the privacy-preserving pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Synthetic,
}

/// Labeled training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Matrix,
    pub y: Vec<u8>,
    pub origin: Origin,
}

impl Samples {
    pub fn new(x: Matrix, y: Vec<u8>, origin: Origin) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::shape(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        crate::nn::loss::check_labels(&y)?;
        Ok(Self { x, y, origin })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }
}

/// Held-out rows. Deliberately not convertible into [`Samples`], so test
/// data cannot be handed to a training or fitting routine.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSplit {
    x: Matrix,
    y: Vec<u8>,
}

impl TestSplit {
    pub fn new(x: Matrix, y: Vec<u8>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::shape(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        crate::nn::loss::check_labels(&y)?;
        Ok(Self { x, y })
    }

    pub fn features(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceDataset {
    pub device_id: String,
    pub scenario: ScenarioTag,
    pub train: Samples,
    pub test: TestSplit,
    /// Error rate over all of the device's frames, train and test.
    pub frame_error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub tag: ScenarioTag,
    pub devices: Vec<DeviceDataset>,
    pub feature_names: Vec<String>,
    pub normalization: Vec<FeatureStats>,
}

impl Scenario {
    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.device_id == id)
    }
}

fn error_rate(labels: impl IntoIterator<Item = u8>) -> (usize, usize) {
    let mut n = 0;
    let mut errors = 0;
    for y in labels {
        n += 1;
        errors += y as usize;
    }
    (errors, n)
}

// ---------------------------------------------------------------------------
// Split and normalization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    /// First `ceil(n/2)` frames train, the rest test.
    #[default]
    Chronological,
    /// Seeded random half, train rows kept in chronological order.
    Random { seed: u64 },
}

/// Row indices of the train and test halves. Odd counts give train the extra row.
pub fn split_indices(n: usize, rule: SplitRule, device: u64) -> (Vec<usize>, Vec<usize>) {
    let n_train = n.div_ceil(2);
    match rule {
        SplitRule::Chronological => ((0..n_train).collect(), (n_train..n).collect()),
        SplitRule::Random { seed } => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut Streams::new(seed).stream(Purpose::Split, device, 0));
            let mut train = idx[..n_train].to_vec();
            let mut test = idx[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            (train, test)
        }
    }
}

/// Raw (unnormalized) device rows before the scenario-level normalization pass.
struct RawDevice {
    id: String,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<u8>,
    test_x: Vec<Vec<f64>>,
    test_y: Vec<u8>,
}

/// Fits per-feature mean and population std on pooled train rows, drops
/// constant features and standardizes train and test rows of every device.
fn assemble(tag: ScenarioTag, names: Vec<String>, raw: Vec<RawDevice>) -> Result<Scenario> {
    if raw.is_empty() {
        return Err(Error::data("scenario has no devices"));
    }
    let d = names.len();
    let mut count = 0usize;
    let mut sum = vec![0.0; d];
    for dev in &raw {
        for row in &dev.train_x {
            count += 1;
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    if count == 0 {
        return Err(Error::data("no training rows to fit normalization"));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut var = vec![0.0; d];
    for dev in &raw {
        for row in &dev.train_x {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt()).collect();

    let keep: Vec<usize> = (0..d)
        .filter(|&j| {
            let ok = std[j] > 0.0 && std[j].is_finite();
            if !ok {
                log::warn!("dropping constant feature `{}`", names[j]);
            }
            ok
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::data("every feature is constant over the training rows"));
    }
    let normalization: Vec<FeatureStats> = keep
        .iter()
        .map(|&j| FeatureStats {
            name: names[j].clone(),
            mean: mean[j],
            std: std[j],
        })
        .collect();
    let transform = |rows: &[Vec<f64>]| -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows.len() * keep.len());
        for row in rows {
            data.extend(keep.iter().map(|&j| (row[j] - mean[j]) / std[j]));
        }
        Matrix::from_vec(rows.len(), keep.len(), data)
    };

    let devices = raw
        .into_iter()
        .map(|dev| {
            let (errors, n) = error_rate(dev.train_y.iter().chain(&dev.test_y).copied());
            Ok(DeviceDataset {
                frame_error_rate: errors as f64 / n as f64,
                train: Samples::new(transform(&dev.train_x)?, dev.train_y, Origin::Real)?,
                test: TestSplit::new(transform(&dev.test_x)?, dev.test_y)?,
                device_id: dev.id,
                scenario: tag,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        tag,
        devices,
        feature_names: normalization.iter().map(|f| f.name.clone()).collect(),
        normalization,
    })
}

// ---------------------------------------------------------------------------
// CSV ingestion

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Label,
    Ignore,
}

/// Maps CSV columns to roles. Feature columns are used in name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub scenario: ScenarioTag,
    pub columns: BTreeMap<String, ColumnRole>,
    /// Feature columns expanded into one indicator column per category seen
    /// in the training rows (e.g. the MCS index). Others are numeric.
    #[serde(default)]
    pub one_hot: Vec<String>,
    #[serde(default)]
    pub split: SplitRule,
}

impl SchemaConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::config(format!("schema file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("bad schema config {}: {e}", path.display())))
    }

    fn label_column(&self) -> Result<&str> {
        let labels: Vec<&String> = self
            .columns
            .iter()
            .filter(|(_, r)| **r == ColumnRole::Label)
            .map(|(c, _)| c)
            .collect();
        match labels.as_slice() {
            [one] => Ok(one),
            _ => Err(Error::config(format!(
                "schema must name exactly one label column, found {}",
                labels.len()
            ))),
        }
    }

    fn feature_columns(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|(_, r)| **r == ColumnRole::Feature)
            .map(|(c, _)| c.as_str())
            .collect()
    }
}

fn parse_label(s: &str) -> Option<u8> {
    match s.trim() {
        "0" | "0.0" | "false" | "False" | "FALSE" => Some(0),
        "1" | "1.0" | "true" | "True" | "TRUE" => Some(1),
        _ => None,
    }
}

struct NodeRows {
    id: String,
    /// Raw feature cells per row, in `feature_columns` order.
    cells: Vec<Vec<String>>,
    labels: Vec<u8>,
}

fn read_node_file(path: &Path, schema: &SchemaConfig) -> Result<Option<NodeRows>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    let find = |col: &str| {
        headers.iter().position(|h| h == col).ok_or_else(|| Error::Schema {
            file: path.to_path_buf(),
            column: col.to_string(),
        })
    };
    let label_col = find(schema.label_column()?)?;
    let feature_cols = schema
        .feature_columns()
        .into_iter()
        .map(find)
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let raw_label = rec.get(label_col).unwrap_or("");
        let y = parse_label(raw_label).ok_or_else(|| {
            Error::data(format!(
                "{} row {}: label `{raw_label}` is not binary",
                path.display(),
                line + 1
            ))
        })?;
        labels.push(y);
        cells.push(
            feature_cols
                .iter()
                .map(|&c| rec.get(c).unwrap_or("").to_string())
                .collect(),
        );
    }
    if labels.is_empty() {
        log::warn!("skipping empty node file {}", path.display());
        return Ok(None);
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Some(NodeRows { id, cells, labels }))
}

fn csv_files(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads one CSV per node from `root`, splits each node 1:1 and normalizes
/// with statistics fitted on the pooled training rows.
pub fn load_scenario(root: &Path, schema: &SchemaConfig) -> Result<Scenario> {
    let files = csv_files(root)?;
    if files.is_empty() {
        return Err(Error::data(format!("no CSV node files in {}", root.display())));
    }
    let feature_cols = schema.feature_columns();
    if feature_cols.is_empty() {
        return Err(Error::config("schema names no feature columns"));
    }
    for c in &schema.one_hot {
        if !feature_cols.contains(&c.as_str()) {
            return Err(Error::config(format!("one-hot column `{c}` is not a feature")));
        }
    }

    let nodes: Vec<NodeRows> = par::map_indexed(files, |_, f| read_node_file(&f, schema))
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if nodes.is_empty() {
        return Err(Error::data(format!("every node file in {} is empty", root.display())));
    }

    let splits: Vec<(Vec<usize>, Vec<usize>)> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| split_indices(n.labels.len(), schema.split, i as u64))
        .collect();

    // Category vocabularies come from training rows only.
    let one_hot_pos: Vec<usize> = schema
        .one_hot
        .iter()
        .map(|c| feature_cols.iter().position(|f| f == c).unwrap())
        .collect();
    let mut vocab: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for &p in &one_hot_pos {
        let set = vocab.entry(p).or_default();
        for (node, (train, _)) in nodes.iter().zip(&splits) {
            for &r in train {
                set.insert(node.cells[r][p].clone());
            }
        }
    }
    let mut names = Vec::new();
    for (p, c) in feature_cols.iter().enumerate() {
        match vocab.get(&p) {
            Some(cats) => names.extend(cats.iter().map(|v| format!("{c}={v}"))),
            None => names.push((*c).to_string()),
        }
    }

    let encode = |node: &NodeRows, r: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(names.len());
        for (p, cell) in node.cells[r].iter().enumerate() {
            match vocab.get(&p) {
                Some(cats) => out.extend(cats.iter().map(|v| if v == cell { 1.0 } else { 0.0 })),
                None => out.push(cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::data(format!(
                        "node {} row {}: `{cell}` in column `{}` is not a finite number",
                        node.id,
                        r + 1,
                        feature_cols[p]
                    ))
                })?),
            }
        }
        Ok(out)
    };

    let raw = nodes
        .iter()
        .zip(&splits)
        .map(|(node, (train, test))| {
            Ok(RawDevice {
                id: node.id.clone(),
                train_x: train.iter().map(|&r| encode(node, r)).collect::<Result<_>>()?,
                train_y: train.iter().map(|&r| node.labels[r]).collect(),
                test_x: test.iter().map(|&r| encode(node, r)).collect::<Result<_>>()?,
                test_y: test.iter().map(|&r| node.labels[r]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(schema.scenario, names, raw)
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStats {
    pub device_id: String,
    pub frames: usize,
    pub errors: usize,
    pub frame_error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scenario: ScenarioTag,
    pub devices: usize,
    pub total_frames: usize,
    pub total_errors: usize,
    pub aggregate_frame_error_rate: f64,
    pub per_device: Vec<DeviceStats>,
}

pub fn dataset_stats(scenario: &Scenario) -> DatasetStats {
    let per_device: Vec<DeviceStats> = scenario
        .devices
        .iter()
        .map(|d| {
            let (errors, frames) = error_rate(d.train.y.iter().chain(d.test.labels()).copied());
            DeviceStats {
                device_id: d.device_id.clone(),
                frames,
                errors,
                frame_error_rate: if frames == 0 { 0.0 } else { errors as f64 / frames as f64 },
            }
        })
        .collect();
    let total_frames = per_device.iter().map(|d| d.frames).sum();
    let total_errors = per_device.iter().map(|d| d.errors).sum();
    DatasetStats {
        scenario: scenario.tag,
        devices: per_device.len(),
        total_frames,
        total_errors,
        aggregate_frame_error_rate: if total_frames == 0 {
            0.0
        } else {
            total_errors as f64 / total_frames as f64
        },
        per_device,
    }
}

// ---------------------------------------------------------------------------
// Synthetic scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub devices: usize,
    pub frames_per_device: usize,
    pub feature_dim: usize,
    /// Scale of the per-device shift of the feature distribution.
    pub shift: f64,
    /// Per-device target error rates are drawn uniformly from this range.
    pub error_rate_range: [f64; 2],
    /// Slope of the logistic ground truth; larger is closer to separable.
    pub sharpness: f64,
    /// Gaussian mixture components per device.
    pub components: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            devices: 20,
            frames_per_device: 2000,
            feature_dim: 3,
            shift: 1.0,
            error_rate_range: [0.28, 0.38],
            sharpness: 8.0,
            components: 2,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.error_rate_range;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return Err(Error::config(format!(
                "error-rate range [{lo}, {hi}] must lie inside (0, 1) with lo <= hi"
            )));
        }
        if self.devices == 0 || self.frames_per_device < 2 || self.feature_dim == 0 || self.components == 0 {
            return Err(Error::config(
                "generator needs >= 1 device, >= 2 frames per device, >= 1 feature and >= 1 component",
            ));
        }
        if !(self.shift >= 0.0 && self.sharpness > 0.0) {
            return Err(Error::config("shift must be >= 0 and sharpness > 0"));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Offset `b` such that the mean of `sigmoid(s * (m + b))` over `margins` is `target`.
fn calibrate_offset(margins: &[f64], sharpness: f64, target: f64) -> f64 {
    let rate = |b: f64| margins.iter().map(|m| sigmoid(sharpness * (m + b))).sum::<f64>() / margins.len() as f64;
    let (mut lo, mut hi) = (-100.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Desk-scale stand-in for the per-node telemetry corpus.
///
/// Each device draws features from a shared Gaussian mixture translated by a
/// per-device shift orthogonal to the ground-truth direction, and labels from
/// a shared logistic function of the features plus a per-device offset,
/// calibrated so the device's expected error rate equals a target drawn from
/// `error_rate_range`.
pub fn generate_synthetic_scenario(cfg: &GenConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let streams = Streams::new(seed);
    let d = cfg.feature_dim;
    let mut global = streams.stream(Purpose::ScenarioGen, GLOBAL, 0);
    let mut direction: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut global)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    direction.iter_mut().for_each(|v| *v /= norm);

    let base: Vec<Vec<f64>> = (0..cfg.components)
        .map(|_| {
            (0..d)
                .map(|_| 0.75 * Distribution::<f64>::sample(&StandardNormal, &mut global))
                .collect()
        })
        .collect();

    let raw = par::map_indexed((0..cfg.devices).collect(), |_, dev: usize| {
        let mut rng = streams.stream(Purpose::ScenarioGen, dev as u64, 0);
        let mut centre: Vec<f64> = (0..d)
            .map(|_| cfg.shift * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        // Shift only across the ground-truth direction.
        let along: f64 = centre.iter().zip(&direction).map(|(c, b)| c * b).sum();
        centre.iter_mut().zip(&direction).for_each(|(c, b)| *c -= along * b);
        let comps: Vec<Vec<f64>> = base
            .iter()
            .map(|comp| comp.iter().zip(&centre).map(|(a, c)| a + c).collect())
            .collect();
        let [lo, hi] = cfg.error_rate_range;
        let target = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let rows: Vec<Vec<f64>> = (0..cfg.frames_per_device)
            .map(|_| {
                let k = rng.random_range(0..cfg.components);
                comps[k]
                    .iter()
                    .map(|m| m + Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        let margins: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&direction).map(|(a, b)| a * b).sum())
            .collect();
        let offset = calibrate_offset(&margins, cfg.sharpness, target);
        let labels: Vec<u8> = margins
            .iter()
            .map(|m| u8::from(rng.random::<f64>() < sigmoid(cfg.sharpness * (m + offset))))
            .collect();
        let (train, test) = split_indices(rows.len(), SplitRule::Chronological, dev as u64);
        RawDevice {
            id: format!("dev{dev:03}"),
            train_x: train.iter().map(|&i| rows[i].clone()).collect(),
            train_y: train.iter().map(|&i| labels[i]).collect(),
            test_x: test.iter().map(|&i| rows[i].clone()).collect(),
            test_y: test.iter().map(|&i| labels[i]).collect(),
        }
    });
    let names = (0..d).map(|j| format!("x{j}")).collect();
    assemble(ScenarioTag::Synthetic, names, raw)
}

// ---------------------------------------------------------------------------
// Canonical serialization

const SCENARIO_FORMAT: &str = "edgekd-scenario/1";

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioIndex {
    format: String,
    scenario: ScenarioTag,
    feature_names: Vec<String>,
    normalization: Vec<FeatureStats>,
    devices: Vec<DeviceEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DeviceEntry {
    id: String,
    file: String,
    train_rows: usize,
    test_rows: usize,
    frame_error_rate: f64,
}

/// Writes rows as CSV: `split,<features...>,label,synthetic`.
pub fn write_rows_csv<W: std::io::Write>(
    w: W,
    feature_names: &[String],
    parts: &[(&str, &Matrix, &[u8], Origin)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::data(format!("csv write failed: {e}"));
    let mut header = vec!["split".to_string()];
    header.extend(feature_names.iter().cloned());
    header.push("label".into());
    header.push("synthetic".into());
    wtr.write_record(&header).map_err(csv_err)?;
    for (split, x, y, origin) in parts {
        let flag = if *origin == Origin::Synthetic { "1" } else { "0" };
        for (row, label) in x.iter_rows().zip(y.iter()) {
            let mut rec = Vec::with_capacity(row.len() + 3);
            rec.push(split.to_string());
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            rec.push(label.to_string());
            rec.push(flag.to_string());
            wtr.write_record(&rec).map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::data(format!("csv flush failed: {e}")))?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `scenario.json` plus one CSV per device under `dir/devices/`.
pub fn write_scenario(scenario: &Scenario, dir: &Path) -> Result<()> {
    let dev_dir = dir.join("devices");
    fs::create_dir_all(&dev_dir).map_err(|e| Error::io(&dev_dir, e))?;
    let mut entries = Vec::with_capacity(scenario.devices.len());
    for (i, d) in scenario.devices.iter().enumerate() {
        let file = format!("devices/d{i:05}.csv");
        let mut buf = Vec::new();
        write_rows_csv(
            &mut buf,
            &scenario.feature_names,
            &[
                ("train", &d.train.x, &d.train.y, d.train.origin),
                ("test", d.test.features(), d.test.labels(), Origin::Real),
            ],
        )?;
        write_file(&dir.join(&file), &buf)?;
        entries.push(DeviceEntry {
            id: d.device_id.clone(),
            file,
            train_rows: d.train.len(),
            test_rows: d.test.len(),
            frame_error_rate: d.frame_error_rate,
        });
    }
    let index = ScenarioIndex {
        format: SCENARIO_FORMAT.into(),
        scenario: scenario.tag,
        feature_names: scenario.feature_names.clone(),
        normalization: scenario.normalization.clone(),
        devices: entries,
    };
    let mut json = serde_json::to_vec_pretty(&index).map_err(|e| Error::data(e.to_string()))?;
    json.push(b'\n');
    write_file(&dir.join("scenario.json"), &json)
}

pub fn is_canonical_dir(dir: &Path) -> bool {
    dir.join("scenario.json").is_file()
}

/// Reads a scenario written by [`write_scenario`].
pub fn read_scenario(dir: &Path) -> Result<Scenario> {
    let index_path = dir.join("scenario.json");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: ScenarioIndex = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{}: {e}", index_path.display())))?;
    if index.format != SCENARIO_FORMAT {
        return Err(Error::data(format!("unsupported scenario format `{}`", index.format)));
    }
    let width = index.feature_names.len();
    let devices = index
        .devices
        .iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let mut rdr = csv::Reader::from_path(&path)
                .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
            let mut train = (Vec::new(), Vec::new());
            let mut test = (Vec::new(), Vec::new());
            let mut synthetic = false;
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
                if rec.len() != width + 3 {
                    return Err(Error::data(format!("{}: row width {} != {}", path.display(), rec.len(), width + 3)));
                }
                let vals = (1..=width)
                    .map(|j| rec[j].parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
                let y = parse_label(&rec[width + 1])
                    .ok_or_else(|| Error::data(format!("{}: non-binary label", path.display())))?;
                let target = match &rec[0] {
                    "train" => {
                        synthetic |= &rec[width + 2] == "1";
                        &mut train
                    }
                    "test" => &mut test,
                    other => return Err(Error::data(format!("{}: unknown split `{other}`", path.display()))),
                };
                target.0.extend(vals);
                target.1.push(y);
            }
            let n_train = train.1.len();
            let n_test = test.1.len();
            if n_train != entry.train_rows || n_test != entry.test_rows {
                return Err(Error::data(format!("{}: row counts disagree with index", path.display())));
            }
            Ok(DeviceDataset {
                device_id: entry.id.clone(),
                scenario: index.scenario,
                train: Samples::new(
                    Matrix::from_vec(n_train, width, train.0)?,
                    train.1,
                    if synthetic { Origin::Synthetic } else { Origin::Real },
                )?,
                test: TestSplit::new(Matrix::from_vec(n_test, width, test.0)?, test.1)?,
                frame_error_rate: entry.frame_error_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if devices.is_empty() {
        return Err(Error::data("scenario index lists no devices"));
    }
    Ok(Scenario {
        tag: index.scenario,
        devices,
        feature_names: index.feature_names,
        normalization: index.normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let (tr, te) = split_indices(10, SplitRule::Chronological, 0);
        assert_eq!((tr.len(), te.len()), (5, 5));
        let (tr, te) = split_indices(11, SplitRule::Chronological, 0);
        assert_eq!((tr.len(), te.len()), (6, 5));
        assert_eq!(tr, (0..6).collect::<Vec<_>>());
        let (tr, te) = split_indices(11, SplitRule::Random { seed: 3 }, 2);
        assert_eq!((tr.len(), te.len()), (6, 5));
        let mut all: Vec<_> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn labels_parse() {
        assert_eq!(parse_label("1"), Some(1));
        assert_eq!(parse_label(" 0.0 "), Some(0));
        assert_eq!(parse_label("true"), Some(1));
        assert_eq!(parse_label("2"), None);
    }

    #[test]
    fn infeasible_error_rates_are_rejected() {
        for range in [[0.0, 0.3], [0.3, 1.0], [0.5, 0.4], [-0.1, 0.2]] {
            let cfg = GenConfig { error_rate_range: range, ..GenConfig::default() };
            assert!(matches!(generate_synthetic_scenario(&cfg, 1), Err(Error::Config(_))));
        }
    }

    #[test]
    fn calibration_hits_target() {
        let margins: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0 - 0.5) * 4.0).collect();
        let b = calibrate_offset(&margins, 8.0, 0.33);
        let rate = margins.iter().map(|m| sigmoid(8.0 * (m + b))).sum::<f64>() / 1000.0;
        assert!((rate - 0.33).abs() < 1e-9);
    }

    #[test]
    fn stats_count_errors() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let dev = DeviceDataset {
            device_id: "a".into(),
            scenario: ScenarioTag::Synthetic,
            train: Samples::new(x.clone(), vec![1, 0], Origin::Real).unwrap(),
            test: TestSplit::new(x.select_rows(&[0]), vec![1]).unwrap(),
            frame_error_rate: 2.0 / 3.0,
        };
        let s = Scenario {
            tag: ScenarioTag::Synthetic,
            devices: vec![dev],
            feature_names: vec!["f".into()],
            normalization: vec![],
        };
        let st = dataset_stats(&s);
        assert_eq!(st.total_frames, 3);
        assert!((st.aggregate_frame_error_rate - 2.0 / 3.0).abs() < 1e-15);
    }
}
