//! Per-method reports and the evaluation views built from them: edge and
//! frame accuracy, accuracy-delta buckets against the local baseline, and
//! accuracy by device frame-error-rate group.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use sha2::{Digest, Sha256};

use crate::dataio::{DatasetStats, DeviceDataset, Scenario};
use crate::error::{Error, Result};
use crate::nn::{predict, ModelWeights};

/// Hex SHA-256 of the canonical JSON form of a configuration value.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration types serialize");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Scores `model` on the device's held-out frames.
pub fn evaluate_device(model: &ModelWeights, device: &DeviceDataset, fallback: bool) -> Result<DeviceResult> {
    let predictions = predict(model, device.test.features())?;
    DeviceResult::new(device.device_id.clone(), predictions, device.test.labels().to_vec(), fallback)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceResult {
    pub device_id: String,
    pub predictions: Vec<u8>,
    pub labels: Vec<u8>,
    pub accuracy: f64,
    /// Set when the method could not run for this device and the local
    /// baseline was substituted.
    #[serde(default)]
    pub fallback: bool,
}

impl DeviceResult {
    pub fn new(device_id: impl Into<String>, predictions: Vec<u8>, labels: Vec<u8>, fallback: bool) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::data("device has no test frames"));
        }
        let accuracy = correct(&predictions, &labels) as f64 / labels.len() as f64;
        Ok(Self {
            device_id: device_id.into(),
            predictions,
            labels,
            accuracy,
            fallback,
        })
    }

    pub fn correct(&self) -> usize {
        correct(&self.predictions, &self.labels)
    }

    pub fn frames(&self) -> usize {
        self.labels.len()
    }
}

fn correct(p: &[u8], y: &[u8]) -> usize {
    p.iter().zip(y).filter(|(a, b)| a == b).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub devices: Vec<DeviceResult>,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl MethodReport {
    pub fn fallbacks(&self) -> usize {
        self.devices.iter().filter(|d| d.fallback).count()
    }

    fn non_empty(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::protocol(format!("report `{}` has no devices", self.method)));
        }
        Ok(())
    }
}

/// Unweighted mean of per-device accuracies.
pub fn edge_accuracy(report: &MethodReport) -> Result<f64> {
    report.non_empty()?;
    // Sum in device-id order so the value does not depend on report order.
    let mut accs: Vec<(&str, f64)> = report.devices.iter().map(|d| (d.device_id.as_str(), d.accuracy)).collect();
    accs.sort_by(|a, b| a.0.cmp(b.0));
    Ok(accs.iter().map(|a| a.1).sum::<f64>() / accs.len() as f64)
}

/// Correct frames over all frames, pooled across devices.
pub fn frame_accuracy(report: &MethodReport) -> Result<f64> {
    report.non_empty()?;
    let hits: usize = report.devices.iter().map(DeviceResult::correct).sum();
    let total: usize = report.devices.iter().map(DeviceResult::frames).sum();
    if total == 0 {
        return Err(Error::protocol(format!("report `{}` has no frames", report.method)));
    }
    Ok(hits as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// Accuracy delta buckets

/// Bucket labels in percentage points; every bucket is `[lower, upper)`.
pub const DELTA_BUCKETS: [&str; 7] = [
    "<-25",
    "[-25,-15)",
    "[-15,-5)",
    "[-5,5)",
    "[5,15)",
    "[15,25)",
    ">=25",
];

const DELTA_EDGES: [f64; 6] = [-25.0, -15.0, -5.0, 5.0, 15.0, 25.0];

/// Bucket for a delta given in percentage points.
pub fn delta_bucket(delta_pp: f64) -> usize {
    DELTA_EDGES.iter().filter(|&&e| delta_pp >= e).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub method: String,
    pub baseline: String,
    pub counts: [usize; 7],
}

/// Counts devices per bucket of `100 * (method accuracy - baseline accuracy)`.
pub fn accuracy_delta_table(method: &MethodReport, baseline: &MethodReport) -> Result<DeltaTable> {
    method.non_empty()?;
    if method.devices.len() != baseline.devices.len() {
        return Err(Error::protocol(format!(
            "`{}` covers {} devices, `{}` covers {}",
            method.method,
            method.devices.len(),
            baseline.method,
            baseline.devices.len()
        )));
    }
    let base: HashMap<&str, f64> = baseline
        .devices
        .iter()
        .map(|d| (d.device_id.as_str(), d.accuracy))
        .collect();
    let mut counts = [0usize; 7];
    for d in &method.devices {
        let b = base.get(d.device_id.as_str()).ok_or_else(|| {
            Error::protocol(format!("device {} missing from `{}`", d.device_id, baseline.method))
        })?;
        counts[delta_bucket(100.0 * (d.accuracy - b))] += 1;
    }
    Ok(DeltaTable {
        method: method.method.clone(),
        baseline: baseline.method.clone(),
        counts,
    })
}

// ---------------------------------------------------------------------------
// Frame-error-rate groups

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "edges", rename_all = "snake_case")]
pub enum Grouping {
    /// Four groups of (nearly) equal device count, by ascending error rate.
    #[default]
    Quartile,
    /// Ascending interior edges; group index = number of edges `<=` rate.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateGroup {
    pub group: usize,
    /// Smallest and largest member error rate (`None` for an empty group).
    pub rate_min: Option<f64>,
    pub rate_max: Option<f64>,
    pub devices: Vec<String>,
    /// Mean per-device accuracy of each method over the group members.
    pub edge_accuracy: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    pub grouping: Grouping,
    pub groups: Vec<ErrorRateGroup>,
}

/// Group index for every device; `rates` is `(device_id, frame_error_rate)`.
pub fn assign_groups(rates: &[(String, f64)], grouping: &Grouping) -> Result<Vec<usize>> {
    match grouping {
        Grouping::Quartile => {
            let n = rates.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| rates[a].1.total_cmp(&rates[b].1).then_with(|| rates[a].0.cmp(&rates[b].0)));
            let mut out = vec![0; n];
            for (rank, &i) in order.iter().enumerate() {
                out[i] = rank * 4 / n;
            }
            Ok(out)
        }
        Grouping::Fixed(edges) => {
            if edges.windows(2).any(|w| w[0] >= w[1]) || edges.iter().any(|e| !e.is_finite()) {
                return Err(Error::config(format!("group edges must be strictly ascending, got {edges:?}")));
            }
            Ok(rates.iter().map(|(_, r)| edges.iter().filter(|&&e| *r >= e).count()).collect())
        }
    }
}

pub fn error_rate_groups_from_rates(
    rates: &[(String, f64)],
    reports: &[&MethodReport],
    grouping: &Grouping,
) -> Result<GroupTable> {
    let assignment = assign_groups(rates, grouping)?;
    let n_groups = match grouping {
        Grouping::Quartile => 4,
        Grouping::Fixed(edges) => edges.len() + 1,
    };
    let lookups: Vec<HashMap<&str, f64>> = reports
        .iter()
        .map(|r| r.devices.iter().map(|d| (d.device_id.as_str(), d.accuracy)).collect())
        .collect();
    let mut groups = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let mut members: Vec<usize> = (0..rates.len()).filter(|&i| assignment[i] == g).collect();
        members.sort_by(|&a, &b| rates[a].0.cmp(&rates[b].0));
        let member_rates = members.iter().map(|&i| rates[i].1);
        let rate_min = member_rates.clone().reduce(f64::min);
        let rate_max = member_rates.reduce(f64::max);
        let mut per_method = Vec::with_capacity(reports.len());
        for (report, lookup) in reports.iter().zip(&lookups) {
            let mut sum = 0.0;
            for &i in &members {
                sum += lookup.get(rates[i].0.as_str()).ok_or_else(|| {
                    Error::protocol(format!("device {} missing from `{}`", rates[i].0, report.method))
                })?;
            }
            let mean = (!members.is_empty()).then(|| sum / members.len() as f64);
            per_method.push((report.method.clone(), mean));
        }
        groups.push(ErrorRateGroup {
            group: g,
            rate_min,
            rate_max,
            devices: members.iter().map(|&i| rates[i].0.clone()).collect(),
            edge_accuracy: per_method,
        });
    }
    Ok(GroupTable {
        grouping: grouping.clone(),
        groups,
    })
}

pub fn error_rate_groups(scenario: &Scenario, reports: &[&MethodReport], grouping: &Grouping) -> Result<GroupTable> {
    let rates: Vec<(String, f64)> = scenario
        .devices
        .iter()
        .map(|d| (d.device_id.clone(), d.frame_error_rate))
        .collect();
    error_rate_groups_from_rates(&rates, reports, grouping)
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub devices: usize,
    pub frames: usize,
    pub edge_accuracy: f64,
    pub frame_accuracy: f64,
    pub fallbacks: usize,
}

pub fn summarize(report: &MethodReport) -> Result<MethodSummary> {
    Ok(MethodSummary {
        method: report.method.clone(),
        devices: report.devices.len(),
        frames: report.devices.iter().map(DeviceResult::frames).sum(),
        edge_accuracy: edge_accuracy(report)?,
        frame_accuracy: frame_accuracy(report)?,
        fallbacks: report.fallbacks(),
    })
}

pub const REPORT_FORMAT: &str = "edgekd-report/1";

/// Conventions stated in every JSON report.
pub const CONVENTIONS: &[&str] = &[
    "accuracy deltas are 100*(method - local) percentage points, buckets are half-open [lower, upper)",
    "fixed error-rate group edges are lower-inclusive; quartile groups sort by (rate, device_id)",
    "edge accuracy is the unweighted mean over devices; frame accuracy pools all test frames",
    "features are z-scored with mean/std fitted on pooled training rows",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub format: String,
    pub conventions: Vec<String>,
    pub dataset: DatasetStats,
    pub summary: Vec<MethodSummary>,
    pub reports: Vec<MethodReport>,
}

/// Serializes reports deterministically. JSON holds everything; CSV holds
/// one row per (method, device) with a header.
pub fn emit_report(reports: &[MethodReport], stats: &DatasetStats, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let bundle = ReportBundle {
                format: REPORT_FORMAT.into(),
                conventions: CONVENTIONS.iter().map(|s| s.to_string()).collect(),
                dataset: stats.clone(),
                summary: reports.iter().map(summarize).collect::<Result<_>>()?,
                reports: reports.to_vec(),
            };
            let mut out = serde_json::to_vec_pretty(&bundle).map_err(|e| Error::Invariant(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let rates: HashMap<&str, f64> = stats
                .per_device
                .iter()
                .map(|d| (d.device_id.as_str(), d.frame_error_rate))
                .collect();
            let mut wtr = csv::Writer::from_writer(Vec::new());
            let err = |e: csv::Error| Error::Invariant(e.to_string());
            wtr.write_record([
                "method",
                "device_id",
                "frames",
                "correct",
                "accuracy",
                "fallback",
                "frame_error_rate",
                "config_fingerprint",
                "seed",
            ])
            .map_err(err)?;
            for r in reports {
                for d in &r.devices {
                    let rate = rates.get(d.device_id.as_str()).map(|v| v.to_string()).unwrap_or_default();
                    wtr.write_record([
                        r.method.clone(),
                        d.device_id.clone(),
                        d.frames().to_string(),
                        d.correct().to_string(),
                        d.accuracy.to_string(),
                        u8::from(d.fallback).to_string(),
                        rate,
                        r.config_fingerprint.clone(),
                        r.seed.to_string(),
                    ])
                    .map_err(err)?;
                }
            }
            wtr.into_inner().map_err(|e| Error::Invariant(e.to_string()))
        }
    }
}
