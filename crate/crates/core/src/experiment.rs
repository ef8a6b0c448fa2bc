//! Experiment runner: resolves a run configuration, obtains the scenario,
//! runs the requested methods and writes every report into one directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::{
    dataset_stats, generate_synthetic_scenario, is_canonical_dir, load_scenario, read_scenario,
    DatasetStats, GenConfig, Scenario, SchemaConfig,
};
use crate::distill::{prepare_teacher, run_kd_with_teacher, run_local, DataAudit, KdConfig, KdVariant, StudentConfig, TeacherBundle};
use crate::ensemble::run_ensemble;
use crate::error::{Error, Result};
use crate::federated::{run_federated, telemetry_jsonl, FedConfig, Privacy};
use crate::metrics::{
    accuracy_delta_table, emit_report, error_rate_groups, fingerprint, summarize, DeltaTable,
    GroupTable, Grouping, MethodReport, MethodSummary, ReportFormat, DELTA_BUCKETS,
};
use crate::nn::ModelWeights;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Local,
    Fedavg,
    Dpfed,
    KdScr,
    KdSmote,
    TfKd,
    Ensemble,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Local,
        Method::Fedavg,
        Method::Dpfed,
        Method::KdScr,
        Method::KdSmote,
        Method::TfKd,
        Method::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Local => "local",
            Method::Fedavg => "fedavg",
            Method::Dpfed => "dpfed",
            Method::KdScr => "kd_scr",
            Method::KdSmote => "kd_smote",
            Method::TfKd => "tf_kd",
            Method::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown method `{s}` (expected one of local, fedavg, dpfed, kd_scr, kd_smote, tf_kd, ensemble)"
                ))
            })
    }
}

/// Adds the ensemble members when the ensemble is requested, deduplicates
/// and returns methods in canonical order.
pub fn expand_methods(requested: &[Method]) -> Vec<Method> {
    let mut out: Vec<Method> = requested.to_vec();
    if out.contains(&Method::Ensemble) {
        out.extend([Method::Local, Method::Dpfed, Method::KdSmote]);
    }
    out.sort();
    out.dedup();
    out
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Method::from_str)
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(Error::config("no methods requested"));
    }
    Ok(methods)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Scr4,
    Scr5,
    Synthetic,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scr4" => Ok(Profile::Scr4),
            "scr5" => Ok(Profile::Scr5),
            "synthetic" => Ok(Profile::Synthetic),
            other => Err(Error::config(format!(
                "unknown scenario profile `{other}` (expected scr4, scr5 or synthetic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSource {
    Synthetic {
        #[serde(default)]
        gen: GenConfig,
    },
    /// Directory of per-node CSVs plus a schema file.
    Csv { path: PathBuf, schema: PathBuf },
    /// Directory written by `gen-scenario` or a previous run.
    Canonical { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub scenario: ScenarioSource,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Output directory; not part of the record so the same run written to
    /// two places produces identical bytes.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    /// Worker cap; never changes results, so it is not part of the record.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    pub student: StudentConfig,
    pub federated: FedConfig,
    pub kd: KdConfig,
    pub grouping: Grouping,
    pub save_models: bool,
}

impl RunConfig {
    /// Defaults bound by a profile. `scr4`/`scr5` fix alpha to 0.4/0.5 and
    /// expect per-node CSVs; `synthetic` generates a desk-scale scenario.
    pub fn profile_defaults(profile: Profile) -> Self {
        let mut kd = KdConfig::default();
        let scenario = match profile {
            Profile::Scr4 => {
                kd.alpha = 0.4;
                ScenarioSource::Csv {
                    path: "data/scr4".into(),
                    schema: "data/scr4_schema.json".into(),
                }
            }
            Profile::Scr5 => {
                kd.alpha = 0.5;
                ScenarioSource::Csv {
                    path: "data/scr5".into(),
                    schema: "data/scr5_schema.json".into(),
                }
            }
            Profile::Synthetic => {
                kd.alpha = 0.5;
                ScenarioSource::Synthetic { gen: GenConfig::default() }
            }
        };
        Self {
            profile,
            scenario,
            methods: Method::ALL.to_vec(),
            seed: 1,
            out: "out".into(),
            threads: None,
            student: StudentConfig::default(),
            federated: FedConfig::default(),
            kd,
            grouping: Grouping::Quartile,
            save_models: true,
        }
    }

    /// Profile defaults with the user's JSON merged on top. The profile is
    /// taken from `profile_override`, else from the JSON, else `synthetic`.
    pub fn from_json(user: &Value, profile_override: Option<Profile>) -> Result<Self> {
        if !user.is_object() {
            return Err(Error::config("run config must be a JSON object"));
        }
        let profile = match profile_override {
            Some(p) => p,
            None => match user.get("profile") {
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|e| Error::config(format!("bad profile: {e}")))?,
                None => Profile::Synthetic,
            },
        };
        let mut base = serde_json::to_value(Self::profile_defaults(profile)).expect("config serializes");
        merge(&mut base, user);
        base["profile"] = serde_json::to_value(profile).expect("profile serializes");
        let cfg: RunConfig = serde_json::from_value(base).map_err(|e| Error::config(format!("bad run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, profile_override: Option<Profile>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("config {} is not valid JSON: {e}", path.display())))?;
        Self::from_json(&value, profile_override)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("no methods requested"));
        }
        self.student.validate()?;
        self.federated.validate()?;
        self.kd.validate()?;
        if let ScenarioSource::Synthetic { gen } = &self.scenario {
            gen.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        fingerprint(self)
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    // Tagged enums are replaced wholesale so variants do not mix fields.
                    Some(slot) if slot.is_object() && v.is_object() && !is_tagged(v) => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn is_tagged(v: &Value) -> bool {
    v.get("source").is_some() || v.get("kind").is_some()
}

pub fn load_source(source: &ScenarioSource, seed: u64) -> Result<Scenario> {
    match source {
        ScenarioSource::Synthetic { gen } => generate_synthetic_scenario(gen, seed),
        ScenarioSource::Csv { path, schema } => {
            if !path.is_dir() {
                return Err(Error::config(format!("scenario directory {} not found", path.display())));
            }
            let schema = SchemaConfig::from_json_file(schema)?;
            load_scenario(path, &schema)
        }
        ScenarioSource::Canonical { path } => {
            if !is_canonical_dir(path) {
                return Err(Error::config(format!("{} holds no scenario.json", path.display())));
            }
            read_scenario(path)
        }
    }
}

// ---------------------------------------------------------------------------
// Running

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario_stats: DatasetStats,
    pub reports: Vec<MethodReport>,
    pub summary: Vec<MethodSummary>,
    pub deltas: Vec<DeltaTable>,
    pub groups: GroupTable,
    /// Cloud-side data audit per distillation method.
    pub audits: Vec<(Method, DataAudit)>,
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

impl RunOutput {
    pub fn report(&self, method: Method) -> Option<&MethodReport> {
        self.reports.iter().find(|r| r.method == method.name())
    }

    pub fn audit(&self, method: Method) -> Option<&DataAudit> {
        self.audits.iter().find(|(m, _)| *m == method).map(|(_, a)| a)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    seed: u64,
    methods: Vec<&'static str>,
    scenario: &'a str,
    smote_direction: String,
    kl_direction: crate::nn::KlDirection,
    normalization: &'static str,
    config: &'a RunConfig,
    files: Vec<String>,
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report types serialize");
    out.push(b'\n');
    out
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Invariant(e.to_string());
    wtr.write_record(header).map_err(err)?;
    for r in rows {
        wtr.write_record(&r).map_err(err)?;
    }
    wtr.into_inner().map_err(|e| Error::Invariant(e.to_string()))
}

fn model_files(dir: &str, scenario: &Scenario, models: &[ModelWeights], files: &mut Vec<(PathBuf, Vec<u8>)>) {
    for (i, (d, m)) in scenario.devices.iter().zip(models).enumerate() {
        let safe: String = d
            .device_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        files.push((PathBuf::from(format!("models/{dir}/{i:05}_{safe}.bin")), m.to_bytes()));
    }
}

/// Runs every requested method on `scenario` and renders all artifacts in
/// memory. Nothing is written to disk.
pub fn run_methods(cfg: &RunConfig, scenario: &Scenario) -> Result<RunOutput> {
    cfg.validate()?;
    let methods = expand_methods(&cfg.methods);
    let seed = cfg.seed;
    let mut reports: Vec<MethodReport> = Vec::new();
    let mut audits = Vec::new();
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut smote_teacher: Option<TeacherBundle> = None;

    for &method in &methods {
        log::info!("running {method}");
        let report = match method {
            Method::Local => {
                let out = run_local(scenario, &cfg.student, seed)?;
                if cfg.save_models {
                    model_files("local", scenario, &out.models, &mut files);
                }
                out.report
            }
            Method::Fedavg | Method::Dpfed => {
                let fed = FedConfig {
                    privacy: if method == Method::Dpfed { Privacy::Dp } else { Privacy::None },
                    ..cfg.federated.clone()
                };
                let out = run_federated(scenario, &fed, seed)?;
                files.push((PathBuf::from(format!("telemetry/{method}.jsonl")), telemetry_jsonl(&out.rounds)));
                if cfg.save_models {
                    files.push((PathBuf::from(format!("models/{method}/global.bin")), out.global.to_bytes()));
                }
                out.report
            }
            Method::KdScr | Method::KdSmote | Method::TfKd => {
                let variant = match method {
                    Method::KdScr => KdVariant::KdScr,
                    Method::KdSmote => KdVariant::KdSmote,
                    _ => KdVariant::TfKd,
                };
                let fresh;
                let bundle = if variant == KdVariant::KdScr {
                    fresh = prepare_teacher(scenario, variant.teacher_data(), &cfg.kd, seed)?;
                    &fresh
                } else {
                    if smote_teacher.is_none() {
                        smote_teacher = Some(prepare_teacher(scenario, variant.teacher_data(), &cfg.kd, seed)?);
                    }
                    smote_teacher.as_ref().unwrap()
                };
                let out = run_kd_with_teacher(scenario, variant, bundle, &cfg.student, &cfg.kd, seed)?;
                if cfg.save_models {
                    files.push((PathBuf::from(format!("models/{method}/teacher.bin")), bundle.teacher.to_bytes()));
                    model_files(method.name(), scenario, &out.students, &mut files);
                }
                files.push((PathBuf::from(format!("audit/{method}.json")), to_json(&out.audit)));
                audits.push((method, out.audit));
                out.report
            }
            Method::Ensemble => {
                let find = |m: Method| {
                    reports
                        .iter()
                        .find(|r| r.method == m.name())
                        .ok_or_else(|| Error::Invariant(format!("ensemble member {m} did not run")))
                };
                run_ensemble(
                    "ensemble",
                    [find(Method::Local)?, find(Method::Dpfed)?, find(Method::KdSmote)?],
                    cfg.hash(),
                    seed,
                )?
            }
        };
        files.push((PathBuf::from(format!("reports/{method}.json")), to_json(&report)));
        reports.push(report);
    }

    let stats = dataset_stats(scenario);
    let summary = reports.iter().map(summarize).collect::<Result<Vec<_>>>()?;
    let deltas = match reports.iter().find(|r| r.method == "local") {
        Some(local) => reports
            .iter()
            .filter(|r| r.method != "local")
            .map(|r| accuracy_delta_table(r, local))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let report_refs: Vec<&MethodReport> = reports.iter().collect();
    let groups = error_rate_groups(scenario, &report_refs, &cfg.grouping)?;

    let hash = cfg.hash();
    let tag = |mut row: Vec<String>| {
        row.push(hash.clone());
        row.push(seed.to_string());
        row
    };
    files.push(("report.json".into(), emit_report(&reports, &stats, ReportFormat::Json)?));
    files.push(("per_device.csv".into(), emit_report(&reports, &stats, ReportFormat::Csv)?));
    files.push(("dataset.json".into(), to_json(&stats)));
    files.push((
        "summary.csv".into(),
        csv_bytes(
            &["method", "devices", "frames", "edge_accuracy", "frame_accuracy", "fallbacks", "config_hash", "seed"],
            summary
                .iter()
                .map(|s| {
                    tag(vec![
                        s.method.clone(),
                        s.devices.to_string(),
                        s.frames.to_string(),
                        s.edge_accuracy.to_string(),
                        s.frame_accuracy.to_string(),
                        s.fallbacks.to_string(),
                    ])
                })
                .collect(),
        )?,
    ));
    let mut delta_header = vec!["method"];
    delta_header.extend(DELTA_BUCKETS);
    delta_header.extend(["config_hash", "seed"]);
    files.push((
        "deltas.csv".into(),
        csv_bytes(
            &delta_header,
            deltas
                .iter()
                .map(|d| {
                    let mut row = vec![d.method.clone()];
                    row.extend(d.counts.iter().map(|c| c.to_string()));
                    tag(row)
                })
                .collect(),
        )?,
    ));
    files.push(("deltas.json".into(), to_json(&deltas)));
    files.push(("groups.json".into(), to_json(&groups)));
    let mut group_rows = Vec::new();
    for g in &groups.groups {
        for (method, acc) in &g.edge_accuracy {
            group_rows.push(tag(vec![
                g.group.to_string(),
                g.rate_min.map(|v| v.to_string()).unwrap_or_default(),
                g.rate_max.map(|v| v.to_string()).unwrap_or_default(),
                g.devices.len().to_string(),
                method.clone(),
                acc.map(|v| v.to_string()).unwrap_or_default(),
            ]));
        }
    }
    files.push((
        "groups.csv".into(),
        csv_bytes(
            &["group", "rate_min", "rate_max", "devices", "method", "edge_accuracy", "config_hash", "seed"],
            group_rows,
        )?,
    ));

    files.sort_by(|a, b| a.0.cmp(&b.0));
    let mut names: Vec<String> = files.iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    names.push("manifest.json".into());
    let scenario_name = scenario.tag.to_string();
    let manifest = Manifest {
        format: "edgekd-run/1",
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash.clone(),
        seed,
        methods: methods.iter().map(|m| m.name()).collect(),
        scenario: &scenario_name,
        smote_direction: cfg.kd.smote.direction.to_string(),
        kl_direction: cfg.kd.kl_direction,
        normalization: "z-score, mean/std fitted on pooled training rows",
        config: cfg,
        files: names,
    };
    files.push(("manifest.json".into(), to_json(&manifest)));

    Ok(RunOutput {
        scenario_stats: stats,
        reports,
        summary,
        deltas,
        groups,
        audits,
        files,
    })
}

/// Loads the scenario, runs, and writes every artifact under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let scenario = load_source(&cfg.scenario, cfg.seed)?;
    let out = par::with_threads(cfg.threads, || run_methods(cfg, &scenario))?;
    write_files(&cfg.out, &out.files)?;
    Ok(out)
}

pub fn write_files(root: &Path, files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    for (rel, bytes) in files {
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
