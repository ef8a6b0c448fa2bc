//! Local baseline, cloud teacher training and the three distillation
//! pipelines (teacher on real pooled rows, teacher on SMOTE rows, and
//! SMOTE distillation followed by local fine-tuning).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataio::{DeviceDataset, Origin, Samples, Scenario};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_device, fingerprint, MethodReport};
use crate::nn::{
    train, KlDirection, Matrix, ModelWeights, Objective, OptimizerSpec, OptimizerState,
    ShuffleSource, TrainLog, TrainRun,
};
use crate::par;
use crate::rng::{Purpose, Streams, GLOBAL};
use crate::smote::{generate_synthetic_dataset, SmoteConfig};

pub fn layer_sizes(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input_dim);
    sizes.extend_from_slice(hidden);
    sizes.push(2);
    sizes
}

/// Shared starting point of every student-architecture model in a run.
pub fn init_student(sizes: &[usize], streams: &Streams) -> Result<ModelWeights> {
    ModelWeights::init(sizes, &mut streams.stream(Purpose::StudentInit, GLOBAL, 0))
}

/// Student architecture and its SGD settings, used by the local baseline and
/// by every distilled student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Epochs of plain local training for the baseline.
    pub local_epochs: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: 0.001,
            momentum: 0.9,
            batch_size: 32,
            local_epochs: 10,
        }
    }
}

impl StudentConfig {
    pub fn optimizer(&self) -> OptimizerSpec {
        OptimizerSpec::SgdMomentum {
            lr: self.lr,
            momentum: self.momentum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("student batch size must be positive"));
        }
        self.optimizer().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherData {
    RealPooled,
    SmotePooled,
}

/// Which rows a KD-SMOTE student distills on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentData {
    #[default]
    Real,
    Smote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub kl_direction: KlDirection,
    pub teacher_hidden: Vec<usize>,
    pub teacher_lr: f64,
    pub teacher_epochs: usize,
    pub teacher_batch_size: usize,
    pub kd_epochs: usize,
    pub finetune_epochs: usize,
    pub kd_smote_student_data: StudentData,
    pub smote: SmoteConfig,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            temperature: 10.0,
            alpha: 0.5,
            kl_direction: KlDirection::TeacherReference,
            teacher_hidden: vec![256, 256, 256],
            teacher_lr: 1e-4,
            teacher_epochs: 10,
            teacher_batch_size: 32,
            kd_epochs: 10,
            finetune_epochs: 10,
            kd_smote_student_data: StudentData::Real,
            smote: SmoteConfig::default(),
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        crate::nn::loss::check_temperature(self.temperature)?;
        crate::nn::loss::check_alpha(self.alpha)?;
        if self.teacher_batch_size == 0 {
            return Err(Error::config("teacher batch size must be positive"));
        }
        OptimizerSpec::Adam { lr: self.teacher_lr }.validate()?;
        self.smote.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdVariant {
    KdScr,
    KdSmote,
    TfKd,
}

impl KdVariant {
    pub fn name(self) -> &'static str {
        match self {
            KdVariant::KdScr => "kd_scr",
            KdVariant::KdSmote => "kd_smote",
            KdVariant::TfKd => "tf_kd",
        }
    }

    pub fn teacher_data(self) -> TeacherData {
        match self {
            KdVariant::KdScr => TeacherData::RealPooled,
            KdVariant::KdSmote | KdVariant::TfKd => TeacherData::SmotePooled,
        }
    }
}

impl fmt::Display for KdVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Data-flow audit

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Device,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub side: Side,
    pub operation: String,
    pub real_rows: usize,
    pub synthetic_rows: usize,
}

/// Records how many rows of each origin every cloud-side step touched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataAudit {
    pub events: Vec<AuditEvent>,
}

impl DataAudit {
    pub fn record(&mut self, side: Side, operation: impl Into<String>, samples: &Samples) {
        let (real, synthetic) = match samples.origin {
            Origin::Real => (samples.len(), 0),
            Origin::Synthetic => (0, samples.len()),
        };
        self.events.push(AuditEvent {
            side,
            operation: operation.into(),
            real_rows: real,
            synthetic_rows: synthetic,
        });
    }

    pub fn cloud_real_rows(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.side == Side::Cloud)
            .map(|e| e.real_rows)
            .sum()
    }

    pub fn cloud_synthetic_rows(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.side == Side::Cloud)
            .map(|e| e.synthetic_rows)
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Local baseline

fn device_shuffle(streams: &Streams, purpose: Purpose, device: usize) -> ShuffleSource {
    ShuffleSource {
        streams: *streams,
        purpose,
        subject: device as u64,
        first_epoch: 0,
    }
}

/// Plain cross-entropy training of the student architecture on one device.
pub fn train_local(
    train_rows: &Samples,
    device: usize,
    cfg: &StudentConfig,
    streams: &Streams,
) -> Result<(ModelWeights, TrainLog)> {
    cfg.validate()?;
    let mut model = init_student(&layer_sizes(train_rows.x.cols(), &cfg.hidden), streams)?;
    let mut opt = OptimizerState::new(cfg.optimizer(), &model)?;
    let log = train(
        &mut model,
        &mut opt,
        &train_rows.x,
        &train_rows.y,
        TrainRun {
            objective: Objective::CrossEntropy,
            epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            shuffle: device_shuffle(streams, Purpose::Shuffle, device),
            dp_rng: None,
        },
    )?;
    Ok((model, log))
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub report: MethodReport,
    pub models: Vec<ModelWeights>,
}

pub fn run_local(scenario: &Scenario, cfg: &StudentConfig, seed: u64) -> Result<LocalOutcome> {
    let streams = Streams::new(seed);
    let trained = par::map_indexed(scenario.devices.iter().collect(), |i, d: &DeviceDataset| {
        let (model, _) = train_local(&d.train, i, cfg, &streams)?;
        let result = evaluate_device(&model, d, false)?;
        Ok((model, result))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (models, devices): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok(LocalOutcome {
        report: MethodReport {
            method: "local".into(),
            devices,
            config_fingerprint: fingerprint(cfg),
            seed,
        },
        models,
    })
}

// ---------------------------------------------------------------------------
// Cloud side

/// Rows uploaded to the cloud for teacher training.
#[derive(Debug, Clone)]
pub struct Pool {
    pub samples: Samples,
    /// Per-device synthetic sets (SMOTE mode only; `None` on failure).
    pub synthetic: Vec<Option<Samples>>,
    /// Devices whose SMOTE generation failed.
    pub failed: Vec<usize>,
}

fn concat(parts: &[&Samples], origin: Origin) -> Result<Samples> {
    let x = Matrix::vstack(parts.iter().map(|s| &s.x))?;
    let y = parts.iter().flat_map(|s| s.y.iter().copied()).collect();
    Samples::new(x, y, origin)
}

/// Concatenates every device's training rows (real) or their SMOTE
/// replacements (smote). In SMOTE mode devices whose generation fails are
/// left out and listed in [`Pool::failed`].
pub fn pool_training_data(
    scenario: &Scenario,
    source: TeacherData,
    smote: &SmoteConfig,
    streams: &Streams,
    audit: &mut DataAudit,
) -> Result<Pool> {
    match source {
        TeacherData::RealPooled => {
            for d in &scenario.devices {
                audit.record(Side::Cloud, format!("upload:{}", d.device_id), &d.train);
            }
            let parts: Vec<&Samples> = scenario.devices.iter().map(|d| &d.train).collect();
            Ok(Pool {
                samples: concat(&parts, Origin::Real)?,
                synthetic: vec![None; scenario.devices.len()],
                failed: Vec::new(),
            })
        }
        TeacherData::SmotePooled => {
            let generated = par::map_indexed(scenario.devices.iter().collect(), |i, d: &DeviceDataset| {
                let mut rng = streams.stream(Purpose::Smote, i as u64, 0);
                generate_synthetic_dataset(&d.device_id, &d.train, smote, &mut rng)
            });
            let mut synthetic = Vec::with_capacity(generated.len());
            let mut failed = Vec::new();
            for (i, g) in generated.into_iter().enumerate() {
                match g {
                    Ok(set) => {
                        audit.record(
                            Side::Cloud,
                            format!("upload:{}", scenario.devices[i].device_id),
                            &set.samples,
                        );
                        synthetic.push(Some(set.samples));
                    }
                    Err(Error::Data(msg)) => {
                        log::warn!("SMOTE failed, device falls back to local training: {msg}");
                        failed.push(i);
                        synthetic.push(None);
                    }
                    Err(e) => return Err(e),
                }
            }
            let parts: Vec<&Samples> = synthetic.iter().flatten().collect();
            if parts.is_empty() {
                return Err(Error::data("SMOTE generation failed on every device"));
            }
            Ok(Pool {
                samples: concat(&parts, Origin::Synthetic)?,
                synthetic,
                failed,
            })
        }
    }
}

/// Trains the high-capacity teacher with Adam and plain cross-entropy.
pub fn train_teacher(
    pooled: &Samples,
    cfg: &KdConfig,
    streams: &Streams,
    audit: &mut DataAudit,
) -> Result<(ModelWeights, TrainLog)> {
    cfg.validate()?;
    audit.record(Side::Cloud, "train_teacher", pooled);
    let sizes = layer_sizes(pooled.x.cols(), &cfg.teacher_hidden);
    let mut model = ModelWeights::init(&sizes, &mut streams.stream(Purpose::TeacherInit, GLOBAL, 0))?;
    let mut opt = OptimizerState::new(OptimizerSpec::Adam { lr: cfg.teacher_lr }, &model)?;
    let log = train(
        &mut model,
        &mut opt,
        &pooled.x,
        &pooled.y,
        TrainRun {
            objective: Objective::CrossEntropy,
            epochs: cfg.teacher_epochs,
            batch_size: cfg.teacher_batch_size,
            shuffle: ShuffleSource {
                streams: *streams,
                purpose: Purpose::TeacherShuffle,
                subject: GLOBAL,
                first_epoch: 0,
            },
            dp_rng: None,
        },
    )?;
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Device side

/// Distills `teacher` into a fresh student on `rows`, minimizing
/// `alpha * CE + (1 - alpha) * T^2 * KL`. Teacher logits are recomputed for
/// every batch; the teacher itself is never modified.
pub fn train_student_kd(
    rows: &Samples,
    teacher: &ModelWeights,
    device: usize,
    student: &StudentConfig,
    cfg: &KdConfig,
    streams: &Streams,
) -> Result<(ModelWeights, TrainLog)> {
    student.validate()?;
    cfg.validate()?;
    if teacher.input_dim() != rows.x.cols() {
        return Err(Error::shape(format!(
            "teacher takes {} features, device rows have {}",
            teacher.input_dim(),
            rows.x.cols()
        )));
    }
    let mut model = init_student(&layer_sizes(rows.x.cols(), &student.hidden), streams)?;
    let mut opt = OptimizerState::new(student.optimizer(), &model)?;
    let log = train(
        &mut model,
        &mut opt,
        &rows.x,
        &rows.y,
        TrainRun {
            objective: Objective::Distill {
                teacher,
                temperature: cfg.temperature,
                alpha: cfg.alpha,
                direction: cfg.kl_direction,
            },
            epochs: cfg.kd_epochs,
            batch_size: student.batch_size,
            shuffle: device_shuffle(streams, Purpose::Shuffle, device),
            dp_rng: None,
        },
    )?;
    Ok((model, log))
}

/// Continues training `model` with plain cross-entropy and a fresh optimizer.
pub fn fine_tune(
    mut model: ModelWeights,
    rows: &Samples,
    device: usize,
    student: &StudentConfig,
    epochs: usize,
    streams: &Streams,
) -> Result<(ModelWeights, TrainLog)> {
    let mut opt = OptimizerState::new(student.optimizer(), &model)?;
    let log = train(
        &mut model,
        &mut opt,
        &rows.x,
        &rows.y,
        TrainRun {
            objective: Objective::CrossEntropy,
            epochs,
            batch_size: student.batch_size,
            shuffle: device_shuffle(streams, Purpose::FineTuneShuffle, device),
            dp_rng: None,
        },
    )?;
    Ok((model, log))
}

/// A trained teacher together with the pool it was trained on.
#[derive(Debug, Clone)]
pub struct TeacherBundle {
    pub source: TeacherData,
    pub teacher: ModelWeights,
    pub log: TrainLog,
    pub pool: Pool,
    pub audit: DataAudit,
}

pub fn prepare_teacher(scenario: &Scenario, source: TeacherData, cfg: &KdConfig, seed: u64) -> Result<TeacherBundle> {
    cfg.validate()?;
    if scenario.devices.is_empty() {
        return Err(Error::config("distillation over a scenario with no devices"));
    }
    let streams = Streams::new(seed);
    let mut audit = DataAudit::default();
    let pool = pool_training_data(scenario, source, &cfg.smote, &streams, &mut audit)?;
    let (teacher, log) = train_teacher(&pool.samples, cfg, &streams, &mut audit)?;
    Ok(TeacherBundle {
        source,
        teacher,
        log,
        pool,
        audit,
    })
}

#[derive(Debug, Clone)]
pub struct KdOutcome {
    pub report: MethodReport,
    pub students: Vec<ModelWeights>,
    pub audit: DataAudit,
}

#[derive(Serialize)]
struct KdFingerprint<'a> {
    variant: KdVariant,
    student: &'a StudentConfig,
    kd: &'a KdConfig,
}

/// Runs one distillation variant on top of an already trained teacher.
pub fn run_kd_with_teacher(
    scenario: &Scenario,
    variant: KdVariant,
    bundle: &TeacherBundle,
    student: &StudentConfig,
    cfg: &KdConfig,
    seed: u64,
) -> Result<KdOutcome> {
    if bundle.source != variant.teacher_data() {
        return Err(Error::config(format!(
            "{variant} needs a {:?} teacher, got {:?}",
            variant.teacher_data(),
            bundle.source
        )));
    }
    let streams = Streams::new(seed);
    let teacher = &bundle.teacher;
    let trained = par::map_indexed(scenario.devices.iter().collect(), |i, d: &DeviceDataset| {
        let synthetic = bundle.pool.synthetic.get(i).and_then(Option::as_ref);
        let needs_synthetic = variant == KdVariant::TfKd
            || (variant == KdVariant::KdSmote && cfg.kd_smote_student_data == StudentData::Smote);
        let smote_failed = bundle.pool.failed.contains(&i);
        let (model, fallback) = if smote_failed || (needs_synthetic && synthetic.is_none()) {
            log::warn!("{variant}: device {} falls back to local training", d.device_id);
            (train_local(&d.train, i, student, &streams)?.0, true)
        } else {
            let model = match variant {
                KdVariant::KdScr => train_student_kd(&d.train, teacher, i, student, cfg, &streams)?.0,
                KdVariant::KdSmote => {
                    let rows = match cfg.kd_smote_student_data {
                        StudentData::Real => &d.train,
                        StudentData::Smote => synthetic.expect("checked above"),
                    };
                    train_student_kd(rows, teacher, i, student, cfg, &streams)?.0
                }
                KdVariant::TfKd => {
                    let rows = synthetic.expect("checked above");
                    let (stage1, _) = train_student_kd(rows, teacher, i, student, cfg, &streams)?;
                    fine_tune(stage1, &d.train, i, student, cfg.finetune_epochs, &streams)?.0
                }
            };
            (model, false)
        };
        let result = evaluate_device(&model, d, fallback)?;
        Ok((model, result))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (students, devices): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok(KdOutcome {
        report: MethodReport {
            method: variant.name().into(),
            devices,
            config_fingerprint: fingerprint(&KdFingerprint {
                variant,
                student,
                kd: cfg,
            }),
            seed,
        },
        students,
        audit: bundle.audit.clone(),
    })
}

pub fn run_kd_pipeline(
    scenario: &Scenario,
    variant: KdVariant,
    student: &StudentConfig,
    cfg: &KdConfig,
    seed: u64,
) -> Result<(KdOutcome, TeacherBundle)> {
    let bundle = prepare_teacher(scenario, variant.teacher_data(), cfg, seed)?;
    let outcome = run_kd_with_teacher(scenario, variant, &bundle, student, cfg, seed)?;
    Ok((outcome, bundle))
}
