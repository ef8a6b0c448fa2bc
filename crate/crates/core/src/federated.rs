//! FedAvg and DP-FedAvg over a scenario.
//!
//! Each round the cloud samples clients, every sampled client trains a copy
//! of the global model on its own training rows, and the returned weights are
//! averaged into the next global model. After the last round the global
//! model is evaluated on every device's test rows.

use serde::{Deserialize, Serialize};

use crate::dataio::Scenario;
use crate::distill::init_student;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_device, fingerprint, MethodReport};
use crate::nn::{
    cross_entropy, forward, softmax_temperature, train, Matrix, ModelWeights, Objective,
    OptimizerSpec, OptimizerState, ShuffleSource, TrainRun,
};
use crate::par;
use crate::rng::{Purpose, StreamRng, Streams, GLOBAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Privacy {
    #[default]
    None,
    Dp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Plain mean of the returned client models.
    #[default]
    Unweighted,
    /// Mean weighted by client training-set size.
    SampleCount,
}

/// What happens to a client's optimizer buffers between its rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientOptimizerState {
    /// Momentum buffers stay on the device and carry over to its next round.
    #[default]
    Persist,
    /// Fresh buffers every round.
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub rounds: usize,
    pub client_fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub hidden: Vec<usize>,
    pub privacy: Privacy,
    pub clip_norm: f64,
    pub noise_std: f64,
    pub weighting: Weighting,
    pub client_state: ClientOptimizerState,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            client_fraction: 0.1,
            local_epochs: 1,
            batch_size: 32,
            lr: 0.001,
            momentum: 0.9,
            hidden: vec![64, 64],
            privacy: Privacy::None,
            clip_norm: 1.0,
            noise_std: 0.01,
            weighting: Weighting::Unweighted,
            client_state: ClientOptimizerState::Persist,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("federated rounds must be at least 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::config(format!(
                "client fraction must lie in (0, 1], got {}",
                self.client_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> OptimizerSpec {
        match self.privacy {
            Privacy::None => OptimizerSpec::SgdMomentum {
                lr: self.lr,
                momentum: self.momentum,
            },
            Privacy::Dp => OptimizerSpec::DpSgd {
                lr: self.lr,
                momentum: self.momentum,
                clip_norm: self.clip_norm,
                noise_std: self.noise_std,
            },
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self.privacy {
            Privacy::None => "fedavg",
            Privacy::Dp => "dpfed",
        }
    }
}

/// Number of clients sampled per round: `max(1, round(fraction * n))`.
pub fn clients_per_round(device_count: usize, fraction: f64) -> usize {
    ((fraction * device_count as f64).round() as usize).clamp(1, device_count.max(1))
}

/// Uniform sample without replacement, returned in ascending order.
pub fn select_clients(device_count: usize, fraction: f64, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if device_count == 0 {
        return Err(Error::config("cannot select clients from zero devices"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("client fraction must lie in (0, 1], got {fraction}")));
    }
    let m = clients_per_round(device_count, fraction);
    let mut picked = rand::seq::index::sample(rng, device_count, m).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn check_models(models: &[ModelWeights]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::protocol("aggregation needs at least one model"))?;
    for m in &models[1..] {
        first.ensure_same_shape(m)?;
    }
    Ok(())
}

/// Elementwise arithmetic mean. Each coordinate is summed in ascending value
/// order, so the result does not depend on the order of `models`.
pub fn aggregate(models: &[ModelWeights]) -> Result<ModelWeights> {
    check_models(models)?;
    if models.len() == 1 {
        return Ok(models[0].clone());
    }
    let flats: Vec<Vec<f64>> = models.iter().map(ModelWeights::to_flat).collect();
    let n = models.len() as f64;
    let mut column = vec![0.0; models.len()];
    let mean: Vec<f64> = (0..flats[0].len())
        .map(|j| {
            for (c, f) in column.iter_mut().zip(&flats) {
                *c = f[j];
            }
            column.sort_unstable_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect();
    let mut out = models[0].zeros_like();
    out.set_flat(&mean)?;
    Ok(out)
}

/// Weighted mean with non-negative weights that sum to a positive value.
pub fn aggregate_weighted(models: &[ModelWeights], weights: &[f64]) -> Result<ModelWeights> {
    check_models(models)?;
    if weights.len() != models.len() {
        return Err(Error::shape(format!("{} weights for {} models", weights.len(), models.len())));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || total <= 0.0 {
        return Err(Error::protocol("aggregation weights must be non-negative with a positive sum"));
    }
    let flats: Vec<Vec<f64>> = models.iter().map(ModelWeights::to_flat).collect();
    let mut terms = vec![0.0; models.len()];
    let mean: Vec<f64> = (0..flats[0].len())
        .map(|j| {
            for ((t, f), w) in terms.iter_mut().zip(&flats).zip(weights) {
                *t = w * f[j];
            }
            terms.sort_unstable_by(f64::total_cmp);
            terms.iter().sum::<f64>() / total
        })
        .collect();
    let mut out = models[0].zeros_like();
    out.set_flat(&mean)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTelemetry {
    pub method: String,
    pub round: usize,
    pub selected: Vec<String>,
    /// Cross-entropy of the new global model over the selected clients' training rows.
    pub global_train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub report: MethodReport,
    pub global: ModelWeights,
    pub rounds: Vec<RoundTelemetry>,
}

/// Per-round telemetry as JSON lines.
pub fn telemetry_jsonl(rounds: &[RoundTelemetry]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rounds {
        out.extend(serde_json::to_vec(r).expect("telemetry serializes"));
        out.push(b'\n');
    }
    out
}

struct ClientUpdate {
    device: usize,
    model: ModelWeights,
    state: OptimizerState,
}

pub fn run_federated(scenario: &Scenario, cfg: &FedConfig, seed: u64) -> Result<FedOutcome> {
    cfg.validate()?;
    let n = scenario.devices.len();
    if n == 0 {
        return Err(Error::config("federated run over a scenario with no devices"));
    }
    let streams = Streams::new(seed);
    let mut sizes = vec![scenario.feature_dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(2);
    let mut global = init_student(&sizes, &streams)?;
    let optimizer = cfg.optimizer();
    let mut states: Vec<Option<OptimizerState>> = vec![None; n];
    let mut telemetry = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let selected = select_clients(
            n,
            cfg.client_fraction,
            &mut streams.stream(Purpose::ClientSelect, GLOBAL, round as u64),
        )?;
        let jobs: Vec<(usize, Option<OptimizerState>)> = selected
            .iter()
            .map(|&d| {
                let carried = match cfg.client_state {
                    ClientOptimizerState::Persist => states[d].take(),
                    ClientOptimizerState::Reset => None,
                };
                (d, carried)
            })
            .collect();
        let start = &global;
        let updates = par::map_indexed(jobs, |_, (d, carried)| -> Result<ClientUpdate> {
            let device = &scenario.devices[d];
            let mut model = start.clone();
            let mut state = match carried {
                Some(s) => s,
                None => OptimizerState::new(optimizer, &model)?,
            };
            let mut noise = streams.stream(Purpose::DpNoise, d as u64, round as u64);
            train(
                &mut model,
                &mut state,
                &device.train.x,
                &device.train.y,
                TrainRun {
                    objective: Objective::CrossEntropy,
                    epochs: cfg.local_epochs,
                    batch_size: cfg.batch_size,
                    shuffle: ShuffleSource {
                        streams,
                        purpose: Purpose::Shuffle,
                        subject: d as u64,
                        first_epoch: (round * cfg.local_epochs) as u64,
                    },
                    dp_rng: optimizer.is_private().then_some(&mut noise),
                },
            )?;
            Ok(ClientUpdate { device: d, model, state })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let models: Vec<ModelWeights> = updates.iter().map(|u| u.model.clone()).collect();
        global = match cfg.weighting {
            Weighting::Unweighted => aggregate(&models)?,
            Weighting::SampleCount => {
                let w: Vec<f64> = updates
                    .iter()
                    .map(|u| scenario.devices[u.device].train.len() as f64)
                    .collect();
                aggregate_weighted(&models, &w)?
            }
        };
        if !global.all_finite() {
            return Err(Error::Invariant(format!("non-finite global model after round {round}")));
        }

        let pooled_x = Matrix::vstack(selected.iter().map(|&d| &scenario.devices[d].train.x))?;
        let pooled_y: Vec<u8> = selected
            .iter()
            .flat_map(|&d| scenario.devices[d].train.y.iter().copied())
            .collect();
        let global_train_loss = if pooled_y.is_empty() {
            0.0
        } else {
            cross_entropy(&softmax_temperature(&forward(&global, &pooled_x)?, 1.0)?, &pooled_y)?
        };
        telemetry.push(RoundTelemetry {
            method: cfg.method_name().to_string(),
            round,
            selected: selected.iter().map(|&d| scenario.devices[d].device_id.clone()).collect(),
            global_train_loss,
        });
        for u in updates {
            states[u.device] = Some(u.state);
        }
    }

    let devices = scenario
        .devices
        .iter()
        .map(|d| evaluate_device(&global, d, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(FedOutcome {
        report: MethodReport {
            method: cfg.method_name().to_string(),
            devices,
            config_fingerprint: fingerprint(cfg),
            seed,
        },
        global,
        rounds: telemetry,
    })
}
