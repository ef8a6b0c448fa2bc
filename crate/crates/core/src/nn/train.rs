//! Mini-batch training loop shared by every method.

use rand::seq::SliceRandom;

use super::loss::{KlDirection, LossSpec};
use super::matrix::Matrix;
use super::network::{forward, loss_and_gradients, per_example_gradients};
use super::optim::{dp_clip_and_noise, OptimizerSpec, OptimizerState};
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamRng, Streams};

/// What the model is trained against.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    CrossEntropy,
    Distill {
        teacher: &'a ModelWeights,
        temperature: f64,
        alpha: f64,
        direction: KlDirection,
    },
}

/// Where epoch shuffles come from: epoch `e` of this run draws its
/// permutation from stream `(purpose, subject, first_epoch + e)`.
#[derive(Debug, Clone, Copy)]
pub struct ShuffleSource {
    pub streams: Streams,
    pub purpose: Purpose,
    pub subject: u64,
    pub first_epoch: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

pub struct TrainRun<'a> {
    pub objective: Objective<'a>,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle: ShuffleSource,
    /// Noise source for DP-SGD; required iff the optimizer is private.
    pub dp_rng: Option<&'a mut StreamRng>,
}

pub fn train(
    model: &mut ModelWeights,
    opt: &mut OptimizerState,
    x: &Matrix,
    y: &[u8],
    run: TrainRun<'_>,
) -> Result<TrainLog> {
    let TrainRun {
        objective,
        epochs,
        batch_size,
        shuffle,
        mut dp_rng,
    } = run;
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if x.rows() != y.len() {
        return Err(Error::shape(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if let Objective::Distill { teacher, .. } = objective {
        if teacher.input_dim() != model.input_dim() {
            return Err(Error::shape(format!(
                "teacher takes {} features, student takes {}",
                teacher.input_dim(),
                model.input_dim()
            )));
        }
    }
    let dp = match *opt.spec() {
        OptimizerSpec::DpSgd {
            clip_norm,
            noise_std,
            ..
        } => Some((clip_norm, noise_std)),
        _ => None,
    };
    if dp.is_some() && dp_rng.is_none() {
        return Err(Error::config("DP-SGD training needs a noise stream"));
    }

    let mut log = TrainLog::default();
    if epochs == 0 || x.is_empty() {
        return Ok(log);
    }
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for epoch in 0..epochs {
        let mut rng = shuffle
            .streams
            .stream(shuffle.purpose, shuffle.subject, shuffle.first_epoch + epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let bx = x.select_rows(chunk);
            let by: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
            let spec = match objective {
                Objective::CrossEntropy => LossSpec::CrossEntropy,
                Objective::Distill {
                    teacher,
                    temperature,
                    alpha,
                    direction,
                } => LossSpec::Distill {
                    teacher_logits: forward(teacher, &bx)?,
                    temperature,
                    alpha,
                    direction,
                },
            };
            let (loss, grads) = match dp {
                None => loss_and_gradients(model, &bx, &by, &spec)?,
                Some((clip, sigma)) => {
                    let (loss, per) = per_example_gradients(model, &bx, &by, &spec)?;
                    let rng = dp_rng.as_deref_mut().expect("checked above");
                    (loss, dp_clip_and_noise(&per, clip, sigma, rng)?)
                }
            };
            opt.apply(model, &grads)?;
            log.step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
        }
        log.epoch_losses.push(epoch_loss / batches as f64);
    }
    Ok(log)
}
