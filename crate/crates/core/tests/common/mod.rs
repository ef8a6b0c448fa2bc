#![allow(dead_code, clippy::needless_range_loop)]

use edgekd::nn::{KlDirection, LossSpec, Matrix, ModelWeights};
use edgekd::rng::{Purpose, Streams};
use rand::Rng;

/// Plain-loop forward pass, written independently of the library kernels.
pub fn oracle_logits(model: &ModelWeights, x: &Matrix) -> Vec<Vec<f64>> {
    let layers = model.layers();
    (0..x.rows())
        .map(|r| {
            let mut a: Vec<f64> = x.row(r).to_vec();
            for (li, layer) in layers.iter().enumerate() {
                let mut z = vec![0.0; layer.outputs];
                for o in 0..layer.outputs {
                    let mut s = layer.bias[o];
                    for i in 0..layer.inputs {
                        s += layer.weights[o * layer.inputs + i] * a[i];
                    }
                    z[o] = s;
                }
                if li + 1 < layers.len() {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                a = z;
            }
            a
        })
        .collect()
}

/// Signs of every hidden pre-activation, used to detect ReLU kinks.
pub fn activation_pattern(model: &ModelWeights, x: &Matrix) -> Vec<bool> {
    let layers = model.layers();
    let mut pattern = Vec::new();
    for r in 0..x.rows() {
        let mut a: Vec<f64> = x.row(r).to_vec();
        for layer in &layers[..layers.len() - 1] {
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| layer.bias[o] + (0..layer.inputs).map(|i| layer.weights[o * layer.inputs + i] * a[i]).sum::<f64>())
                .collect();
            pattern.extend(z.iter().map(|v| *v > 0.0));
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    pattern
}

fn softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().map(|v| v / t).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v / t - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Loss straight from the definitions: mean cross-entropy, and
/// `alpha * CE + (1 - alpha) * T^2 * mean KL` for distillation.
pub fn oracle_loss(logits: &[Vec<f64>], y: &[u8], spec: &LossSpec) -> f64 {
    let n = logits.len() as f64;
    let ce = logits
        .iter()
        .zip(y)
        .map(|(z, &c)| -softmax(z, 1.0)[c as usize].max(1e-12).ln())
        .sum::<f64>()
        / n;
    match spec {
        LossSpec::CrossEntropy => ce,
        LossSpec::Distill {
            teacher_logits,
            temperature: t,
            alpha,
            direction,
        } => {
            let mut kl = 0.0;
            for (i, z) in logits.iter().enumerate() {
                let ps = softmax(z, *t);
                let pt = softmax(teacher_logits.row(i), *t);
                for j in 0..ps.len() {
                    kl += match direction {
                        KlDirection::TeacherReference => pt[j] * (pt[j].ln() - ps[j].ln()),
                        KlDirection::AsWritten => ps[j] * (ps[j].ln() - pt[j].ln()),
                    };
                }
            }
            alpha * ce + (1.0 - alpha) * t * t * kl / n
        }
    }
}

pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// Compares every analytic gradient coordinate with a central difference of
/// the oracle loss. Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn finite_difference_check(
    model: &ModelWeights,
    x: &Matrix,
    y: &[u8],
    spec: &LossSpec,
    analytic: &ModelWeights,
    h: f64,
    floor: f64,
) -> FdReport {
    let base = model.to_flat();
    let grad = analytic.to_flat();
    let pattern = activation_pattern(model, x);
    let mut probe = model.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in 0..base.len() {
        let mut eval = |delta: f64| {
            let mut p = base.clone();
            p[i] += delta;
            probe.set_flat(&p).unwrap();
            (oracle_loss(&oracle_logits(&probe, x), y, spec), activation_pattern(&probe, x))
        };
        let (up, pu) = eval(h);
        let (down, pd) = eval(-h);
        if pu != pattern || pd != pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(floor);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    report
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_model(sizes: &[usize], seed: u64) -> ModelWeights {
    let mut m = ModelWeights::init(sizes, &mut Streams::new(seed).stream(Purpose::StudentInit, 0, 0)).unwrap();
    // Non-zero biases so the bias gradients are exercised away from zero.
    let mut rng = Streams::new(seed).stream(Purpose::Split, 0, 0);
    for layer in m.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = 0.2 * (2.0 * rng.random::<f64>() - 1.0));
    }
    m
}

/// O(n^2) k-NN: sort every other point by (squared distance, index).
pub fn brute_knn(points: &Matrix, q: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..points.rows())
        .filter(|&i| i != q)
        .map(|i| {
            let d: f64 = points.row(i).iter().zip(points.row(q)).map(|(a, b)| (a - b).powi(2)).sum();
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Bucket index from explicit interval tests.
pub fn oracle_bucket(delta_pp: f64) -> usize {
    if delta_pp < -25.0 {
        0
    } else if delta_pp < -15.0 {
        1
    } else if delta_pp < -5.0 {
        2
    } else if delta_pp < 5.0 {
        3
    } else if delta_pp < 15.0 {
        4
    } else if delta_pp < 25.0 {
        5
    } else {
        6
    }
}

pub fn oracle_vote(a: u8, b: u8, c: u8) -> u8 {
    if (a as u32 + b as u32 + c as u32) >= 2 {
        1
    } else {
        0
    }
}
