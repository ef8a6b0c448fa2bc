//! Cross-entropy, temperature softmax and the distillation losses.
//!
//! The distillation term is `T^2 * KL(. || .)` between temperature-softened
//! distributions, and the total distillation loss is
//! `alpha * CE(student, labels) + (1 - alpha) * T^2 * KL`.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::weights::NUM_CLASSES;
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking logs in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which distribution is the reference in the KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(p_teacher || p_student)`, the usual distillation objective.
    #[default]
    TeacherReference,
    /// `KL(p_student || p_teacher)`, the literal argument order.
    AsWritten,
}

/// Training objective for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    CrossEntropy,
    Distill {
        teacher_logits: Matrix,
        temperature: f64,
        alpha: f64,
        direction: KlDirection,
    },
}

pub fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("temperature must be positive, got {t}")))
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

pub fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().position(|&y| y > 1) {
        Some(i) => Err(Error::data(format!(
            "label {} at row {i} is not binary",
            labels[i]
        ))),
        None => Ok(()),
    }
}

fn check_logits(logits: &Matrix) -> Result<()> {
    if logits.cols() != NUM_CLASSES {
        return Err(Error::shape(format!(
            "logits must have {NUM_CLASSES} columns, got {}",
            logits.cols()
        )));
    }
    Ok(())
}

fn check_aligned(a: &Matrix, b: &Matrix) -> Result<()> {
    check_logits(a)?;
    check_logits(b)?;
    if a.rows() != b.rows() {
        return Err(Error::shape(format!(
            "student batch has {} rows, teacher batch has {}",
            a.rows(),
            b.rows()
        )));
    }
    Ok(())
}

impl LossSpec {
    pub fn validate(&self, student_logits: &Matrix, labels: &[u8]) -> Result<()> {
        check_logits(student_logits)?;
        check_labels(labels)?;
        if labels.len() != student_logits.rows() {
            return Err(Error::shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                student_logits.rows()
            )));
        }
        if let LossSpec::Distill {
            teacher_logits,
            temperature,
            alpha,
            ..
        } = self
        {
            check_temperature(*temperature)?;
            check_alpha(*alpha)?;
            check_aligned(student_logits, teacher_logits)?;
        }
        Ok(())
    }
}

/// Row-wise log-softmax of `logits / t`, computed with max subtraction.
fn log_softmax_row(row: &[f64], t: f64, out: &mut [f64]) {
    let max = row.iter().map(|v| v / t).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = v / t - max;
        sum += o.exp();
    }
    let lse = sum.ln();
    for o in out.iter_mut() {
        *o -= lse;
    }
}

fn softmax_row(row: &[f64], t: f64, out: &mut [f64]) {
    let max = row.iter().map(|v| v / t).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v / t - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise `softmax(logits / t)`.
pub fn softmax_temperature(logits: &Matrix, t: f64) -> Result<Matrix> {
    check_temperature(t)?;
    check_logits(logits)?;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_row(logits.row(i), t, out.row_mut(i));
    }
    Ok(out)
}

/// Mean negative log-likelihood of the labels under `probs`.
pub fn cross_entropy(probs: &Matrix, labels: &[u8]) -> Result<f64> {
    check_labels(labels)?;
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} labels for {} probability rows",
            labels.len(),
            probs.rows()
        )));
    }
    if probs.is_empty() {
        return Err(Error::shape("cross-entropy of an empty batch"));
    }
    let total: f64 = probs
        .iter_rows()
        .zip(labels)
        .map(|(p, &y)| -p[y as usize].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / probs.rows() as f64)
}

fn kl_row(log_ref: &[f64], log_other: &[f64]) -> f64 {
    log_ref
        .iter()
        .zip(log_other)
        .map(|(lr, lo)| lr.exp() * (lr - lo))
        .sum()
}

/// `T^2 * mean_batch KL` between softened student and teacher distributions.
pub fn kd_kl_loss(student: &Matrix, teacher: &Matrix, t: f64, direction: KlDirection) -> Result<f64> {
    check_temperature(t)?;
    check_aligned(student, teacher)?;
    if student.is_empty() {
        return Err(Error::shape("KL loss of an empty batch"));
    }
    let mut ls = [0.0; NUM_CLASSES];
    let mut lt = [0.0; NUM_CLASSES];
    let mut total = 0.0;
    for (s, te) in student.iter_rows().zip(teacher.iter_rows()) {
        log_softmax_row(s, t, &mut ls);
        log_softmax_row(te, t, &mut lt);
        total += match direction {
            KlDirection::TeacherReference => kl_row(&lt, &ls),
            KlDirection::AsWritten => kl_row(&ls, &lt),
        };
    }
    Ok(t * t * total / student.rows() as f64)
}

/// `alpha * CE + (1 - alpha) * KD-KL`. At `alpha` 1 or 0 the unused term is
/// not evaluated, so the result is bit-identical to the remaining term.
pub fn kd_total_loss(
    student: &Matrix,
    labels: &[u8],
    teacher: &Matrix,
    t: f64,
    alpha: f64,
    direction: KlDirection,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_aligned(student, teacher)?;
    if alpha == 1.0 {
        return cross_entropy(&softmax_temperature(student, 1.0)?, labels);
    }
    let kl = kd_kl_loss(student, teacher, t, direction)?;
    if alpha == 0.0 {
        check_labels(labels)?;
        return Ok(kl);
    }
    let ce = cross_entropy(&softmax_temperature(student, 1.0)?, labels)?;
    Ok(alpha * ce + (1.0 - alpha) * kl)
}

/// Loss value and its gradient with respect to the student logits.
pub fn loss_and_logit_grad(logits: &Matrix, labels: &[u8], spec: &LossSpec) -> Result<(f64, Matrix)> {
    spec.validate(logits, labels)?;
    let n = logits.rows();
    if n == 0 {
        return Err(Error::shape("loss of an empty batch"));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, NUM_CLASSES);

    let (ce_weight, kd) = match spec {
        LossSpec::CrossEntropy => (1.0, None),
        LossSpec::Distill {
            teacher_logits,
            temperature,
            alpha,
            direction,
        } => (*alpha, Some((teacher_logits, *temperature, *direction))),
    };

    let mut loss = 0.0;
    if ce_weight > 0.0 {
        let mut p = [0.0; NUM_CLASSES];
        let mut ce = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            softmax_row(logits.row(i), 1.0, &mut p);
            let y = label as usize;
            ce -= p[y].max(PROB_FLOOR).ln();
            let g = grad.row_mut(i);
            for c in 0..NUM_CLASSES {
                let target = if c == y { 1.0 } else { 0.0 };
                g[c] = ce_weight * (p[c] - target) * inv_n;
            }
        }
        loss = ce * inv_n;
    }

    if let Some((teacher, t, direction)) = kd {
        let kd_weight = 1.0 - ce_weight;
        if kd_weight > 0.0 {
            let mut ls = [0.0; NUM_CLASSES];
            let mut lt = [0.0; NUM_CLASSES];
            let mut kl = 0.0;
            // d(T^2 KL)/d(logit) = T * d KL / d(logit / T)
            let scale = kd_weight * t * inv_n;
            for i in 0..n {
                log_softmax_row(logits.row(i), t, &mut ls);
                log_softmax_row(teacher.row(i), t, &mut lt);
                let g = grad.row_mut(i);
                match direction {
                    KlDirection::TeacherReference => {
                        kl += kl_row(&lt, &ls);
                        for c in 0..NUM_CLASSES {
                            g[c] += scale * (ls[c].exp() - lt[c].exp());
                        }
                    }
                    KlDirection::AsWritten => {
                        kl += kl_row(&ls, &lt);
                        let diff: [f64; NUM_CLASSES] = std::array::from_fn(|c| ls[c] - lt[c]);
                        let mean: f64 = (0..NUM_CLASSES).map(|c| ls[c].exp() * diff[c]).sum();
                        for c in 0..NUM_CLASSES {
                            g[c] += scale * ls[c].exp() * (diff[c] - mean);
                        }
                    }
                }
            }
            let kl = t * t * kl * inv_n;
            loss = if ce_weight == 0.0 {
                kl
            } else {
                ce_weight * loss + kd_weight * kl
            };
        }
    }
    Ok((loss, grad))
}
