//! Forward pass, backpropagation and prediction for the ReLU MLP.
//!
//! Hidden layers use ReLU, the output layer is linear (logits). The ReLU
//! derivative at exactly zero is taken as zero.

use super::loss::{loss_and_logit_grad, LossSpec};
use super::matrix::Matrix;
use super::weights::{Layer, ModelWeights};
use crate::error::{Error, Result};

fn check_input(model: &ModelWeights, x: &Matrix) -> Result<()> {
    if x.cols() != model.input_dim() {
        return Err(Error::shape(format!(
            "input has {} features, model expects {}",
            x.cols(),
            model.input_dim()
        )));
    }
    Ok(())
}

fn dense_forward(layer: &Layer, input: &Matrix, relu: bool) -> Matrix {
    let (n_in, n_out) = (layer.inputs, layer.outputs);
    // Input-major copy of the weights so the inner loop runs over outputs.
    let mut wt = vec![0.0; n_in * n_out];
    for o in 0..n_out {
        for i in 0..n_in {
            wt[i * n_out + o] = layer.weights[o * n_in + i];
        }
    }
    let mut out = Matrix::zeros(input.rows(), n_out);
    for b in 0..input.rows() {
        let a = input.row(b);
        let o_row = out.row_mut(b);
        o_row.copy_from_slice(&layer.bias);
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (slot, wi) in o_row.iter_mut().zip(&wt[i * n_out..(i + 1) * n_out]) {
                *slot += wi * ai;
            }
        }
        if relu {
            o_row.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    out
}

/// Activations of every layer, input first, logits last.
fn forward_trace(model: &ModelWeights, x: &Matrix) -> Vec<Matrix> {
    let n_layers = model.layers().len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(x.clone());
    for (i, layer) in model.layers().iter().enumerate() {
        let next = dense_forward(layer, acts.last().unwrap(), i + 1 < n_layers);
        acts.push(next);
    }
    acts
}

/// Logits for every row of `x`.
pub fn forward(model: &ModelWeights, x: &Matrix) -> Result<Matrix> {
    check_input(model, x)?;
    let n_layers = model.layers().len();
    let mut act = None::<Matrix>;
    for (i, layer) in model.layers().iter().enumerate() {
        let input = act.as_ref().unwrap_or(x);
        act = Some(dense_forward(layer, input, i + 1 < n_layers));
    }
    Ok(act.expect("a model has at least one layer"))
}

/// Class with the larger logit; ties go to class 0.
pub fn argmax_label(logits: &[f64]) -> u8 {
    if logits[1] > logits[0] {
        1
    } else {
        0
    }
}

pub fn predict(model: &ModelWeights, x: &Matrix) -> Result<Vec<u8>> {
    let logits = forward(model, x)?;
    Ok(logits.iter_rows().map(argmax_label).collect())
}

/// Fraction of rows whose predicted label equals the given label.
pub fn accuracy(model: &ModelWeights, x: &Matrix, y: &[u8]) -> Result<f64> {
    let pred = predict(model, x)?;
    if pred.is_empty() {
        return Err(Error::shape("accuracy of an empty set"));
    }
    let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

fn backward(model: &ModelWeights, acts: &[Matrix], mut delta: Matrix) -> ModelWeights {
    let mut grads = model.zeros_like();
    let layers = model.layers();
    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let input = &acts[li];
        let g = &mut grads.layers_mut()[li];
        let n_out = layer.outputs;
        let rows = input.rows();
        let d_all = delta.as_slice();
        for o in 0..n_out {
            let gw = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for b in 0..rows {
                let d_o = d_all[b * n_out + o];
                if d_o == 0.0 {
                    continue;
                }
                g.bias[o] += d_o;
                for (gwi, ai) in gw.iter_mut().zip(input.row(b)) {
                    *gwi += d_o * ai;
                }
            }
        }
        if li == 0 {
            break;
        }
        let mut prev = Matrix::zeros(rows, layer.inputs);
        for o in 0..n_out {
            let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for b in 0..rows {
                let d_o = d_all[b * n_out + o];
                if d_o == 0.0 {
                    continue;
                }
                for (pi, wi) in prev.row_mut(b).iter_mut().zip(w) {
                    *pi += d_o * wi;
                }
            }
        }
        // ReLU mask from the post-activation values of the previous layer.
        for b in 0..rows {
            for (pi, ai) in prev.row_mut(b).iter_mut().zip(input.row(b)) {
                if *ai <= 0.0 {
                    *pi = 0.0;
                }
            }
        }
        delta = prev;
    }
    grads
}

/// Loss and exact gradients of the loss with respect to every parameter.
pub fn loss_and_gradients(
    model: &ModelWeights,
    x: &Matrix,
    y: &[u8],
    spec: &LossSpec,
) -> Result<(f64, ModelWeights)> {
    check_input(model, x)?;
    let acts = forward_trace(model, x);
    let (loss, delta) = loss_and_logit_grad(acts.last().unwrap(), y, spec)?;
    Ok((loss, backward(model, &acts, delta)))
}

/// One gradient per row, each the gradient of that row's own loss.
pub fn per_example_gradients(
    model: &ModelWeights,
    x: &Matrix,
    y: &[u8],
    spec: &LossSpec,
) -> Result<(f64, Vec<ModelWeights>)> {
    check_input(model, x)?;
    let acts = forward_trace(model, x);
    let logits = acts.last().unwrap();
    // Mean-reduced logit gradient; scaling by n recovers each row's own gradient.
    let (loss, delta) = loss_and_logit_grad(logits, y, spec)?;
    let n = x.rows() as f64;
    let mut out = Vec::with_capacity(x.rows());
    for b in 0..x.rows() {
        let row_acts: Vec<Matrix> = acts.iter().map(|a| a.select_rows(&[b])).collect();
        let mut d = delta.select_rows(&[b]);
        for v in d.as_mut_slice() {
            *v *= n;
        }
        out.push(backward(model, &row_acts, d));
    }
    Ok((loss, out))
}
