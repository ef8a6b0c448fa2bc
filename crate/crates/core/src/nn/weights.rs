use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// One dense layer: `weights` is `out x in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }
}

/// Parameters of a feed-forward ReLU network with two output logits.
///
/// Also used as the container for gradients, optimizer buffers and
/// federated updates, since those all mirror the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

pub const NUM_CLASSES: usize = 2;

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::config(format!(
            "a network needs at least 2 layer sizes, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::config(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    if *sizes.last().unwrap() != NUM_CLASSES {
        return Err(Error::config(format!(
            "the last layer must have {NUM_CLASSES} logits, got {sizes:?}"
        )));
    }
    Ok(())
}

impl ModelWeights {
    /// All-zero parameters for the given architecture.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    /// Glorot-uniform weights, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases.
    pub fn init(sizes: &[usize], rng: &mut StreamRng) -> Result<Self> {
        let mut model = Self::zeros(sizes)?;
        for layer in &mut model.layers {
            let a = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-a..=a);
            }
        }
        Ok(model)
    }

    /// Builds a model from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::config("a network needs at least one layer"))?;
        let mut sizes = vec![first.inputs];
        for (i, l) in layers.iter().enumerate() {
            if l.inputs != *sizes.last().unwrap() {
                return Err(Error::shape(format!(
                    "layer {i} takes {} inputs but the previous layer has {} outputs",
                    l.inputs,
                    sizes.last().unwrap()
                )));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::shape(format!("layer {i} buffers do not match its shape")));
            }
            sizes.push(l.outputs);
        }
        check_sizes(&sizes)?;
        Ok(Self { sizes, layers })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn total_parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.inputs * l.outputs + l.outputs)
            .sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            sizes: self.sizes.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.sizes == other.sizes
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.sizes, other.sizes
            )))
        }
    }

    /// Parameters in canonical order: per layer, weights then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_parameter_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.total_parameter_count(),
                flat.len()
            )));
        }
        for (p, v) in self.params_mut().zip(flat) {
            *p = *v;
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.params().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for p in self.params_mut() {
            *p *= factor;
        }
    }

    /// `self += other` elementwise. Shapes must already agree.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// Serializes to the portable weight format:
    ///
    /// ```text
    /// magic   b"EKDW"
    /// version u32 LE (= 1)
    /// n       u32 LE, number of layer sizes
    /// sizes   n x u32 LE
    /// params  f64 LE, per layer: weights (row-major out x in) then bias
    /// ```
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for p in self.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 4 * self.sizes.len() + 8 * self.total_parameter_count());
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::data(format!("truncated weight file: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::data("not a weight file (bad magic)"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(io)?;
        let version = u32::from_le_bytes(word);
        if version != WEIGHTS_VERSION {
            return Err(Error::data(format!("unsupported weight file version {version}")));
        }
        r.read_exact(&mut word).map_err(io)?;
        let n = u32::from_le_bytes(word) as usize;
        if n > 1024 {
            return Err(Error::data(format!("implausible layer count {n}")));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut word).map_err(io)?;
            sizes.push(u32::from_le_bytes(word) as usize);
        }
        let mut model = Self::zeros(&sizes).map_err(|e| Error::data(e.to_string()))?;
        let mut dword = [0u8; 8];
        for p in model.params_mut() {
            r.read_exact(&mut dword).map_err(io)?;
            *p = f64::from_le_bytes(dword);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(Error::data("trailing bytes after weight payload"));
        }
        Ok(model)
    }
}

const WEIGHTS_MAGIC: &[u8; 4] = b"EKDW";
const WEIGHTS_VERSION: u32 = 1;
