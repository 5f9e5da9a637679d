//! Layered feed-forward network: crossbar weighted summation followed by a
//! sigmoid neuron that is either evaluated deterministically or fired as a
//! Bernoulli spike with the sigmoid as its probability.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::{logistic, SigmoidFit};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, substream, StreamRng};

/// Model file format version.
pub const MODEL_VERSION: u32 = 1;

/// Default rate-coding window for stochastic inference.
pub const DEFAULT_RATE_WINDOW: usize = 64;

/// Dense row-major matrix; rows are outputs, columns are inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged matrix rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self { weights: Matrix::zeros(outputs, inputs), bias: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationMode {
    DeterministicSigmoid,
    StochasticFiring,
}

/// Maps a pre-activation to a firing probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FiringCurve {
    /// `σ(x) = 1/(1+exp(−x))`.
    Sigmoid,
    /// Device switching curve evaluated at `I = x·unit_current`.
    DeviceFit { fit: SigmoidFit, unit_current: f64 },
}

impl FiringCurve {
    pub fn probability(&self, x: f64) -> f64 {
        match self {
            FiringCurve::Sigmoid => sigmoid(x),
            FiringCurve::DeviceFit { fit, unit_current } => fit.probability(x * unit_current),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    logistic(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub layers: Vec<Layer>,
    pub activation: ActivationMode,
    pub firing: FiringCurve,
}

/// `W·x + b`, each row summed in ascending input order before adding the bias.
pub fn weighted_sum(input: &[f64], weights: &Matrix, bias: &[f64]) -> Result<Vec<f64>> {
    if input.len() != weights.cols || bias.len() != weights.rows {
        return Err(Error::Shape(format!(
            "weights are {}x{}, input has {} entries, bias has {}",
            weights.rows,
            weights.cols,
            input.len(),
            bias.len()
        )));
    }
    Ok((0..weights.rows)
        .map(|r| {
            let mut acc = 0.0;
            for (w, x) in weights.row(r).iter().zip(input) {
                acc += w * x;
            }
            acc + bias[r]
        })
        .collect())
}

/// Deterministic mode returns `σ(x)`; stochastic mode returns a 0/1 spike.
pub fn fire(pre_activation: f64, mode: ActivationMode, curve: &FiringCurve, rng: &mut StreamRng) -> f64 {
    let p = curve.probability(pre_activation);
    match mode {
        ActivationMode::DeterministicSigmoid => p,
        ActivationMode::StochasticFiring => {
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }
    }
}

impl NetworkModel {
    pub fn new(layers: Vec<Layer>, activation: ActivationMode) -> Result<Self> {
        let model = Self { layers, activation, firing: FiringCurve::Sigmoid };
        model.validate()?;
        Ok(model)
    }

    /// All weights and biases zero; `dims = [inputs, hidden…, outputs]`.
    pub fn zeros(dims: &[usize], activation: ActivationMode) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer dimensions {dims:?}")));
        }
        let layers = dims.windows(2).map(|d| Layer::zeros(d[1], d[0])).collect();
        Self::new(layers, activation)
    }

    /// Weights uniform in `[−r, r]`, `r = sqrt(6/(fan_in + fan_out))`; zero biases.
    pub fn glorot_uniform(dims: &[usize], activation: ActivationMode, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims, activation)?;
        let mut rng = substream(seed, "weight-init", 0);
        for layer in &mut model.layers {
            let r = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            for w in &mut layer.weights.data {
                *w = rng.random_range(-r..=r);
            }
        }
        Ok(model)
    }

    pub fn with_firing(mut self, firing: FiringCurve) -> Self {
        self.firing = firing;
        self
    }

    pub fn with_activation(mut self, activation: ActivationMode) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let w = &layer.weights;
            if w.data.len() != w.rows * w.cols || layer.bias.len() != w.rows || w.rows == 0 || w.cols == 0 {
                return Err(Error::Shape(format!("layer {i} has inconsistent dimensions")));
            }
            if !w.data.iter().chain(&layer.bias).all(|v| v.is_finite()) {
                return Err(Error::Domain(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(())
    }

    /// `[inputs, hidden…, outputs]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs()];
        d.extend(self.layers.iter().map(Layer::outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data.len() + l.bias.len()).sum()
    }

    /// Flattened parameters: per layer, row-major weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.data.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Runs one pass. Stochastic mode needs a seed and propagates 0/1 spikes.
    pub fn forward(&self, input: &[f64], seed: Option<u64>) -> Result<Vec<f64>> {
        match (self.activation, seed) {
            (ActivationMode::DeterministicSigmoid, _) => self.forward_with(input, None),
            (ActivationMode::StochasticFiring, Some(seed)) => {
                self.forward_with(input, Some(&mut rng_from_seed(seed)))
            }
            (ActivationMode::StochasticFiring, None) => {
                Err(Error::Domain("stochastic forward pass needs a seed".into()))
            }
        }
    }

    /// One pass drawing spikes from `rng` (ignored in deterministic mode).
    pub fn forward_with(&self, input: &[f64], mut rng: Option<&mut StreamRng>) -> Result<Vec<f64>> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            let pre = weighted_sum(&x, &layer.weights, &layer.bias)?;
            x = match (self.activation, rng.as_deref_mut()) {
                (ActivationMode::StochasticFiring, Some(r)) => {
                    pre.iter().map(|&z| fire(z, ActivationMode::StochasticFiring, &self.firing, r)).collect()
                }
                (ActivationMode::StochasticFiring, None) => {
                    return Err(Error::Domain("stochastic forward pass needs a stream".into()))
                }
                (ActivationMode::DeterministicSigmoid, _) => {
                    pre.iter().map(|&z| self.firing.probability(z)).collect()
                }
            };
        }
        Ok(x)
    }

    /// Per-layer pre-activations and activations of a deterministic pass;
    /// `activations[0]` is the input.
    pub fn trace(&self, input: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut activations = vec![input.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let pre = weighted_sum(activations.last().unwrap(), &layer.weights, &layer.bias)?;
            activations.push(pre.iter().map(|&z| sigmoid(z)).collect());
            pre_activations.push(pre);
        }
        Ok((pre_activations, activations))
    }

    /// Mean output spike rate over `window` stochastic passes, pass `w` using
    /// substream `w` of `seed`. Deterministic models return a single pass.
    pub fn forward_rate(&self, input: &[f64], window: usize, seed: u64) -> Result<Vec<f64>> {
        if self.activation == ActivationMode::DeterministicSigmoid {
            return self.forward_with(input, None);
        }
        if window == 0 {
            return Err(Error::Domain("rate window must be >= 1".into()));
        }
        let mut sum = vec![0.0; self.output_dim()];
        for w in 0..window {
            let mut rng = substream(seed, "rate-window", w as u64);
            let spikes = self.forward_with(input, Some(&mut rng))?;
            for (s, v) in sum.iter_mut().zip(spikes) {
                *s += v;
            }
        }
        Ok(sum.into_iter().map(|s| s / window as f64).collect())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &ModelFile::from(self))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(r)?;
        file.try_into()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }
}

/// On-disk form of a [`NetworkModel`].
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    dims: Vec<usize>,
    activation: ActivationMode,
    firing: FiringCurve,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&NetworkModel> for ModelFile {
    fn from(m: &NetworkModel) -> Self {
        Self {
            version: MODEL_VERSION,
            dims: m.dims(),
            activation: m.activation,
            firing: m.firing,
            layers: m
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weights.rows,
                    cols: l.weights.cols,
                    weights: l.weights.data.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for NetworkModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.version != MODEL_VERSION {
            return Err(Error::Domain(format!("unsupported model version {}", f.version)));
        }
        let layers = f
            .layers
            .into_iter()
            .map(|l| Layer { weights: Matrix { rows: l.rows, cols: l.cols, data: l.weights }, bias: l.bias })
            .collect();
        let model = NetworkModel::new(layers, f.activation)?.with_firing(f.firing);
        if model.dims() != f.dims {
            return Err(Error::Shape(format!(
                "dimension header {:?} disagrees with layers {:?}",
                f.dims,
                model.dims()
            )));
        }
        Ok(model)
    }
}
