//! Full-batch gradient descent, stochastic gradient descent and minibatch
//! gradient descent over any model exposing a flat parameter vector and a
//! per-example gradient.
//!
//! Every reduction runs in ascending example order, so `minibatch(B = 1)` is
//! bit-identical to SGD and `minibatch(B = n)` to GD.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ActivationMode, FiringCurve, Layer, Matrix, NetworkModel};
use crate::rng::substream;

/// Training aborts once the mean epoch loss exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

const BCE_CLAMP: f64 = 1e-15;

/// Gradients are computed on the rayon pool from this batch size up.
const PARALLEL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Example {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }
}

/// Per-example loss, summed over output components; datasets report the mean
/// over examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossSpec {
    /// `½ Σ (ŷ − y)²`.
    SquaredError,
    /// `−Σ [y ln ŷ + (1 − y) ln(1 − ŷ)]`.
    BinaryCrossEntropy,
}

impl LossSpec {
    pub fn value(&self, prediction: &[f64], target: &[f64]) -> f64 {
        prediction
            .iter()
            .zip(target)
            .map(|(&p, &y)| match self {
                LossSpec::SquaredError => 0.5 * (p - y) * (p - y),
                LossSpec::BinaryCrossEntropy => {
                    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                }
            })
            .sum()
    }
}

/// What the optimizers need from a model.
pub trait Trainable: Clone + Send + Sync {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    fn loss(&self, example: &Example, loss: LossSpec) -> Result<f64>;
    fn gradient(&self, example: &Example, loss: LossSpec) -> Result<Vec<f64>>;
}

/// Gradient with the same layout as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    /// Same ordering as [`NetworkModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.data.iter().chain(&l.bias).copied()).collect()
    }
}

fn check_differentiable(model: &NetworkModel) -> Result<()> {
    if model.activation != ActivationMode::DeterministicSigmoid {
        return Err(Error::UnsupportedMode(
            "only deterministic-sigmoid networks can be differentiated".into(),
        ));
    }
    if model.firing != FiringCurve::Sigmoid {
        return Err(Error::UnsupportedMode(
            "backpropagation needs the mathematical sigmoid firing curve".into(),
        ));
    }
    Ok(())
}

/// Exact gradient of the per-example loss by reverse-mode differentiation.
pub fn backprop_gradient(model: &NetworkModel, example: &Example, loss: LossSpec) -> Result<Gradient> {
    check_differentiable(model)?;
    if example.y.len() != model.output_dim() {
        return Err(Error::Shape(format!(
            "target has {} entries, network emits {}",
            example.y.len(),
            model.output_dim()
        )));
    }
    let (_, act) = model.trace(&example.x)?;
    let out = act.last().unwrap();
    // δ = ∂loss/∂z at the output layer.
    let mut delta: Vec<f64> = out
        .iter()
        .zip(&example.y)
        .map(|(&p, &y)| match loss {
            LossSpec::SquaredError => (p - y) * p * (1.0 - p),
            LossSpec::BinaryCrossEntropy => p - y,
        })
        .collect();

    let mut layers: Vec<Layer> = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate().rev() {
        let input = &act[l];
        let mut gw = Matrix::zeros(layer.outputs(), layer.inputs());
        for (r, d) in delta.iter().enumerate() {
            for (c, a) in input.iter().enumerate() {
                gw.data[r * gw.cols + c] = d * a;
            }
        }
        let next_delta = if l > 0 {
            (0..layer.inputs())
                .map(|c| {
                    let mut back = 0.0;
                    for (r, d) in delta.iter().enumerate() {
                        back += layer.weights.get(r, c) * d;
                    }
                    back * input[c] * (1.0 - input[c])
                })
                .collect()
        } else {
            Vec::new()
        };
        layers.push(Layer { weights: gw, bias: delta });
        delta = next_delta;
    }
    layers.reverse();
    Ok(Gradient { layers })
}

impl Trainable for NetworkModel {
    fn params(&self) -> Vec<f64> {
        NetworkModel::params(self)
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        NetworkModel::set_params(self, params)
    }

    fn loss(&self, example: &Example, loss: LossSpec) -> Result<f64> {
        if example.y.len() != self.output_dim() {
            return Err(Error::Shape("target dimension mismatch".into()));
        }
        let out = self.forward_with(&example.x, None)?;
        Ok(loss.value(&out, &example.y))
    }

    fn gradient(&self, example: &Example, loss: LossSpec) -> Result<Vec<f64>> {
        backprop_gradient(self, example, loss).map(|g| g.flatten())
    }
}

/// Central differences `(Q(w + h·eᵢ) − Q(w − h·eᵢ)) / 2h`, one coordinate at a time.
pub fn finite_difference_gradient<M: Trainable>(
    model: &M,
    example: &Example,
    loss: LossSpec,
    h: f64,
) -> Result<Vec<f64>> {
    let base = model.params();
    let mut probe = model.clone();
    let mut grad = Vec::with_capacity(base.len());
    let mut shifted = base.clone();
    for i in 0..base.len() {
        shifted[i] = base[i] + h;
        probe.set_params(&shifted)?;
        let up = probe.loss(example, loss)?;
        shifted[i] = base[i] - h;
        probe.set_params(&shifted)?;
        let down = probe.loss(example, loss)?;
        shifted[i] = base[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative error with an absolute floor: `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Floor used by [`gradcheck`] when comparing near-zero gradient entries.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Largest coordinate-wise relative error between backprop and central
/// differences at step `h`.
pub fn gradcheck(model: &NetworkModel, example: &Example, loss: LossSpec, h: f64) -> Result<f64> {
    let exact = backprop_gradient(model, example, loss)?.flatten();
    let numeric = finite_difference_gradient(model, example, loss, h)?;
    Ok(exact.iter().zip(&numeric).map(|(&a, &b)| relative_error(a, b, GRADCHECK_FLOOR)).fold(0.0, f64::max))
}

/// Mean gradient over `batch`, accumulated in ascending index order.
fn mean_gradient<M: Trainable>(model: &M, batch: &[&Example], loss: LossSpec) -> Result<Vec<f64>> {
    let grads: Vec<Vec<f64>> = if batch.len() >= PARALLEL_BATCH {
        batch.par_iter().map(|ex| model.gradient(ex, loss)).collect::<Result<_>>()?
    } else {
        batch.iter().map(|ex| model.gradient(ex, loss)).collect::<Result<_>>()?
    };
    let mut iter = grads.into_iter();
    let mut acc = iter.next().ok_or_else(|| Error::Domain("empty batch".into()))?;
    for g in iter {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    let n = batch.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

fn apply_update<M: Trainable>(model: &M, grad: &[f64], rate: f64) -> Result<M> {
    let mut params = model.params();
    for (w, g) in params.iter_mut().zip(grad) {
        *w -= rate * g;
    }
    let mut next = model.clone();
    next.set_params(&params)?;
    Ok(next)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Domain(format!("learning rate {rate} must be finite and >= 0")));
    }
    Ok(())
}

/// `w ← w − γ·(1/n)·Σᵢ ∇Q(zᵢ, w)` over the whole dataset.
pub fn gd_step<M: Trainable>(model: &M, dataset: &[Example], rate: f64, loss: LossSpec) -> Result<M> {
    check_rate(rate)?;
    if dataset.is_empty() {
        return Err(Error::Domain("gradient descent needs at least one example".into()));
    }
    let batch: Vec<&Example> = dataset.iter().collect();
    apply_update(model, &mean_gradient(model, &batch, loss)?, rate)
}

/// `w ← w − γ_t·∇Q(z_t, w)`.
pub fn sgd_step<M: Trainable>(model: &M, example: &Example, rate: f64, loss: LossSpec) -> Result<M> {
    check_rate(rate)?;
    apply_update(model, &model.gradient(example, loss)?, rate)
}

/// Update with the mean gradient of `batch`.
pub fn minibatch_step<M: Trainable>(model: &M, batch: &[&Example], rate: f64, loss: LossSpec) -> Result<M> {
    check_rate(rate)?;
    if batch.is_empty() {
        return Err(Error::Domain("minibatch must hold at least one example".into()));
    }
    apply_update(model, &mean_gradient(model, batch, loss)?, rate)
}

/// Mean per-example loss, summed in ascending order.
pub fn mean_loss<M: Trainable>(model: &M, dataset: &[Example], loss: LossSpec) -> Result<f64> {
    let mut total = 0.0;
    for ex in dataset {
        total += model.loss(ex, loss)?;
    }
    Ok(total / dataset.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Gd,
    Sgd,
    Minibatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearningRate {
    Constant {
        rate: f64,
    },
    /// `γ_t = γ₀ / (1 + λ·t)`, `t` counting updates from zero.
    InverseDecay {
        initial: f64,
        decay: f64,
    },
}

impl LearningRate {
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LearningRate::Constant { rate } => rate,
            LearningRate::InverseDecay { initial, decay } => initial / (1.0 + decay * step as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: LearningRate,
    /// Minibatch size; ignored by GD and SGD.
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
}

impl OptimizerConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let ok = match self.learning_rate {
            LearningRate::Constant { rate } => rate > 0.0 && rate.is_finite(),
            LearningRate::InverseDecay { initial, decay } => {
                initial > 0.0 && initial.is_finite() && decay >= 0.0 && decay.is_finite()
            }
        };
        if !ok {
            return Err(Error::Config(format!("learning rate must stay > 0: {:?}", self.learning_rate)));
        }
        if dataset_len == 0 {
            return Err(Error::Domain("training needs a non-empty dataset".into()));
        }
        if self.kind == OptimizerKind::Minibatch && !(1..=dataset_len).contains(&self.batch_size) {
            return Err(Error::Config(format!(
                "batch size {} must lie in 1..={dataset_len}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Mean dataset loss after each epoch.
    pub history: Vec<f64>,
}

/// Writes `epoch,mean_loss` rows, epochs counted from 1.
pub fn write_history_csv<W: Write>(history: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,mean_loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}

/// Runs `config.epochs` epochs. SGD and minibatch reshuffle the example order
/// each epoch (Fisher–Yates on substream `epoch` of `shuffle_seed`).
pub fn train<M: Trainable>(
    model: &M,
    dataset: &[Example],
    config: &OptimizerConfig,
    loss: LossSpec,
) -> Result<TrainOutcome<M>> {
    config.validate(dataset.len())?;
    let mut model = model.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.epochs {
        match config.kind {
            OptimizerKind::Gd => {
                model = gd_step(&model, dataset, config.learning_rate.at(step), loss)?;
                step += 1;
            }
            OptimizerKind::Sgd | OptimizerKind::Minibatch => {
                order.sort_unstable();
                order.shuffle(&mut substream(config.shuffle_seed, "epoch-shuffle", epoch as u64));
                let batch_size = if config.kind == OptimizerKind::Sgd { 1 } else { config.batch_size };
                for chunk in order.chunks(batch_size) {
                    let rate = config.learning_rate.at(step);
                    model = if config.kind == OptimizerKind::Sgd {
                        sgd_step(&model, &dataset[chunk[0]], rate, loss)?
                    } else {
                        // A batch is a set: sum it in dataset order.
                        let mut members = chunk.to_vec();
                        members.sort_unstable();
                        let batch: Vec<&Example> = members.iter().map(|&i| &dataset[i]).collect();
                        minibatch_step(&model, &batch, rate, loss)?
                    };
                    step += 1;
                }
            }
        }
        let l = mean_loss(&model, dataset, loss)?;
        if !l.is_finite() || l > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { epoch: epoch + 1, loss: l });
        }
        history.push(l);
    }
    Ok(TrainOutcome { model, history })
}
