use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{logistic, Network, OutputActivation};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam()
    }
}

/// Per-sample loss, always differentiated with respect to the raw output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Squared error on the activated output.
    SquaredError,
    /// Cross-entropy on a logistic head (soft targets allowed).
    LogLoss,
    /// Squared error on the pre-activation output, e.g. logit matching.
    RawSquaredError,
}

impl Loss {
    pub fn default_for(output: OutputActivation) -> Self {
        match output {
            OutputActivation::Identity => Loss::SquaredError,
            OutputActivation::Logistic => Loss::LogLoss,
        }
    }

    /// Loss value and derivative with respect to the raw output `z`.
    #[inline]
    fn value_and_grad(self, output: OutputActivation, z: f64, y: f64) -> (f64, f64) {
        match self {
            Loss::RawSquaredError => {
                let d = z - y;
                (d * d, 2.0 * d)
            }
            Loss::SquaredError => match output {
                OutputActivation::Identity => {
                    let d = z - y;
                    (d * d, 2.0 * d)
                }
                OutputActivation::Logistic => {
                    let p = logistic(z);
                    let d = p - y;
                    (d * d, 2.0 * d * p * (1.0 - p))
                }
            },
            Loss::LogLoss => {
                // softplus(z) - y z, stable for large |z|
                let softplus = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                (softplus - y * z, logistic(z) - y)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layer_sizes: Vec<usize>,
    pub output: OutputActivation,
    pub l1_coeff: f64,
    pub l2_coeff: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub optimizer: Optimizer,
    pub loss: Option<Loss>,
}

impl NetworkConfig {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        NetworkConfig {
            layer_sizes,
            output: OutputActivation::Identity,
            l1_coeff: 0.0,
            l2_coeff: 0.0,
            learning_rate: 1e-3,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            batch_size: None,
            optimizer: Optimizer::default(),
            loss: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        super::network::validate_layer_sizes(&self.layer_sizes)?;
        if !(self.l1_coeff >= 0.0 && self.l2_coeff >= 0.0) {
            return Err(Error::config("regularisation coefficients must be non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::config("max_epochs and patience must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }

    fn loss(&self) -> Loss {
        self.loss.unwrap_or_else(|| Loss::default_for(self.output))
    }
}

/// Inputs, targets and per-sample loss weights. `offset` is added to the
/// network's raw output before the loss, which lets a model be fitted on top
/// of a frozen base prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedData {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub w: Array1<f64>,
    pub offset: Option<Array1<f64>>,
}

impl WeightedData {
    pub fn new(x: Array2<f64>, y: Array1<f64>, w: Array1<f64>) -> Result<Self> {
        let d = WeightedData {
            x,
            y,
            w,
            offset: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn unweighted(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(x, y, Array1::ones(n))
    }

    pub fn with_offset(mut self, offset: Array1<f64>) -> Result<Self> {
        self.offset = Some(offset);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.y.len() != n || self.w.len() != n || self.offset.as_ref().is_some_and(|o| o.len() != n)
        {
            return Err(Error::config("data rows, targets and weights differ in length"));
        }
        if self.w.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::config("sample weights must be finite and non-negative"));
        }
        Ok(())
    }

    fn select(&self, rows: &[usize]) -> WeightedData {
        WeightedData {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            w: self.w.select(Axis(0), rows),
            offset: self.offset.as_ref().map(|o| o.select(Axis(0), rows)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Forward pass that keeps every layer's input and pre-activation.
fn forward_cached(net: &Network, x: ArrayView2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let last = net.layers.len() - 1;
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut a = x.to_owned();
    for (i, layer) in net.layers.iter().enumerate() {
        let mut z = a.dot(&layer.weights.t());
        z += &layer.bias;
        let next = if i < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
        inputs.push(a);
        pre.push(z);
        a = next;
    }
    (inputs, pre)
}

/// Weighted-mean data loss and its gradient over `data`. Weights are
/// normalised by their sum, so an integer weight `k` matches `k` duplicates.
pub fn batch_gradient(net: &Network, data: &WeightedData, loss: Loss) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(net);
    let total_w: f64 = data.w.sum();
    if data.is_empty() || total_w <= 0.0 {
        return (0.0, grads);
    }
    let (inputs, pre) = forward_cached(net, data.x.view());
    let raw = pre.last().unwrap().column(0);
    let mut delta = Array2::<f64>::zeros((data.len(), 1));
    let mut value = 0.0;
    for i in 0..data.len() {
        let z = raw[i] + data.offset.as_ref().map_or(0.0, |o| o[i]);
        let (l, g) = loss.value_and_grad(net.output, z, data.y[i]);
        let wi = data.w[i] / total_w;
        value += wi * l;
        delta[[i, 0]] = wi * g;
    }
    for k in (0..net.layers.len()).rev() {
        grads.weights[k] = delta.t().dot(&inputs[k]);
        grads.biases[k] = delta.sum_axis(Axis(0));
        if k > 0 {
            let mut back = delta.dot(&net.layers[k].weights);
            ndarray::Zip::from(&mut back)
                .and(&pre[k - 1])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
            delta = back;
        }
    }
    (value, grads)
}

/// Weighted-mean data loss without regularisation.
pub fn weighted_loss(net: &Network, data: &WeightedData, loss: Loss) -> f64 {
    let total_w: f64 = data.w.sum();
    if data.is_empty() || total_w <= 0.0 {
        return 0.0;
    }
    let raw = net.forward_raw(data.x.view()).expect("shape checked by caller");
    let mut value = 0.0;
    for i in 0..data.len() {
        let z = raw[i] + data.offset.as_ref().map_or(0.0, |o| o[i]);
        value += data.w[i] * loss.value_and_grad(net.output, z, data.y[i]).0;
    }
    value / total_w
}

struct OptimizerState {
    kind: Optimizer,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl OptimizerState {
    fn new(kind: Optimizer, net: &Network) -> Self {
        OptimizerState {
            kind,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    fn apply(&mut self, net: &mut Network, grads: &Gradients, lr: f64) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (layer, (gw, gb)) in net.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
                    layer.weights.scaled_add(-lr, gw);
                    layer.bias.scaled_add(-lr, gb);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for (k, layer) in net.layers.iter_mut().enumerate() {
                    ndarray::Zip::from(&mut layer.weights)
                        .and(&grads.weights[k])
                        .and(&mut self.m.weights[k])
                        .and(&mut self.v.weights[k])
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    ndarray::Zip::from(&mut layer.bias)
                        .and(&grads.biases[k])
                        .and(&mut self.m.biases[k])
                        .and(&mut self.v.biases[k])
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
        }
    }
}

fn add_l2(net: &Network, grads: &mut Gradients, l2: f64) {
    if l2 > 0.0 {
        for (g, layer) in grads.weights.iter_mut().zip(&net.layers) {
            g.scaled_add(2.0 * l2, &layer.weights);
        }
    }
}

fn soft_threshold(w: f64, t: f64) -> f64 {
    w.signum() * (w.abs() - t).max(0.0)
}

impl OptimizerState {
    /// Proximal step for `l1 * sum |W|` on every weight matrix, taken in the
    /// same metric as the last update: a uniform threshold `lr * l1` for
    /// SGD, and `lr * l1` divided by Adam's per-parameter scale for Adam.
    fn prox_l1(&self, net: &mut Network, lr: f64, l1: f64) {
        if !(l1 > 0.0) {
            return;
        }
        match self.kind {
            Optimizer::Sgd => {
                for layer in &mut net.layers {
                    layer.weights.mapv_inplace(|w| soft_threshold(w, lr * l1));
                }
            }
            Optimizer::Adam { beta2, eps, .. } => {
                let c2 = 1.0 - beta2.powi(self.step);
                for (k, layer) in net.layers.iter_mut().enumerate() {
                    ndarray::Zip::from(&mut layer.weights)
                        .and(&self.v.weights[k])
                        .for_each(|w, &v| *w = soft_threshold(*w, lr * l1 / ((v / c2).sqrt() + eps)));
                }
            }
        }
    }
}

fn batches(n: usize, batch_size: Option<usize>, order: &[usize]) -> Vec<Vec<usize>> {
    match batch_size {
        Some(b) if b < n => order.chunks(b).map(|c| c.to_vec()).collect(),
        _ => vec![order.to_vec()],
    }
}

/// Trains a fresh network with early stopping on the validation loss and
/// returns the best-validation parameters.
pub fn train(
    config: &NetworkConfig,
    train_data: &WeightedData,
    val_data: &WeightedData,
) -> Result<(Network, TrainReport)> {
    config.validate()?;
    let net = Network::init(&config.layer_sizes, config.output, config.seed)?;
    train_from(net, config, train_data, val_data)
}

/// Same as [`train`] but continues from an existing network.
pub fn train_from(
    mut net: Network,
    config: &NetworkConfig,
    train_data: &WeightedData,
    val_data: &WeightedData,
) -> Result<(Network, TrainReport)> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    if val_data.is_empty() {
        return Err(Error::Precondition("validation set is empty".into()));
    }
    for d in [train_data, val_data] {
        if d.x.ncols() != net.input_size() {
            return Err(Error::InputShape {
                expected: net.input_size(),
                got: d.x.ncols(),
            });
        }
    }
    let loss = config.loss();
    let mut rng = rng_from_seed(derive_seed(config.seed, "shuffle", 0));
    let mut opt = OptimizerState::new(config.optimizer, &net);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let full_batch = config.batch_size.is_none_or(|b| b >= train_data.len());

    let mut best_val = weighted_loss(&net, val_data, loss);
    if !best_val.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut best = net.clone();
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        if !full_batch {
            order.shuffle(&mut rng);
        }
        for rows in batches(train_data.len(), config.batch_size, &order) {
            let (value, mut grads) = if full_batch {
                batch_gradient(&net, train_data, loss)
            } else {
                batch_gradient(&net, &train_data.select(&rows), loss)
            };
            if !value.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            add_l2(&net, &mut grads, config.l2_coeff);
            opt.apply(&mut net, &grads, config.learning_rate);
            opt.prox_l1(&mut net, config.learning_rate, config.l1_coeff);
        }
        let val = weighted_loss(&net, val_data, loss);
        if !val.is_finite() || !net.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if val < best_val {
            best_val = val;
            best.clone_from(&net);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let final_train_loss = weighted_loss(&best, train_data, loss);
    Ok((
        best,
        TrainReport {
            final_train_loss,
            final_val_loss: best_val,
            epochs_run,
            stopped_early,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    /// Number of optimiser steps (mini-batches), not epochs.
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub loss: Option<Loss>,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            steps: 200,
            learning_rate: 1e-3,
            batch_size: Some(64),
            seed: 0,
            optimizer: Optimizer::default(),
            loss: None,
        }
    }
}

/// Continues training from the current parameters; never re-initialises.
pub fn fine_tune(net: &Network, data: &WeightedData, cfg: &FineTuneConfig) -> Result<Network> {
    if data.x.ncols() != net.input_size() {
        return Err(Error::InputShape {
            expected: net.input_size(),
            got: data.x.ncols(),
        });
    }
    let mut tuned = net.clone();
    if cfg.steps == 0 {
        return Ok(tuned);
    }
    if data.is_empty() {
        return Err(Error::Precondition("fine-tuning set is empty".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::config("learning rate must be positive"));
    }
    let loss = cfg.loss.unwrap_or_else(|| Loss::default_for(net.output));
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "fine_tune", 0));
    let mut opt = OptimizerState::new(cfg.optimizer, &tuned);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let full_batch = cfg.batch_size.is_none_or(|b| b >= data.len());
    let mut queue: Vec<Vec<usize>> = Vec::new();
    for step in 1..=cfg.steps {
        let (value, grads) = if full_batch {
            batch_gradient(&tuned, data, loss)
        } else {
            if queue.is_empty() {
                order.shuffle(&mut rng);
                queue = batches(data.len(), cfg.batch_size, &order);
                queue.reverse();
            }
            let rows = queue.pop().unwrap();
            batch_gradient(&tuned, &data.select(&rows), loss)
        };
        if !value.is_finite() {
            return Err(Error::FineTuneDivergence { step });
        }
        opt.apply(&mut tuned, &grads, cfg.learning_rate);
        if !tuned.is_finite() {
            return Err(Error::FineTuneDivergence { step });
        }
    }
    Ok(tuned)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientCheck {
    MaxRelativeError(f64),
    /// A hidden pre-activation sits within the finite-difference reach of
    /// the ReLU kink, so the comparison is not meaningful.
    NearKink { layer: usize, unit: usize },
}

const FD_STEP: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-3;
const REL_FLOOR: f64 = 1e-4;

/// Parameter `idx` in [`Gradients::flatten`] order.
fn param_mut(net: &mut Network, mut idx: usize) -> &mut f64 {
    for layer in &mut net.layers {
        let nw = layer.weights.len();
        if idx < nw {
            let cols = layer.weights.ncols();
            return &mut layer.weights[[idx / cols, idx % cols]];
        }
        idx -= nw;
        if idx < layer.bias.len() {
            return &mut layer.bias[idx];
        }
        idx -= layer.bias.len();
    }
    panic!("parameter index out of range")
}

/// Compares backprop against central differences for one sample's loss.
pub fn gradient_check(net: &Network, x: &[f64], y: f64, loss: Loss) -> Result<GradientCheck> {
    let xs = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
    if x.len() != net.input_size() {
        return Err(Error::InputShape {
            expected: net.input_size(),
            got: x.len(),
        });
    }
    let (_, pre) = forward_cached(net, xs.view());
    for (layer, z) in pre.iter().take(pre.len() - 1).enumerate() {
        if let Some(unit) = z.iter().position(|v| v.abs() < KINK_MARGIN) {
            return Ok(GradientCheck::NearKink { layer, unit });
        }
    }
    let data = WeightedData::unweighted(xs, Array1::from(vec![y]))?;
    let analytic = batch_gradient(net, &data, loss).1.flatten();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (idx, &a) in analytic.iter().enumerate() {
        let orig = *param_mut(&mut probe, idx);
        *param_mut(&mut probe, idx) = orig + FD_STEP;
        let up = weighted_loss(&probe, &data, loss);
        *param_mut(&mut probe, idx) = orig - FD_STEP;
        let down = weighted_loss(&probe, &data, loss);
        *param_mut(&mut probe, idx) = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(GradientCheck::MaxRelativeError(worst))
}
