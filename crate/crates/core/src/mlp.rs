//! Feedforward ReLU regressor trained with Adam on minibatch MSE, with
//! inverted dropout after every hidden layer and early stopping on a
//! chronological validation tail.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Scaler;
use crate::features::FeatureMatrix;

/// Smallest validation-loss decrease that resets the patience counter.
pub const MIN_DELTA: f64 = 1e-6;
pub const MIN_TRAIN_ROWS: usize = 10;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum MlpError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least {min} rows, got {got}")]
    TooFewRows { got: usize, min: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = MlpError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            dropout_rate: 0.2,
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 300,
            patience: 10,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MlpError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return bad("val_fraction must lie in (0, 0.5)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        Ok(())
    }
}

/// Affine layer `a W + b`, `W` stored as `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }

    fn he_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        Self { w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound)), b: Array1::zeros(fan_out) }
    }

    fn forward(&self, a: ArrayView2<f64>) -> Array2<f64> {
        a.dot(&self.w) + &self.b
    }
}

pub fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// Network evaluation mode. Train mode takes pre-drawn inverted-dropout
/// masks, one per hidden layer, entries `0` or `1 / (1 - p)`.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a [Array2<f64>]),
}

/// Hidden ReLU layers followed by one linear output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
}

struct Cache {
    /// Input to each layer (post-dropout for hidden outputs).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    output: Array1<f64>,
}

impl Network {
    fn shape(d_in: usize, hidden: &[usize]) -> Vec<(usize, usize)> {
        let mut dims = vec![d_in];
        dims.extend(hidden);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn zeros(d_in: usize, hidden: &[usize]) -> Self {
        Self { layers: Self::shape(d_in, hidden).into_iter().map(|(i, o)| Dense::zeros(i, o)).collect() }
    }

    pub fn he_uniform(d_in: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        Self { layers: Self::shape(d_in, hidden).into_iter().map(|(i, o)| Dense::he_uniform(i, o, rng)).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.w.ncols()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(MlpError::ShapeMismatch(format!("{} input columns, network expects {}", x.ncols(), self.input_dim())));
        }
        Ok(())
    }

    /// Draws one inverted-dropout mask per hidden layer for `rows` inputs.
    pub fn draw_masks(&self, rows: usize, rate: f64, rng: &mut impl Rng) -> Vec<Array2<f64>> {
        let keep = 1.0 / (1.0 - rate);
        self.hidden_sizes()
            .into_iter()
            .map(|h| Array2::from_shape_fn((rows, h), |_| if rng.random::<f64>() < rate { 0.0 } else { keep }))
            .collect()
    }

    fn run(&self, x: ArrayView2<f64>, mode: Mode<'_>) -> Result<Cache> {
        self.check_input(x)?;
        let hidden = self.layers.len() - 1;
        if let Mode::Train(masks) = mode {
            if masks.len() != hidden || masks.iter().zip(&self.layers).any(|(m, l)| m.dim() != (x.nrows(), l.w.ncols())) {
                return Err(MlpError::ShapeMismatch("dropout masks do not match the batch".into()));
            }
        }
        let mut inputs = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(hidden);
        for (l, layer) in self.layers[..hidden].iter().enumerate() {
            let z = layer.forward(inputs[l].view());
            let mut h = relu(&z);
            if let Mode::Train(masks) = mode {
                h *= &masks[l];
            }
            pre.push(z);
            inputs.push(h);
        }
        let out = self.layers[hidden].forward(inputs[hidden].view());
        Ok(Cache { inputs, pre, output: out.column(0).to_owned() })
    }

    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode<'_>) -> Result<Array1<f64>> {
        Ok(self.run(x, mode)?.output)
    }

    /// Mean squared error in eval mode.
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
        let out = self.forward(x, Mode::Eval)?;
        Ok(mse(out.view(), y))
    }

    /// Exact gradients of the batch-mean squared error. Returns the loss and
    /// one gradient per layer.
    pub fn gradients(&self, x: ArrayView2<f64>, y: ArrayView1<f64>, mode: Mode<'_>) -> Result<(f64, Vec<Dense>)> {
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(MlpError::ShapeMismatch(format!("{} rows vs {} targets", x.nrows(), y.len())));
        }
        let cache = self.run(x, mode)?;
        let batch = y.len() as f64;
        let err = &cache.output - &y;
        let loss = err.mapv(|e| e * e).sum() / batch;

        let hidden = self.layers.len() - 1;
        let mut grads = vec![Dense::zeros(0, 0); self.layers.len()];
        // dL/d(output pre-activation), n x 1
        let mut delta = (err * (2.0 / batch)).insert_axis(Axis(1));
        for l in (0..=hidden).rev() {
            let a = &cache.inputs[l];
            grads[l] = Dense { w: a.t().dot(&delta), b: delta.sum_axis(Axis(0)) };
            if l == 0 {
                break;
            }
            let mut d = delta.dot(&self.layers[l].w.t());
            if let Mode::Train(masks) = mode {
                d *= &masks[l - 1];
            }
            d.zip_mut_with(&cache.pre[l - 1], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            delta = d;
        }
        Ok((loss, grads))
    }
}

fn mse(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    (&a - &b).mapv(|e| e * e).mean().unwrap_or(0.0)
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    fn new(net: &Network, lr: f64) -> Self {
        let zeros: Vec<Dense> = net.layers.iter().map(|l| Dense::zeros(l.w.nrows(), l.w.ncols())).collect();
        Self { lr, t: 0, m: zeros.clone(), v: zeros }
    }

    fn step(&mut self, net: &mut Network, grads: &[Dense]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Per-epoch loss history; epochs are 1-based.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss over the epoch (dropout active).
    pub train_loss: Vec<f64>,
    /// Eval-mode loss on the validation tail.
    pub val_loss: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainReport {
    /// CSV with header `epoch,train_loss,val_loss`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["epoch", "train_loss", "val_loss"])?;
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            wtr.write_record([(i + 1).to_string(), t.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Trained network plus the scalers it was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub network: Network,
    pub x_scaler: Scaler,
    pub y_scaler: Scaler,
}

impl MlpModel {
    /// Eval-mode predictions in the target's original units.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.network.check_input(x)?;
        let z = self.x_scaler.transform_matrix(x);
        let out = self.network.forward(z.view(), Mode::Eval)?;
        Ok(out.mapv(|v| self.y_scaler.inverse_value(0, v)))
    }

    /// Architecture, row-major flattened weights and scaler statistics.
    pub fn to_json(&self) -> serde_json::Value {
        let layers: Vec<serde_json::Value> = self
            .network
            .layers
            .iter()
            .map(|l| {
                serde_json::json!({
                    "shape": [l.w.nrows(), l.w.ncols()],
                    "weights": l.w.iter().copied().collect::<Vec<f64>>(),
                    "bias": l.b.to_vec(),
                })
            })
            .collect();
        serde_json::json!({
            "architecture": {
                "input": self.network.input_dim(),
                "hidden": self.network.hidden_sizes(),
                "activation": "relu",
                "output": 1,
            },
            "layers": layers,
            "x_scaler": self.x_scaler,
            "y_scaler": self.y_scaler,
        })
    }
}

pub fn mlp_train(config: &MlpConfig, features: &FeatureMatrix) -> Result<(MlpModel, TrainReport)> {
    train_arrays(config, features.x.view(), features.y.view(), &features.feature_names)
}

/// Fits scalers on all given rows, holds out the chronological tail for
/// validation and trains until patience runs out. The returned network is
/// the one with the lowest validation loss.
pub fn train_arrays(config: &MlpConfig, x: ArrayView2<f64>, y: ArrayView1<f64>, names: &[String]) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    let n = x.nrows();
    if n != y.len() {
        return Err(MlpError::ShapeMismatch(format!("{n} rows vs {} targets", y.len())));
    }
    if n < MIN_TRAIN_ROWS {
        return Err(MlpError::TooFewRows { got: n, min: MIN_TRAIN_ROWS });
    }
    let x_scaler = Scaler::fit_matrix(x, names);
    let y_scaler = Scaler::fit_vector("target", y.as_slice().unwrap_or(&y.to_vec()));
    let xs = x_scaler.transform_matrix(x);
    let ys = y.mapv(|v| y_scaler.transform_value(0, v));

    let n_val = ((n as f64 * config.val_fraction).round() as usize).clamp(1, n - 1);
    let n_train = n - n_val;
    let (x_train, x_val) = xs.view().split_at(Axis(0), n_train);
    let (y_train, y_val) = ys.view().split_at(Axis(0), n_train);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Network::he_uniform(x.ncols(), &config.hidden, &mut rng);
    let mut adam = Adam::new(&net, config.learning_rate);
    let mut order: Vec<usize> = (0..n_train).collect();

    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, 0, net.clone());
    let mut reference = f64::INFINITY;
    let mut wait = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let xb = x_train.select(Axis(0), chunk);
            let yb = y_train.select(Axis(0), chunk);
            let masks = net.draw_masks(chunk.len(), config.dropout_rate, &mut rng);
            let (loss, grads) = net.gradients(xb.view(), yb.view(), Mode::Train(&masks))?;
            if !loss.is_finite() {
                return Err(MlpError::NonFiniteLoss { epoch });
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut net, &grads);
        }
        let val = net.loss(x_val, y_val)?;
        if !val.is_finite() || !net.is_finite() {
            return Err(MlpError::NonFiniteLoss { epoch });
        }
        report.train_loss.push(total / n_train as f64);
        report.val_loss.push(val);
        report.stopped_epoch = epoch;
        if val < best.0 {
            best = (val, epoch, net.clone());
        }
        if val < reference - MIN_DELTA {
            reference = val;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                break;
            }
        }
    }
    report.best_epoch = best.1;
    Ok((MlpModel { network: best.2, x_scaler, y_scaler }, report))
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between analytic gradients and central
/// differences with step `eps`, over every parameter (eval mode).
pub fn gradient_check(net: &Network, x: ArrayView2<f64>, y: ArrayView1<f64>, eps: f64) -> f64 {
    let (_, grads) = net.gradients(x, y, Mode::Eval).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for l in 0..net.layers.len() {
        for idx in 0..net.layers[l].w.len() {
            let (r, c) = (idx / net.layers[l].w.ncols(), idx % net.layers[l].w.ncols());
            let orig = probe.layers[l].w[[r, c]];
            probe.layers[l].w[[r, c]] = orig + eps;
            let up = probe.loss(x, y).unwrap();
            probe.layers[l].w[[r, c]] = orig - eps;
            let down = probe.loss(x, y).unwrap();
            probe.layers[l].w[[r, c]] = orig;
            worst = worst.max(rel_err(grads[l].w[[r, c]], (up - down) / (2.0 * eps)));
        }
        for j in 0..net.layers[l].b.len() {
            let orig = probe.layers[l].b[j];
            probe.layers[l].b[j] = orig + eps;
            let up = probe.loss(x, y).unwrap();
            probe.layers[l].b[j] = orig - eps;
            let down = probe.loss(x, y).unwrap();
            probe.layers[l].b[j] = orig;
            worst = worst.max(rel_err(grads[l].b[j], (up - down) / (2.0 * eps)));
        }
    }
    worst
}
