//! Single-hidden-layer perceptron regressor.
//!
//! Forward pass: affine → activation (→ inverted dropout during training)
//! → affine. Training is mini-batch backpropagation of the mean squared
//! loss with either Adam (decoupled weight decay) or SGD with momentum.
//! Dropout scales kept activations by 1/(1−rate) at training time so
//! inference is a plain affine/activation pass. Everything is
//! deterministic given the seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{check_dims, ModelError, Regressor};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// Slope 0.01 on the negative side.
    LeakyRelu,
}

impl Activation {
    fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v >= 0.0 {
                    v
                } else {
                    0.01 * v
                }
            }
        }
    }

    fn derivative(&self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.01
                }
            }
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Some(Activation::Relu),
            "leakyrelu" | "leaky_relu" => Some(Activation::LeakyRelu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerConfig {
    Adam { lr: f64, weight_decay: f64 },
    Sgd { lr: f64, momentum: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub activation: Activation,
    /// Dropout rate on the hidden layer, training only.
    pub dropout: f64,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 64,
            activation: Activation::Relu,
            dropout: 0.0,
            optimizer: OptimizerConfig::Adam { lr: 1e-3, weight_decay: 0.0 },
            epochs: 200,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpState {
    /// Hidden weights, `hidden × input`.
    pub w1: DMatrix<f64>,
    /// Hidden thresholds.
    pub b1: DVector<f64>,
    /// Output weights.
    pub w2: DVector<f64>,
    pub b2: f64,
    pub activation: Activation,
    pub dropout: f64,
    /// Full-train mean squared loss after each epoch.
    pub loss_history: Vec<f64>,
}

impl MlpState {
    pub fn hidden_width(&self) -> usize {
        self.w1.nrows()
    }

    fn zeroed_like(&self) -> Grads {
        Grads {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DVector::zeros(self.w2.len()),
            b2: 0.0,
        }
    }
}

impl Regressor for MlpState {
    fn n_features(&self) -> usize {
        self.w1.ncols()
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        Ok(forward(self, x, None).1)
    }
}

/// Training-time forward with an explicit dropout mask; `None` is the
/// inference path. Returns (hidden activations after dropout, output).
pub fn forward(state: &MlpState, x: &DMatrix<f64>, mask: Option<&DMatrix<f64>>) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.nrows();
    let h = state.w1.nrows();
    let mut pre = x * state.w1.transpose();
    for i in 0..n {
        for j in 0..h {
            pre[(i, j)] += state.b1[j];
        }
    }
    let mut act = pre.map(|v| state.activation.apply(v));
    if let Some(m) = mask {
        act.component_mul_assign(m);
    }
    let out = &act * &state.w2;
    let out = out.map(|v| v + state.b2);
    (act, out)
}

/// Checked inference/training forward pass over a feature matrix.
pub fn mlp_forward(
    state: &MlpState,
    x: &DMatrix<f64>,
    training: bool,
    rng: Option<&mut ChaCha12Rng>,
) -> Result<DVector<f64>, ModelError> {
    check_dims(state.w1.ncols(), x)?;
    if !training || state.dropout == 0.0 {
        return Ok(forward(state, x, None).1);
    }
    let rng = rng.ok_or_else(|| ModelError::InvalidParam("training forward needs an rng for dropout".into()))?;
    let mask = dropout_mask(x.nrows(), state.w1.nrows(), state.dropout, rng);
    Ok(forward(state, x, Some(&mask)).1)
}

fn dropout_mask(n: usize, h: usize, rate: f64, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let keep = 1.0 - rate;
    DMatrix::from_fn(n, h, |_, _| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

/// Mean squared loss over a batch and its exact parameter gradients, under
/// an optional fixed dropout mask.
pub fn loss_and_grad(
    state: &MlpState,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    mask: Option<&DMatrix<f64>>,
) -> (f64, Grads) {
    let n = x.nrows();
    let h = state.w1.nrows();
    let mut pre = x * state.w1.transpose();
    for i in 0..n {
        for j in 0..h {
            pre[(i, j)] += state.b1[j];
        }
    }
    let act_raw = pre.map(|v| state.activation.apply(v));
    let act = match mask {
        Some(m) => act_raw.component_mul(m),
        None => act_raw.clone(),
    };
    let pred = (&act * &state.w2).map(|v| v + state.b2);
    let err = &pred - y;
    let loss = err.norm_squared() / n as f64;

    let dpred = err.map(|v| 2.0 * v / n as f64);
    let dw2 = act.transpose() * &dpred;
    let db2 = dpred.iter().sum::<f64>();
    // dact[i,j] = dpred[i] * w2[j], then through mask and activation.
    let mut dpre = DMatrix::zeros(n, h);
    for i in 0..n {
        for j in 0..h {
            let mut g = dpred[i] * state.w2[j];
            if let Some(m) = mask {
                g *= m[(i, j)];
            }
            dpre[(i, j)] = g * state.activation.derivative(pre[(i, j)]);
        }
    }
    let dw1 = dpre.transpose() * x;
    let db1 = DVector::from_fn(h, |j, _| dpre.column(j).iter().sum::<f64>());
    (loss, Grads { w1: dw1, b1: db1, w2: dw2, b2: db2 })
}

struct AdamBuf {
    m: Grads,
    v: Grads,
    t: usize,
}

fn init_state(n_features: usize, config: &MlpConfig, rng: &mut ChaCha12Rng) -> MlpState {
    let h = config.hidden;
    let bound1 = (6.0 / (n_features + h) as f64).sqrt();
    let bound2 = (6.0 / (h + 1) as f64).sqrt();
    MlpState {
        w1: DMatrix::from_fn(h, n_features, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound1),
        b1: DVector::zeros(h),
        w2: DVector::from_fn(h, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound2),
        b2: 0.0,
        activation: config.activation,
        dropout: config.dropout,
        loss_history: Vec::new(),
    }
}

/// Train a fresh network. Batches reshuffle every epoch; the loss history
/// records the full-train inference loss per epoch.
pub fn mlp_train(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &MlpConfig,
    seed: u64,
) -> Result<MlpState, ModelError> {
    if x.nrows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if y.len() != x.nrows() {
        return Err(ModelError::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    if config.hidden == 0 || config.batch_size == 0 || config.epochs == 0 {
        return Err(ModelError::InvalidParam("hidden, batch_size and epochs must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(ModelError::InvalidParam(format!("dropout must be in [0, 1), got {}", config.dropout)));
    }
    let n = x.nrows();
    let mut state = init_state(x.ncols(), config, &mut derive_rng(seed, "mlp.init", 0));
    let mut adam = AdamBuf { m: state.zeroed_like(), v: state.zeroed_like(), t: 0 };
    let mut sgd_vel = state.zeroed_like();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = derive_rng(seed, "mlp.shuffle", epoch as u64);
        for i in (1..n).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut dropout_rng = derive_rng(seed, "mlp.dropout", epoch as u64);
        for batch in order.chunks(config.batch_size) {
            let xb = DMatrix::from_fn(batch.len(), x.ncols(), |i, j| x[(batch[i], j)]);
            let yb = DVector::from_fn(batch.len(), |i, _| y[batch[i]]);
            let mask = if config.dropout > 0.0 {
                Some(dropout_mask(batch.len(), config.hidden, config.dropout, &mut dropout_rng))
            } else {
                None
            };
            let (_, grads) = loss_and_grad(&state, &xb, &yb, mask.as_ref());
            apply_update(&mut state, &grads, config, &mut adam, &mut sgd_vel);
        }
        let (_, full_pred) = forward(&state, x, None);
        let loss = (&full_pred - y).norm_squared() / n as f64;
        if !loss.is_finite() {
            return Err(ModelError::Diverged { step: epoch });
        }
        state.loss_history.push(loss);
    }
    Ok(state)
}

fn apply_update(
    state: &mut MlpState,
    grads: &Grads,
    config: &MlpConfig,
    adam: &mut AdamBuf,
    sgd_vel: &mut Grads,
) {
    match config.optimizer {
        OptimizerConfig::Adam { lr, weight_decay } => {
            adam.t += 1;
            let (b1, b2, eps) = (0.9, 0.999, 1e-8);
            let t = adam.t as i32;
            let corr1 = 1.0 - (b1 as f64).powi(t);
            let corr2 = 1.0 - (b2 as f64).powi(t);
            let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, decay: bool| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / corr1;
                let vhat = *v / corr2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
                // Decoupled decay acts on weights, not thresholds.
                if decay {
                    *p -= lr * weight_decay * *p;
                }
            };
            for (i, g) in grads.w1.iter().enumerate() {
                step(&mut state.w1[i], *g, &mut adam.m.w1[i], &mut adam.v.w1[i], true);
            }
            for (i, g) in grads.b1.iter().enumerate() {
                step(&mut state.b1[i], *g, &mut adam.m.b1[i], &mut adam.v.b1[i], false);
            }
            for (i, g) in grads.w2.iter().enumerate() {
                step(&mut state.w2[i], *g, &mut adam.m.w2[i], &mut adam.v.w2[i], true);
            }
            step(&mut state.b2, grads.b2, &mut adam.m.b2, &mut adam.v.b2, false);
        }
        OptimizerConfig::Sgd { lr, momentum } => {
            let step = |p: &mut f64, g: f64, v: &mut f64| {
                *v = momentum * *v + g;
                *p -= lr * *v;
            };
            for (i, g) in grads.w1.iter().enumerate() {
                step(&mut state.w1[i], *g, &mut sgd_vel.w1[i]);
            }
            for (i, g) in grads.b1.iter().enumerate() {
                step(&mut state.b1[i], *g, &mut sgd_vel.b1[i]);
            }
            for (i, g) in grads.w2.iter().enumerate() {
                step(&mut state.w2[i], *g, &mut sgd_vel.w2[i]);
            }
            step(&mut state.b2, grads.b2, &mut sgd_vel.b2);
        }
    }
}
