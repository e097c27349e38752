//! Single-hidden-layer perceptron trained with mini-batch gradient
//! descent.
//!
//! Architecture is fixed at one hidden layer of 64 units with a sigmoid
//! output; activation, L2 strength, batch size and learning rate come from
//! the hyperparameter grid. Weights start from a seeded Glorot draw and
//! every epoch reshuffles rows from an epoch-indexed stream, so training
//! is reproducible. Training stops at the epoch cap or once the full-set
//! loss plateaus.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::standardize;
use super::LearnError;
use crate::derive_seed;
use crate::features::FEATURE_COUNT;

pub const HIDDEN: usize = 64;
/// Hard epoch ceiling; the plateau rule below usually stops training
/// well before this on separable data.
const MAX_EPOCHS: usize = 150;
/// Stop once the relative loss improvement stays below this for
/// `PATIENCE` consecutive epochs.
const PLATEAU: f64 = 1e-4;
const PATIENCE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    w1: Vec<f64>, // HIDDEN x FEATURE_COUNT, row-major
    b1: Vec<f64>,
    w2: Vec<f64>, // HIDDEN
    b2: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
    pub activation: Activation,
    pub alpha: f64,
    pub batch: usize,
    pub rate: f64,
    pub epochs_run: usize,
    /// Full-set objective at initialization and after each epoch.
    pub epoch_loss: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpModel {
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        x: &[[f64; FEATURE_COUNT]],
        y: &[u8],
        activation: Activation,
        alpha: f64,
        batch: usize,
        rate: f64,
        seed: u64,
    ) -> Result<MlpModel, LearnError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(LearnError::EmptyTrainingSet);
        }
        if batch == 0 || !(rate.is_finite() && rate > 0.0) || !(alpha.is_finite() && alpha >= 0.0) {
            return Err(LearnError::BadParam(
                "mlp needs positive batch and rate, non-negative alpha".into(),
            ));
        }
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == y.len() {
            return Err(LearnError::SingleClass);
        }
        let (xs, mean, scale) = standardize(x)?;
        let n = xs.len();

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
        let glorot1 = (6.0 / (FEATURE_COUNT + HIDDEN) as f64).sqrt();
        let glorot2 = (6.0 / (HIDDEN + 1) as f64).sqrt();
        let mut w1: Vec<f64> = (0..HIDDEN * FEATURE_COUNT)
            .map(|_| rng.random_range(-glorot1..glorot1))
            .collect();
        let mut b1 = vec![0.0; HIDDEN];
        let mut w2: Vec<f64> = (0..HIDDEN)
            .map(|_| rng.random_range(-glorot2..glorot2))
            .collect();
        let mut b2 = 0.0;

        let objective = |w1: &[f64], b1: &[f64], w2: &[f64], b2: f64| -> f64 {
            let mut loss = 0.0;
            let mut hidden = [0.0; HIDDEN];
            for (row, &yi) in xs.iter().zip(y) {
                forward(w1, b1, row, activation, &mut hidden);
                let z: f64 = w2
                    .iter()
                    .zip(hidden.iter())
                    .map(|(w, a)| w * a)
                    .sum::<f64>()
                    + b2;
                let soft = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                loss += soft - f64::from(yi) * z;
            }
            let sq: f64 =
                w1.iter().map(|v| v * v).sum::<f64>() + w2.iter().map(|v| v * v).sum::<f64>();
            loss / n as f64 + alpha * sq / (2.0 * n as f64)
        };

        let mut epoch_loss = vec![objective(&w1, &b1, &w2, b2)];
        let mut order: Vec<usize> = (0..n).collect();
        let mut gw1 = vec![0.0; HIDDEN * FEATURE_COUNT];
        let mut gb1 = vec![0.0; HIDDEN];
        let mut gw2 = vec![0.0; HIDDEN];
        let mut hidden = [0.0; HIDDEN];
        let mut plateau = 0;
        let mut epochs_run = 0;

        for epoch in 0..MAX_EPOCHS {
            epochs_run = epoch + 1;
            let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + epoch as u64));
            for i in (1..n).rev() {
                let j = shuffle_rng.random_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(batch) {
                gw1.fill(0.0);
                gb1.fill(0.0);
                gw2.fill(0.0);
                let mut gb2 = 0.0;
                for &idx in chunk {
                    let row = &xs[idx];
                    forward(&w1, &b1, row, activation, &mut hidden);
                    let z: f64 = w2
                        .iter()
                        .zip(hidden.iter())
                        .map(|(w, a)| w * a)
                        .sum::<f64>()
                        + b2;
                    let err = sigmoid(z) - f64::from(y[idx]);
                    gb2 += err;
                    for k in 0..HIDDEN {
                        gw2[k] += err * hidden[k];
                        let back = err * w2[k] * activation.derivative(hidden[k]);
                        if back != 0.0 {
                            gb1[k] += back;
                            let wrow = &mut gw1[k * FEATURE_COUNT..(k + 1) * FEATURE_COUNT];
                            for (g, v) in wrow.iter_mut().zip(row) {
                                *g += back * v;
                            }
                        }
                    }
                }
                let m = chunk.len() as f64;
                let reg = alpha / n as f64;
                for (w, g) in w1.iter_mut().zip(&gw1) {
                    *w -= rate * (g / m + reg * *w);
                }
                for (b, g) in b1.iter_mut().zip(&gb1) {
                    *b -= rate * (g / m);
                }
                for (w, g) in w2.iter_mut().zip(&gw2) {
                    *w -= rate * (g / m + reg * *w);
                }
                b2 -= rate * (gb2 / m);
            }
            let loss = objective(&w1, &b1, &w2, b2);
            let prev = *epoch_loss.last().unwrap();
            epoch_loss.push(loss);
            if !loss.is_finite() {
                return Err(LearnError::Diverged);
            }
            if (prev - loss) / prev.abs().max(1e-12) < PLATEAU {
                plateau += 1;
                if plateau >= PATIENCE {
                    break;
                }
            } else {
                plateau = 0;
            }
        }

        Ok(MlpModel {
            w1,
            b1,
            w2,
            b2,
            mean,
            scale,
            activation,
            alpha,
            batch,
            rate,
            epochs_run,
            epoch_loss,
        })
    }

    pub fn score_row(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let row: Vec<f64> = (0..FEATURE_COUNT)
            .map(|i| (x[i] - self.mean[i]) / self.scale[i])
            .collect();
        let mut hidden = [0.0; HIDDEN];
        forward(&self.w1, &self.b1, &row, self.activation, &mut hidden);
        let z: f64 = self
            .w2
            .iter()
            .zip(hidden.iter())
            .map(|(w, a)| w * a)
            .sum::<f64>()
            + self.b2;
        sigmoid(z)
    }
}

fn forward(w1: &[f64], b1: &[f64], row: &[f64], activation: Activation, out: &mut [f64; HIDDEN]) {
    for k in 0..HIDDEN {
        let wrow = &w1[k * FEATURE_COUNT..(k + 1) * FEATURE_COUNT];
        let z: f64 = wrow.iter().zip(row).map(|(w, v)| w * v).sum::<f64>() + b1[k];
        out[k] = activation.apply(z);
    }
}
