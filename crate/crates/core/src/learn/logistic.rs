//! Penalized logistic regression trained by accelerated proximal gradient
//! descent.
//!
//! The objective is the mean negative log-likelihood plus a penalty scaled
//! by the inverse-strength convention: larger `strength` means a weaker
//! penalty. The intercept is never penalized. Features are standardized
//! internally; the stopping rule is a 1e-6 bound on the norm of the
//! minimal-norm (sub)gradient at the current iterate.

use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::features::FEATURE_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

impl Penalty {
    pub fn as_str(self) -> &'static str {
        match self {
            Penalty::L1 => "l1",
            Penalty::L2 => "l2",
        }
    }
}

pub(crate) const GRAD_TOL: f64 = 1e-6;
const MAX_ITERS: usize = 20_000;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log(1 + exp(z)).
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean negative log-likelihood plus an L2 term `lambda/2 * ||w||^2 / n`;
/// the intercept is excluded from the penalty. Pass `lambda = 0` for the
/// bare data term.
pub fn logistic_objective(x: &[Vec<f64>], y: &[u8], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = x.len() as f64;
    let mut nll = 0.0;
    for (row, &yi) in x.iter().zip(y) {
        let z = dot(w, row) + b;
        // log(1 + e^z) - y z, stable in both tails.
        nll += log1p_exp(z) - f64::from(yi) * z;
    }
    let ridge: f64 = w.iter().map(|v| v * v).sum::<f64>() * lambda / (2.0 * n);
    nll / n + ridge
}

/// Gradient of [`logistic_objective`] with respect to (w, b). Returns the
/// weight gradient and the intercept derivative.
pub fn logistic_gradient(
    x: &[Vec<f64>],
    y: &[u8],
    w: &[f64],
    b: f64,
    lambda: f64,
) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &yi) in x.iter().zip(y) {
        let err = sigmoid(dot(w, row) + b) - f64::from(yi);
        for (g, v) in gw.iter_mut().zip(row) {
            *g += err * v;
        }
        gb += err;
    }
    for (g, wv) in gw.iter_mut().zip(w) {
        *g = *g / n + lambda * wv / n;
    }
    (gw, gb / n)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub penalty: Penalty,
    pub strength: f64,
    /// Standardization applied to inputs before the linear map.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Optimality measure at the final iterate (norm of the minimal-norm
    /// subgradient in standardized space).
    pub final_grad_norm: f64,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn fit(
        x: &[[f64; FEATURE_COUNT]],
        y: &[u8],
        strength: f64,
        penalty: Penalty,
    ) -> Result<LogisticModel, LearnError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(LearnError::EmptyTrainingSet);
        }
        if !(strength.is_finite() && strength > 0.0) {
            return Err(LearnError::BadParam("strength must be positive".into()));
        }
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == y.len() {
            return Err(LearnError::SingleClass);
        }
        let (xs, mean, scale) = standardize(x)?;
        let n = xs.len() as f64;
        // Inverse-strength convention: effective lambda = 1 / strength.
        let lambda = 1.0 / strength;
        let (l2, l1) = match penalty {
            Penalty::L2 => (lambda, 0.0),
            Penalty::L1 => (0.0, lambda / n),
        };

        // Lipschitz bound for the smooth part: the logistic Hessian is at
        // most X'X / (4n), so max row norm (intercept included) over 4
        // suffices; the ridge term adds lambda / n.
        let max_sq = xs
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0)
            .fold(0.0, f64::max);
        let lip = max_sq / 4.0 + l2 / n;
        let step = 1.0 / lip;

        let d = FEATURE_COUNT;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut w_prev = w.clone();
        let mut b_prev = b;
        let mut t = 1.0f64;
        let mut iterations = 0;
        let mut final_norm = f64::INFINITY;

        for iter in 0..MAX_ITERS {
            iterations = iter + 1;
            // Momentum point.
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let gamma = (t - 1.0) / t_next;
            let v: Vec<f64> = w
                .iter()
                .zip(&w_prev)
                .map(|(c, p)| c + gamma * (c - p))
                .collect();
            let vb = b + gamma * (b - b_prev);

            let (gw, gb) = logistic_gradient(&xs, y, &v, vb, l2);
            w_prev.copy_from_slice(&w);
            b_prev = b;
            for i in 0..d {
                let moved = v[i] - step * gw[i];
                w[i] = soft_threshold(moved, step * l1);
            }
            b = vb - step * gb;
            t = t_next;

            // Optimality check at the new iterate.
            let (gw_c, gb_c) = logistic_gradient(&xs, y, &w, b, l2);
            let norm = optimality_norm(&w, &gw_c, gb_c, l1);
            final_norm = norm;
            if norm < GRAD_TOL {
                break;
            }
        }

        Ok(LogisticModel {
            weights: w,
            intercept: b,
            penalty,
            strength,
            mean,
            scale,
            final_grad_norm: final_norm,
            iterations,
        })
    }

    pub fn score_row(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut z = self.intercept;
        for (((w, v), m), s) in self.weights.iter().zip(x).zip(&self.mean).zip(&self.scale) {
            z += w * (v - m) / s;
        }
        sigmoid(z)
    }
}

/// Norm of the minimal-norm subgradient: for L2 this is the plain gradient
/// norm, for L1 each zero coordinate contributes max(|g| - l1, 0).
fn optimality_norm(w: &[f64], gw: &[f64], gb: f64, l1: f64) -> f64 {
    let mut acc = gb * gb;
    for (wi, gi) in w.iter().zip(gw) {
        let r = if l1 == 0.0 {
            *gi
        } else if *wi > 0.0 {
            gi + l1
        } else if *wi < 0.0 {
            gi - l1
        } else {
            (gi.abs() - l1).max(0.0)
        };
        acc += r * r;
    }
    acc.sqrt()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if t == 0.0 {
        v
    } else if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Standardized rows plus the per-column mean and scale that produced
/// them.
pub(crate) type Standardized = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

/// Column standardization; constant columns get scale 1 so they pass
/// through centered.
pub(crate) fn standardize(x: &[[f64; FEATURE_COUNT]]) -> Result<Standardized, LearnError> {
    let n = x.len() as f64;
    let mut mean = vec![0.0; FEATURE_COUNT];
    for row in x {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NonFinite);
        }
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = [0.0; FEATURE_COUNT];
    for row in x {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = if x.len() > 1 {
                (s / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            if sd < 1e-12 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    let xs = x
        .iter()
        .map(|row| {
            (0..FEATURE_COUNT)
                .map(|i| (row[i] - mean[i]) / scale[i])
                .collect()
        })
        .collect();
    Ok((xs, mean, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn linear_data(n: usize, sep: f64, seed: u64) -> (Vec<[f64; FEATURE_COUNT]>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.random_bool(0.5) as u8;
            let shift = if label == 1 { sep } else { -sep };
            let mut row = [0.0; FEATURE_COUNT];
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            row[2] += shift;
            row[9] -= shift / 2.0;
            x.push(row);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 60;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        for _ in 0..20 {
            let w: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
            let b: f64 = rng.random_range(-1.0..1.0);
            let lambda = rng.random_range(0.0..2.0);
            let (gw, gb) = logistic_gradient(&x, &y, &w, b, lambda);
            let eps = 1e-6;
            for i in 0..5 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += eps;
                wm[i] -= eps;
                let fd = (logistic_objective(&x, &y, &wp, b, lambda)
                    - logistic_objective(&x, &y, &wm, b, lambda))
                    / (2.0 * eps);
                let rel = (gw[i] - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-4, "weight {i}: analytic {} vs fd {}", gw[i], fd);
            }
            let fd_b = (logistic_objective(&x, &y, &w, b + eps, lambda)
                - logistic_objective(&x, &y, &w, b - eps, lambda))
                / (2.0 * eps);
            assert!((gb - fd_b).abs() / fd_b.abs().max(1e-8) < 1e-4);
        }
    }

    #[test]
    fn fit_reaches_gradient_tolerance() {
        let (x, y) = linear_data(300, 1.0, 21);
        let model = LogisticModel::fit(&x, &y, 1.0, Penalty::L2).unwrap();
        assert!(
            model.final_grad_norm < 1e-5,
            "converged norm {}",
            model.final_grad_norm
        );
        assert!(model.iterations < MAX_ITERS);
    }

    #[test]
    fn separable_data_classifies_perfectly() {
        let (x, y) = linear_data(400, 4.0, 23);
        let model = LogisticModel::fit(&x, &y, 10.0, Penalty::L2).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(row, &label)| (model.score_row(row) >= 0.5) == (label == 1))
            .count();
        assert_eq!(correct, x.len());
    }

    #[test]
    fn l1_sparsifies_noise_features() {
        let (x, y) = linear_data(500, 2.0, 25);
        let strong = LogisticModel::fit(&x, &y, 0.01, Penalty::L1).unwrap();
        let zeros = strong.weights.iter().filter(|w| **w == 0.0).count();
        assert!(
            zeros >= FEATURE_COUNT - 4,
            "strong L1 should zero most noise weights, kept {:?}",
            strong.weights
        );
        // The informative feature survives.
        assert!(strong.weights[2] != 0.0 || strong.weights[9] != 0.0);
    }

    #[test]
    fn stronger_penalty_shrinks_weights() {
        let (x, y) = linear_data(300, 1.5, 27);
        let tight = LogisticModel::fit(&x, &y, 0.01, Penalty::L2).unwrap();
        let loose = LogisticModel::fit(&x, &y, 10.0, Penalty::L2).unwrap();
        let norm = |m: &LogisticModel| m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm(&tight) < norm(&loose));
    }

    #[test]
    fn scores_are_probabilities() {
        let (x, y) = linear_data(200, 0.5, 29);
        let model = LogisticModel::fit(&x, &y, 1.0, Penalty::L1).unwrap();
        for row in &x {
            let s = model.score_row(row);
            assert!((0.0..=1.0).contains(&s) && s.is_finite());
        }
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = linear_data(50, 1.0, 31);
        let y = vec![1u8; 50];
        assert!(matches!(
            LogisticModel::fit(&x, &y, 1.0, Penalty::L2),
            Err(LearnError::SingleClass)
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = linear_data(250, 1.0, 33);
        let a = LogisticModel::fit(&x, &y, 0.1, Penalty::L1).unwrap();
        let b = LogisticModel::fit(&x, &y, 0.1, Penalty::L1).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.intercept.to_bits(), b.intercept.to_bits());
    }
}
