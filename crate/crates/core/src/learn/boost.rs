//! Gradient-boosted trees with logistic loss.
//!
//! The ensemble starts from the base-rate log-odds and adds shrunken
//! regression trees fit to the current residuals, with Newton leaf values.
//! Each stage optionally fits on a row subsample drawn without
//! replacement from a stage-indexed RNG stream, so fits are reproducible.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::tree::{grow_sse, Binning, SseParams, Tree};
use super::LearnError;
use crate::derive_seed;
use crate::features::FEATURE_COUNT;

const MIN_LEAF: usize = 5;

#[derive(Debug, Clone)]
pub struct BoostModel {
    init: f64,
    trees: Vec<Tree>,
    pub rate: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub subsample: f64,
    /// Training logistic loss after the initial model and after each stage.
    pub staged_loss: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mean_logistic_loss(f: &[f64], y: &[u8]) -> f64 {
    let n = f.len() as f64;
    f.iter()
        .zip(y)
        .map(|(&z, &yi)| {
            let soft = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            soft - f64::from(yi) * z
        })
        .sum::<f64>()
        / n
}

impl BoostModel {
    pub fn fit(
        x: &[[f64; FEATURE_COUNT]],
        y: &[u8],
        rate: f64,
        max_depth: usize,
        n_trees: usize,
        subsample: f64,
        seed: u64,
    ) -> Result<BoostModel, LearnError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(LearnError::EmptyTrainingSet);
        }
        if !(rate.is_finite() && rate > 0.0) || n_trees == 0 || max_depth == 0 {
            return Err(LearnError::BadParam(
                "boosting needs positive rate, depth and tree count".into(),
            ));
        }
        if !(0.0 < subsample && subsample <= 1.0) {
            return Err(LearnError::BadParam("subsample must be in (0, 1]".into()));
        }
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == y.len() {
            return Err(LearnError::SingleClass);
        }
        if x.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(LearnError::NonFinite);
        }

        let n = x.len();
        let binning = Binning::build(x);
        let init = (pos as f64 / (n - pos) as f64).ln();
        let mut f: Vec<f64> = vec![init; n];
        let mut staged_loss = vec![mean_logistic_loss(&f, y)];
        let mut trees = Vec::with_capacity(n_trees);
        let params = SseParams {
            max_depth,
            min_leaf: MIN_LEAF,
        };
        let k = ((subsample * n as f64).floor() as usize)
            .max(2 * MIN_LEAF)
            .min(n);

        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut all_rows: Vec<u32> = (0..n as u32).collect();
        for stage in 0..n_trees {
            for i in 0..n {
                let p = sigmoid(f[i]);
                g[i] = f64::from(y[i]) - p;
                h[i] = (p * (1.0 - p)).max(1e-12);
            }
            let mut rows: Vec<u32> = if k < n {
                // Without replacement: partial Fisher-Yates over the index
                // range, stage-indexed stream.
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stage as u64));
                for i in 0..k {
                    let j = rng.random_range(i..n);
                    all_rows.swap(i, j);
                }
                let mut sample = all_rows[..k].to_vec();
                sample.sort_unstable();
                sample
            } else {
                all_rows.clone()
            };
            let tree = grow_sse(&binning, &mut rows, &g, &h, &params);
            for (fi, row) in f.iter_mut().zip(x) {
                *fi += rate * tree.predict(row);
            }
            trees.push(tree);
            staged_loss.push(mean_logistic_loss(&f, y));
        }

        Ok(BoostModel {
            init,
            trees,
            rate,
            max_depth,
            n_trees,
            subsample,
            staged_loss,
        })
    }

    pub fn score_row(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut z = self.init;
        for tree in &self.trees {
            z += self.rate * tree.predict(x);
        }
        sigmoid(z)
    }
}
