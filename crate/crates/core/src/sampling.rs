//! SMOTE oversampling of the minority (affected) class.
//!
//! New minority rows are interpolated between an existing minority row and
//! one of its k nearest minority neighbors. Neighbor distances are
//! Euclidean over the 12 continuous features after z-score standardization
//! with the training fold's statistics; interpolation itself runs on raw
//! values. The peak/rain binaries are copied from the parent row.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{Dataset, DatasetRow};
use crate::derive_seed;
use crate::features::CONTINUOUS_FEATURE_COUNT;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteConfig {
    /// Target minority/majority count ratio, in (0, 1].
    pub ratio: f64,
    /// Neighbor pool size; must be below the minority count.
    pub k: usize,
    pub seed: u64,
}

impl SmoteConfig {
    pub fn new(ratio: f64, seed: u64) -> SmoteConfig {
        SmoteConfig { ratio, k: 5, seed }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SmoteError {
    #[error("minority count {minority} must exceed k = {k}; lower smote.k")]
    TooFewMinority { minority: usize, k: usize },
    #[error("ratio {0} outside (0, 1]")]
    BadRatio(f64),
    #[error("k must be at least 1")]
    ZeroK,
}

/// Appends `max(0, floor(ratio * majority) - minority)` synthetic minority
/// rows to a copy of `train`. Original rows come first, untouched. Every
/// synthetic row gets its own RNG stream derived from (seed, row index),
/// so output is independent of evaluation order.
pub fn smote(train: &Dataset, cfg: &SmoteConfig) -> Result<Dataset, SmoteError> {
    if !(cfg.ratio > 0.0 && cfg.ratio <= 1.0) {
        return Err(SmoteError::BadRatio(cfg.ratio));
    }
    if cfg.k == 0 {
        return Err(SmoteError::ZeroK);
    }
    let minority: Vec<&DatasetRow> = train.rows.iter().filter(|r| r.target == 1).collect();
    let majority = train.rows.len() - minority.len();

    let n_syn = (cfg.ratio * majority as f64).floor() as i64 - minority.len() as i64;
    if n_syn <= 0 {
        return Ok(train.clone());
    }
    let n_syn = n_syn as usize;
    if minority.len() <= cfg.k {
        return Err(SmoteError::TooFewMinority {
            minority: minority.len(),
            k: cfg.k,
        });
    }

    // Fold-level standardization statistics over all training rows.
    let n = train.rows.len() as f64;
    let mut mean = [0.0f64; CONTINUOUS_FEATURE_COUNT];
    let mut scale = [1.0f64; CONTINUOUS_FEATURE_COUNT];
    for d in 0..CONTINUOUS_FEATURE_COUNT {
        let m = train.rows.iter().map(|r| r.features[d]).sum::<f64>() / n;
        mean[d] = m;
        if train.rows.len() >= 2 {
            let var = train
                .rows
                .iter()
                .map(|r| (r.features[d] - m) * (r.features[d] - m))
                .sum::<f64>()
                / (n - 1.0);
            let sd = var.max(0.0).sqrt();
            if sd > 1e-12 {
                scale[d] = sd;
            }
        }
    }
    let z = |row: &DatasetRow| -> [f64; CONTINUOUS_FEATURE_COUNT] {
        let mut out = [0.0; CONTINUOUS_FEATURE_COUNT];
        for d in 0..CONTINUOUS_FEATURE_COUNT {
            out[d] = (row.features[d] - mean[d]) / scale[d];
        }
        out
    };
    let zs: Vec<[f64; CONTINUOUS_FEATURE_COUNT]> = minority.iter().map(|r| z(r)).collect();

    // k nearest minority neighbors per minority row; ties break on index.
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..minority.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = zs[i]
                        .iter()
                        .zip(&zs[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2, j)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dists.truncate(cfg.k);
            dists.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut out = train.clone();
    for i in 0..n_syn {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        let p_idx = rng.random_range(0..minority.len());
        let parent = minority[p_idx];
        let nn = minority[neighbors[p_idx][rng.random_range(0..cfg.k)]];
        let u: f64 = rng.random_range(0.0..1.0);

        let mut features = parent.features;
        for (d, f) in features
            .iter_mut()
            .enumerate()
            .take(CONTINUOUS_FEATURE_COUNT)
        {
            *f = parent.features[d] + u * (nn.features[d] - parent.features[d]);
        }
        // Binary features stay the parent's.
        out.rows.push(DatasetRow {
            trip_id: format!("syn#{i}"),
            event_id: parent.event_id.clone(),
            features,
            target: 1,
        });
    }
    Ok(out)
}
