//! Hyperparameter grids and stratified cross-validated evaluation.
//!
//! The protocol: stratified outer folds; within each outer training fold
//! the minority class is optionally rebalanced, every lattice point is
//! scored on an inner 80/20 stratified split by validation AUC (ties keep
//! the first lattice point), the winner is refit on the whole augmented
//! fold, and the refit model is scored on the untouched outer validation
//! fold. Every task seeds its own RNG stream from (seed, fold, grid
//! index), so results do not depend on scheduling or thread count.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Activation, Algorithm, LearnError, ModelParams, ModelSpec, Penalty, TrainedModel};
use crate::dataset::Dataset;
use crate::derive_seed;
use crate::features::FEATURE_COUNT;
use crate::metrics::{confusion, rates, roc_auc, youden_threshold};
use crate::sampling::{smote, SmoteConfig};

const INNER_TRAIN_FRACTION: f64 = 0.8;

// Stream tags keeping per-task seeds disjoint.
const STREAM_FOLDS: u64 = 1 << 60;
const STREAM_SPLIT: u64 = 2 << 60;
const STREAM_FIT: u64 = 3 << 60;
const STREAM_REFIT: u64 = 4 << 60;

fn fit_stream(fold: usize, grid_index: usize) -> u64 {
    STREAM_FIT | ((fold as u64) << 24) | grid_index as u64
}

/// Default hyperparameter lattice per algorithm, in evaluation order.
pub fn default_grid(algorithm: Algorithm) -> Vec<ModelParams> {
    match algorithm {
        Algorithm::Logistic => {
            let mut grid = Vec::new();
            for &strength in &[0.01, 0.1, 1.0, 10.0] {
                for &penalty in &[Penalty::L1, Penalty::L2] {
                    grid.push(ModelParams::Logistic { strength, penalty });
                }
            }
            grid
        }
        Algorithm::RandomForest => {
            let mut grid = Vec::new();
            for &n_trees in &[100usize, 300] {
                for &max_depth in &[Some(4), Some(8), None] {
                    grid.push(ModelParams::RandomForest { n_trees, max_depth });
                }
            }
            grid
        }
        Algorithm::GradientBoost => {
            let mut grid = Vec::new();
            for &rate in &[0.05, 0.1] {
                for &max_depth in &[3usize, 5] {
                    for &n_trees in &[100usize, 300] {
                        for &subsample in &[0.8, 1.0] {
                            grid.push(ModelParams::GradientBoost {
                                rate,
                                max_depth,
                                n_trees,
                                subsample,
                            });
                        }
                    }
                }
            }
            grid
        }
        Algorithm::Mlp => {
            let mut grid = Vec::new();
            for &activation in &[Activation::Relu, Activation::Tanh] {
                for &alpha in &[1e-4, 1e-2] {
                    for &batch in &[32usize, 128] {
                        for &rate in &[1e-3, 1e-2] {
                            grid.push(ModelParams::Mlp {
                                activation,
                                alpha,
                                batch,
                                rate,
                            });
                        }
                    }
                }
            }
            grid
        }
    }
}

/// Assigns every row to one of `n_folds` folds, preserving the class mix:
/// each class is shuffled independently and dealt round-robin. Returned
/// folds hold ascending row indices.
pub fn stratified_folds(y: &[u8], n_folds: usize, seed: u64) -> Result<Vec<Vec<u32>>, LearnError> {
    if n_folds < 2 {
        return Err(LearnError::BadParam("need at least two folds".into()));
    }
    let mut pos: Vec<u32> = Vec::new();
    let mut neg: Vec<u32> = Vec::new();
    for (i, &label) in y.iter().enumerate() {
        if label == 1 {
            pos.push(i as u32);
        } else {
            neg.push(i as u32);
        }
    }
    for (class, idx) in [(1u8, &pos), (0u8, &neg)] {
        if idx.len() < n_folds {
            return Err(LearnError::ClassTooSmall {
                class,
                count: idx.len(),
                folds: n_folds,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_FOLDS));
    shuffle(&mut pos, &mut rng);
    shuffle(&mut neg, &mut rng);
    let mut folds = vec![Vec::new(); n_folds];
    for (j, &row) in pos.iter().enumerate() {
        folds[j % n_folds].push(row);
    }
    for (j, &row) in neg.iter().enumerate() {
        folds[j % n_folds].push(row);
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    Ok(folds)
}

fn shuffle(idx: &mut [u32], rng: &mut ChaCha8Rng) {
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
}

/// Stratified 80/20 split of `y`, returning (train, valid) index lists.
/// Both sides keep at least one row of each class.
fn inner_split(y: &[u8], seed: u64) -> Result<(Vec<u32>, Vec<u32>), LearnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for class in [1u8, 0u8] {
        let mut idx: Vec<u32> = y
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i as u32)
            .collect();
        if idx.len() < 2 {
            return Err(LearnError::ClassTooSmall {
                class,
                count: idx.len(),
                folds: 2,
            });
        }
        shuffle(&mut idx, &mut rng);
        let n_train =
            ((idx.len() as f64 * INNER_TRAIN_FRACTION).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        valid.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

fn gather(rows: &Dataset, idx: &[u32]) -> (Vec<[f64; FEATURE_COUNT]>, Vec<u8>) {
    let x = idx
        .iter()
        .map(|&i| rows.rows[i as usize].features)
        .collect();
    let y = idx.iter().map(|&i| rows.rows[i as usize].target).collect();
    (x, y)
}

/// Outcome of one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Winning lattice point (index into the grid) and its parameters.
    pub grid_index: usize,
    pub params: ModelParams,
    /// Inner-validation AUC that selected the winner.
    pub inner_auc: f64,
    /// Metrics on the outer validation fold.
    pub auc: f64,
    pub threshold: f64,
    pub youden_j: f64,
    pub recall: f64,
    pub far: f64,
    pub train_rows: usize,
    pub valid_rows: usize,
}

/// Cross-validated evaluation of one algorithm under one balancing
/// setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub algorithm: Algorithm,
    /// Minority/majority target ratio used for rebalancing, if any.
    pub smote_ratio: Option<f64>,
    pub folds: Vec<FoldResult>,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_recall: f64,
    pub std_recall: f64,
    pub mean_far: f64,
    pub std_far: f64,
    pub mean_youden_j: f64,
}

fn mean_std(vals: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = vals.clone().count() as f64;
    let mean = vals.clone().sum::<f64>() / n;
    let std = if n > 1.0 {
        (vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Runs the full nested evaluation over a hyperparameter grid. All grid
/// points must belong to the same algorithm. `balancing = None` trains on
/// the folds as-is.
pub fn grid_search_cv(
    grid: &[ModelParams],
    data: &Dataset,
    balancing: Option<&SmoteConfig>,
    n_folds: usize,
    seed: u64,
) -> Result<CvResult, LearnError> {
    if grid.is_empty() {
        return Err(LearnError::BadParam("hyperparameter grid is empty".into()));
    }
    let algorithm = grid[0].algorithm();
    if grid.iter().any(|p| p.algorithm() != algorithm) {
        return Err(LearnError::BadParam("grid mixes algorithms".into()));
    }
    let y = data.targets();
    let folds = stratified_folds(&y, n_folds, seed)?;

    let fold_results: Vec<FoldResult> = folds
        .par_iter()
        .enumerate()
        .map(|(f, valid_idx)| run_fold(grid, data, balancing, &folds, f, valid_idx, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let (mean_auc, std_auc) = mean_std(fold_results.iter().map(|r| r.auc));
    let (mean_recall, std_recall) = mean_std(fold_results.iter().map(|r| r.recall));
    let (mean_far, std_far) = mean_std(fold_results.iter().map(|r| r.far));
    let (mean_youden_j, _) = mean_std(fold_results.iter().map(|r| r.youden_j));
    Ok(CvResult {
        algorithm,
        smote_ratio: balancing.map(|c| c.ratio),
        folds: fold_results,
        mean_auc,
        std_auc,
        mean_recall,
        std_recall,
        mean_far,
        std_far,
        mean_youden_j,
    })
}

fn run_fold(
    grid: &[ModelParams],
    data: &Dataset,
    balancing: Option<&SmoteConfig>,
    folds: &[Vec<u32>],
    f: usize,
    valid_idx: &[u32],
    seed: u64,
) -> Result<FoldResult, LearnError> {
    // Outer training rows, in original order.
    let train_idx: Vec<u32> = {
        let mut in_valid = vec![false; data.len()];
        for &i in valid_idx {
            in_valid[i as usize] = true;
        }
        (0..data.len() as u32)
            .filter(|&i| !in_valid[i as usize])
            .collect()
    };
    debug_assert_eq!(train_idx.len() + valid_idx.len(), data.len());
    debug_assert_eq!(folds[f].len(), valid_idx.len());

    let train_ds = Dataset {
        rows: train_idx
            .iter()
            .map(|&i| data.rows[i as usize].clone())
            .collect(),
    };
    let augmented = match balancing {
        Some(cfg) => {
            let fold_cfg = SmoteConfig {
                seed: derive_seed(cfg.seed, f as u64),
                ..*cfg
            };
            smote(&train_ds, &fold_cfg)?
        }
        None => train_ds,
    };
    let y_aug = augmented.targets();
    let (inner_train, inner_valid) =
        inner_split(&y_aug, derive_seed(seed, STREAM_SPLIT | (f as u64) << 24))?;
    let (x_it, y_it) = gather(&augmented, &inner_train);
    let (x_iv, y_iv) = gather(&augmented, &inner_valid);

    // Score every lattice point on the inner validation split; ties keep
    // the earliest point.
    let mut best: Option<(usize, f64)> = None;
    for (i, params) in grid.iter().enumerate() {
        let spec = ModelSpec {
            params: params.clone(),
            seed: derive_seed(seed, fit_stream(f, i)),
        };
        let model = TrainedModel::fit(&spec, &x_it, &y_it)?;
        let scores = model.score_rows(&x_iv);
        let (_, auc) = roc_auc(&scores, &y_iv)?;
        if best.as_ref().is_none_or(|&(_, b)| auc > b) {
            best = Some((i, auc));
        }
    }
    let (best_index, inner_auc) = best.expect("grid checked non-empty");

    // Refit the winner on the whole augmented training fold.
    let (x_full, y_full) = gather(&augmented, &(0..augmented.len() as u32).collect::<Vec<_>>());
    let refit_spec = ModelSpec {
        params: grid[best_index].clone(),
        seed: derive_seed(seed, STREAM_REFIT | (f as u64) << 24),
    };
    let model = TrainedModel::fit(&refit_spec, &x_full, &y_full)?;

    // Final metrics on the untouched outer validation fold.
    let (x_ov, y_ov) = gather(data, valid_idx);
    let scores = model.score_rows(&x_ov);
    let (curve, auc) = roc_auc(&scores, &y_ov)?;
    let (threshold, youden_j) = youden_threshold(&curve)?;
    let cm = confusion(&scores, &y_ov, threshold)?;
    let (recall, far) = rates(&cm)?;

    Ok(FoldResult {
        fold: f,
        grid_index: best_index,
        params: grid[best_index].clone(),
        inner_auc,
        auc,
        threshold,
        youden_j,
        recall,
        far,
        train_rows: augmented.len(),
        valid_rows: valid_idx.len(),
    })
}
