//! Random forest: bagged Gini trees with per-node feature subsampling.
//!
//! Each tree draws its own RNG stream from the model seed and the tree
//! index, so growing trees in parallel yields bit-identical forests at any
//! thread count. Scores are the mean class-1 leaf fraction across trees;
//! importances are impurity decreases averaged over trees and normalized
//! to sum to one.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{grow_gini, Binning, GiniParams, Tree};
use super::LearnError;
use crate::derive_seed;
use crate::features::FEATURE_COUNT;

/// Features considered per split: floor(sqrt(feature count)).
pub const MTRY: usize = 3;
const MIN_LEAF: usize = 5;

#[derive(Debug, Clone)]
pub struct ForestModel {
    trees: Vec<Tree>,
    importance: [f64; FEATURE_COUNT],
    pub n_trees: usize,
    pub max_depth: Option<usize>,
}

impl ForestModel {
    pub fn fit(
        x: &[[f64; FEATURE_COUNT]],
        y: &[u8],
        n_trees: usize,
        max_depth: Option<usize>,
        seed: u64,
    ) -> Result<ForestModel, LearnError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(LearnError::EmptyTrainingSet);
        }
        if n_trees == 0 {
            return Err(LearnError::BadParam(
                "forest needs at least one tree".into(),
            ));
        }
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == y.len() {
            return Err(LearnError::SingleClass);
        }
        if x.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(LearnError::NonFinite);
        }

        let binning = Binning::build(x);
        let n = x.len();
        let params = GiniParams {
            max_depth,
            mtry: MTRY,
            min_leaf: MIN_LEAF,
        };

        // Ordered parallel growth: tree t depends only on (seed, t).
        let grown: Vec<(Tree, [f64; FEATURE_COUNT])> = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                // Bootstrap sample, with replacement.
                let mut rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
                let mut imp = [0.0; FEATURE_COUNT];
                let tree = grow_gini(&binning, &mut rows, y, &params, &mut rng, &mut imp);
                (tree, imp)
            })
            .collect();

        let mut trees = Vec::with_capacity(n_trees);
        let mut importance = [0.0; FEATURE_COUNT];
        for (tree, imp) in grown {
            trees.push(tree);
            for (acc, v) in importance.iter_mut().zip(imp) {
                *acc += v;
            }
        }
        let total: f64 = importance.iter().sum();
        if total > 0.0 {
            for v in importance.iter_mut() {
                *v /= total;
            }
        }
        Ok(ForestModel {
            trees,
            importance,
            n_trees,
            max_depth,
        })
    }

    pub fn score_row(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }

    /// Normalized mean-impurity-decrease importances, indexed like the
    /// feature vector.
    pub fn importance(&self) -> &[f64; FEATURE_COUNT] {
        &self.importance
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_NAMES;

    fn blobs(n: usize, sep: f64, seed: u64) -> (Vec<[f64; FEATURE_COUNT]>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let label = rng.random_bool(0.5) as u8;
            let mut row = [0.0; FEATURE_COUNT];
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            if label == 1 {
                row[0] += sep;
                row[4] += sep;
            }
            x.push(row);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn disjoint_classes_are_separated() {
        let (x, y) = blobs(300, 5.0, 41);
        let model = ForestModel::fit(&x, &y, 50, None, 1).unwrap();
        for (row, &label) in x.iter().zip(&y) {
            let s = model.score_row(row);
            assert_eq!(s >= 0.5, label == 1);
        }
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let (x, y) = blobs(200, 0.3, 43);
        let model = ForestModel::fit(&x, &y, 30, Some(4), 2).unwrap();
        for row in &x {
            let s = model.score_row(row);
            assert!((0.0..=1.0).contains(&s) && s.is_finite());
        }
    }

    #[test]
    fn importance_sums_to_one_and_ranks_signal() {
        let (x, y) = blobs(400, 2.0, 45);
        let model = ForestModel::fit(&x, &y, 60, None, 3).unwrap();
        let sum: f64 = model.importance().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        // Features 0 and 4 carry all the signal; they should outrank each
        // pure-noise feature.
        let imp = model.importance();
        let signal = imp[0].min(imp[4]);
        for (i, v) in imp.iter().enumerate() {
            if i != 0 && i != 4 {
                assert!(
                    *v < signal,
                    "noise feature {} ({}) outranked signal",
                    i,
                    FEATURE_NAMES[i]
                );
            }
        }
    }

    #[test]
    fn fit_is_bit_identical_across_thread_counts() {
        let (x, y) = blobs(250, 1.0, 47);
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let m1 = pool1.install(|| ForestModel::fit(&x, &y, 40, Some(8), 7).unwrap());
        let m4 = pool4.install(|| ForestModel::fit(&x, &y, 40, Some(8), 7).unwrap());
        for row in &x {
            assert_eq!(m1.score_row(row).to_bits(), m4.score_row(row).to_bits());
        }
        for (a, b) in m1.importance().iter().zip(m4.importance()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let (x, y) = blobs(200, 0.8, 49);
        let a = ForestModel::fit(&x, &y, 20, Some(6), 1).unwrap();
        let b = ForestModel::fit(&x, &y, 20, Some(6), 2).unwrap();
        let diff = x
            .iter()
            .any(|row| a.score_row(row).to_bits() != b.score_row(row).to_bits());
        assert!(diff, "independent seeds should grow different forests");
    }

    #[test]
    fn rejects_degenerate_input() {
        let (x, _) = blobs(50, 1.0, 51);
        assert!(matches!(
            ForestModel::fit(&x, &[0u8; 50], 10, None, 1),
            Err(LearnError::SingleClass)
        ));
        assert!(matches!(
            ForestModel::fit(&[], &[], 10, None, 1),
            Err(LearnError::EmptyTrainingSet)
        ));
    }
}
