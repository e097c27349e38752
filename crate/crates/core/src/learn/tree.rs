//! Histogram-binned CART trees shared by the forest and boosting models.
//!
//! Feature values are quantized once per fit into at most 256 bins per
//! feature; every bin boundary is the midpoint between two adjacent
//! training values, so "code <= bin" and "value <= threshold" select the
//! same rows. Split search then scans per-bin histograms instead of sorted
//! value arrays, which keeps tree growing cheap at this dataset scale.
//! Grown trees store raw-value thresholds and predict on unbinned rows.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::features::FEATURE_COUNT;

const MAX_BINS: usize = 256;
const LEAF: u32 = u32::MAX;

/// Per-feature quantization of a training matrix.
pub struct Binning {
    /// Sorted cut values per feature; none coincides with a data value.
    cuts: Vec<Vec<f64>>,
    /// Bin code per row, feature-major.
    codes: Vec<Vec<u8>>,
    n_rows: usize,
}

impl Binning {
    pub fn build(x: &[[f64; FEATURE_COUNT]]) -> Binning {
        let n = x.len();
        let mut cuts = Vec::with_capacity(FEATURE_COUNT);
        let mut codes = Vec::with_capacity(FEATURE_COUNT);
        for f in 0..FEATURE_COUNT {
            let mut distinct: Vec<f64> = x.iter().map(|row| row[f]).collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();

            let feature_cuts: Vec<f64> = if distinct.len() <= MAX_BINS {
                distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect()
            } else {
                // Quantile-spaced boundaries over the distinct values.
                let mut qc: Vec<f64> = (1..MAX_BINS)
                    .map(|j| {
                        let pos = j * distinct.len() / MAX_BINS;
                        midpoint(distinct[pos - 1], distinct[pos])
                    })
                    .collect();
                qc.dedup();
                qc
            };

            let feature_codes: Vec<u8> = x
                .iter()
                .map(|row| feature_cuts.partition_point(|c| *c < row[f]) as u8)
                .collect();
            cuts.push(feature_cuts);
            codes.push(feature_codes);
        }
        Binning {
            cuts,
            codes,
            n_rows: n,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    fn code(&self, feature: usize, row: u32) -> usize {
        self.codes[feature][row as usize] as usize
    }

    /// Raw-value threshold equivalent to splitting after `bin`.
    fn threshold(&self, feature: usize, bin: usize) -> f64 {
        self.cuts[feature][bin]
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    a + (b - a) / 2.0
}

#[derive(Debug, Clone, Copy)]
struct Node {
    feature: u16,
    threshold: f64,
    left: u32,
    right: u32,
    /// Leaf payload: class-1 fraction (forest) or additive step (boost).
    value: f64,
}

/// A grown tree; predicts on raw feature rows.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut i = 0u32;
        loop {
            let node = &self.nodes[i as usize];
            if node.left == LEAF {
                return node.value;
            }
            i = if x[node.feature as usize] <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
    }

    #[cfg(test)]
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

pub struct GiniParams {
    pub max_depth: Option<usize>,
    /// Features sampled per node.
    pub mtry: usize,
    pub min_leaf: usize,
}

struct GiniGrower<'a> {
    binning: &'a Binning,
    y: &'a [u8],
    params: &'a GiniParams,
    total: f64,
    nodes: Vec<Node>,
    importance: [f64; FEATURE_COUNT],
}

struct BestSplit {
    feature: usize,
    bin: usize,
    score: f64,
    n_left: usize,
}

impl<'a> GiniGrower<'a> {
    /// Σ class² / n, the negated-impurity score Gini splits maximize.
    fn purity(pos: f64, n: f64) -> f64 {
        let neg = n - pos;
        (pos * pos + neg * neg) / n
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| self.y[r as usize] == 1).count();
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            feature: 0,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            value: pos as f64 / n as f64,
        });

        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || pos == 0 || pos == n || n < 2 * self.params.min_leaf {
            return id;
        }

        // Per-node feature subsample: partial Fisher-Yates.
        let mut order: [usize; FEATURE_COUNT] = std::array::from_fn(|i| i);
        for i in 0..self.params.mtry.min(FEATURE_COUNT) {
            let j = rng.random_range(i..FEATURE_COUNT);
            order.swap(i, j);
        }

        let parent_score = Self::purity(pos as f64, n as f64);
        let mut best: Option<BestSplit> = None;
        let mut hist_n = [0u32; MAX_BINS];
        let mut hist_pos = [0u32; MAX_BINS];
        for &f in order.iter().take(self.params.mtry.min(FEATURE_COUNT)) {
            let n_bins = self.binning.n_bins(f);
            if n_bins < 2 {
                continue;
            }
            hist_n[..n_bins].fill(0);
            hist_pos[..n_bins].fill(0);
            let (mut lo, mut hi) = (n_bins - 1, 0usize);
            for &r in rows.iter() {
                let c = self.binning.code(f, r);
                hist_n[c] += 1;
                hist_pos[c] += u32::from(self.y[r as usize] == 1);
                lo = lo.min(c);
                hi = hi.max(c);
            }
            let (mut nl, mut pl) = (0u32, 0u32);
            for b in lo..hi {
                nl += hist_n[b];
                pl += hist_pos[b];
                let nr = n as u32 - nl;
                if (nl as usize) < self.params.min_leaf || (nr as usize) < self.params.min_leaf {
                    continue;
                }
                let score = Self::purity(pl as f64, nl as f64)
                    + Self::purity((pos as u32 - pl) as f64, nr as f64);
                if score > parent_score + 1e-12 && best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(BestSplit {
                        feature: f,
                        bin: b,
                        score,
                        n_left: nl as usize,
                    });
                }
            }
        }

        let best = match best {
            Some(b) => b,
            None => return id,
        };

        // Weighted impurity decrease for the importance report.
        self.importance[best.feature] += (best.score - parent_score) / self.total;

        let n_left = best.n_left;
        partition_stable(rows, n_left, |r| {
            self.binning.code(best.feature, r) <= best.bin
        });
        let threshold = self.binning.threshold(best.feature, best.bin);
        let (left_rows, right_rows) = rows.split_at_mut(n_left);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        let node = &mut self.nodes[id as usize];
        node.feature = best.feature as u16;
        node.threshold = threshold;
        node.left = left;
        node.right = right;
        id
    }
}

/// Stable partition of `rows` so the `n_left` rows satisfying `pred` come
/// first, both sides keeping their relative order (and therefore a
/// deterministic downstream accumulation order).
fn partition_stable(rows: &mut [u32], n_left: usize, pred: impl Fn(u32) -> bool) -> usize {
    let mut left = Vec::with_capacity(n_left);
    let mut right = Vec::with_capacity(rows.len() - n_left);
    for &r in rows.iter() {
        if pred(r) {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    rows[..left.len()].copy_from_slice(&left);
    rows[left.len()..].copy_from_slice(&right);
    left.len()
}

/// Grows a Gini classification tree on binned data. `importance`
/// accumulates the total-weighted impurity decrease per feature.
pub fn grow_gini(
    binning: &Binning,
    rows: &mut [u32],
    y: &[u8],
    params: &GiniParams,
    rng: &mut ChaCha8Rng,
    importance: &mut [f64; FEATURE_COUNT],
) -> Tree {
    debug_assert!(!rows.is_empty());
    let mut grower = GiniGrower {
        binning,
        y,
        params,
        total: binning.n_rows() as f64,
        nodes: Vec::new(),
        importance: [0.0; FEATURE_COUNT],
    };
    grower.grow(rows, 0, rng);
    for (acc, inc) in importance.iter_mut().zip(grower.importance) {
        *acc += inc;
    }
    Tree {
        nodes: grower.nodes,
    }
}

pub struct SseParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

struct SseGrower<'a> {
    binning: &'a Binning,
    /// Per-row gradient (residual) and hessian.
    g: &'a [f64],
    h: &'a [f64],
    params: &'a SseParams,
    nodes: Vec<Node>,
}

impl<'a> SseGrower<'a> {
    fn leaf_value(&self, rows: &[u32]) -> f64 {
        let sg: f64 = rows.iter().map(|&r| self.g[r as usize]).sum();
        let sh: f64 = rows.iter().map(|&r| self.h[r as usize]).sum();
        // Newton step with a guard against vanishing curvature.
        (sg / sh.max(1e-6)).clamp(-4.0, 4.0)
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize) -> u32 {
        let n = rows.len();
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            feature: 0,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            value: self.leaf_value(rows),
        });
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            return id;
        }

        let sum_g: f64 = rows.iter().map(|&r| self.g[r as usize]).sum();
        let parent_score = sum_g * sum_g / n as f64;
        let mut best: Option<BestSplit> = None;
        let mut hist_n = [0u32; MAX_BINS];
        let mut hist_g = [0f64; MAX_BINS];
        for f in 0..FEATURE_COUNT {
            let n_bins = self.binning.n_bins(f);
            if n_bins < 2 {
                continue;
            }
            hist_n[..n_bins].fill(0);
            hist_g[..n_bins].fill(0.0);
            let (mut lo, mut hi) = (n_bins - 1, 0usize);
            for &r in rows.iter() {
                let c = self.binning.code(f, r);
                hist_n[c] += 1;
                hist_g[c] += self.g[r as usize];
                lo = lo.min(c);
                hi = hi.max(c);
            }
            let (mut nl, mut gl) = (0u32, 0f64);
            for b in lo..hi {
                nl += hist_n[b];
                gl += hist_g[b];
                let nr = n as u32 - nl;
                if (nl as usize) < self.params.min_leaf || (nr as usize) < self.params.min_leaf {
                    continue;
                }
                // SSE reduction of the residuals, up to the constant parent
                // term.
                let gr = sum_g - gl;
                let score = gl * gl / nl as f64 + gr * gr / nr as f64;
                if score > parent_score + 1e-12 && best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(BestSplit {
                        feature: f,
                        bin: b,
                        score,
                        n_left: nl as usize,
                    });
                }
            }
        }

        let best = match best {
            Some(b) => b,
            None => return id,
        };
        let n_left = best.n_left;
        partition_stable(rows, n_left, |r| {
            self.binning.code(best.feature, r) <= best.bin
        });
        let threshold = self.binning.threshold(best.feature, best.bin);
        let (left_rows, right_rows) = rows.split_at_mut(n_left);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        let node = &mut self.nodes[id as usize];
        node.feature = best.feature as u16;
        node.threshold = threshold;
        node.left = left;
        node.right = right;
        id
    }
}

/// Grows a regression tree on gradient/hessian targets: SSE splits on the
/// gradient, Newton leaf values.
pub fn grow_sse(
    binning: &Binning,
    rows: &mut [u32],
    g: &[f64],
    h: &[f64],
    params: &SseParams,
) -> Tree {
    debug_assert!(!rows.is_empty());
    let mut grower = SseGrower {
        binning,
        g,
        h,
        params,
        nodes: Vec::new(),
    };
    grower.grow(rows, 0);
    Tree {
        nodes: grower.nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(vals: &[(usize, f64)]) -> [f64; FEATURE_COUNT] {
        let mut r = [0.0; FEATURE_COUNT];
        for &(i, v) in vals {
            r[i] = v;
        }
        r
    }

    #[test]
    fn binning_is_order_preserving_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let x: Vec<[f64; FEATURE_COUNT]> = (0..500)
            .map(|_| {
                let mut r = [0.0; FEATURE_COUNT];
                for v in r.iter_mut() {
                    // Heavy ties on some features.
                    *v = if rng.random_bool(0.5) {
                        rng.random_range(0..7) as f64
                    } else {
                        rng.random_range(-50.0..50.0)
                    };
                }
                r
            })
            .collect();
        let b = Binning::build(&x);
        for f in 0..FEATURE_COUNT {
            assert!(b.n_bins(f) <= MAX_BINS);
            for (i, xi) in x.iter().enumerate() {
                for (j, xj) in x.iter().enumerate() {
                    if xi[f] < xj[f] {
                        assert!(
                            b.code(f, i as u32) <= b.code(f, j as u32),
                            "codes must be monotone in value"
                        );
                    }
                }
                // code <= bin iff value <= threshold(bin), for every bin.
                for bin in 0..b.n_bins(f) - 1 {
                    assert_eq!(
                        b.code(f, i as u32) <= bin,
                        xi[f] <= b.threshold(f, bin),
                        "bin/threshold disagreement at feature {f}"
                    );
                }
            }
        }
    }

    #[test]
    fn binning_handles_many_distinct_values() {
        let x: Vec<[f64; FEATURE_COUNT]> =
            (0..2000).map(|i| row(&[(0, i as f64 * 0.378)])).collect();
        let b = Binning::build(&x);
        assert!(b.n_bins(0) <= MAX_BINS);
        assert!(b.n_bins(0) >= MAX_BINS / 2);
        // Monotone codes.
        for w in (0..2000u32).collect::<Vec<_>>().windows(2) {
            assert!(b.code(0, w[0]) <= b.code(0, w[1]));
        }
    }

    #[test]
    fn gini_tree_separates_threshold_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        // Integer-valued features keep every distinct value inside the bin
        // budget, so the midpoint cuts can express the labeling rule exactly.
        let x: Vec<[f64; FEATURE_COUNT]> = (0..400)
            .map(|_| {
                let mut r = [0.0; FEATURE_COUNT];
                for v in r.iter_mut() {
                    *v = rng.random_range(0..100) as f64;
                }
                r
            })
            .collect();
        let y: Vec<u8> = x.iter().map(|r| (r[6] > 50.0) as u8).collect();
        let binning = Binning::build(&x);
        let mut rows: Vec<u32> = (0..x.len() as u32).collect();
        let mut importance = [0.0; FEATURE_COUNT];
        let params = GiniParams {
            max_depth: None,
            mtry: FEATURE_COUNT,
            min_leaf: 5,
        };
        let mut grow_rng = ChaCha8Rng::seed_from_u64(1);
        let tree = grow_gini(
            &binning,
            &mut rows,
            &y,
            &params,
            &mut grow_rng,
            &mut importance,
        );
        // All features available at each node: the single informative one
        // must dominate and classify training data perfectly.
        for (r, &label) in x.iter().zip(&y) {
            let p = tree.predict(r);
            assert_eq!(p >= 0.5, label == 1, "row mispredicted");
        }
        let top = importance
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(top, 6);
    }

    #[test]
    fn gini_tree_respects_depth_and_leaf_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(115);
        let x: Vec<[f64; FEATURE_COUNT]> = (0..300)
            .map(|_| {
                let mut r = [0.0; FEATURE_COUNT];
                for v in r.iter_mut() {
                    *v = rng.random_range(0.0..1.0);
                }
                r
            })
            .collect();
        let y: Vec<u8> = (0..300).map(|_| rng.random_bool(0.5) as u8).collect();
        let binning = Binning::build(&x);
        let mut rows: Vec<u32> = (0..x.len() as u32).collect();
        let mut imp = [0.0; FEATURE_COUNT];
        let params = GiniParams {
            max_depth: Some(2),
            mtry: 3,
            min_leaf: 5,
        };
        let mut grow_rng = ChaCha8Rng::seed_from_u64(2);
        let tree = grow_gini(&binning, &mut rows, &y, &params, &mut grow_rng, &mut imp);
        // Depth 2 means at most 1 + 2 + 4 = 7 nodes.
        assert!(tree.n_nodes() <= 7);
    }

    #[test]
    fn gini_leaf_values_are_class_fractions() {
        let x: Vec<[f64; FEATURE_COUNT]> = (0..40).map(|i| row(&[(0, (i % 4) as f64)])).collect();
        // Feature 0 groups rows into 4 clusters with class rates 0,1/10,..
        let y: Vec<u8> = (0..40).map(|i| ((i % 4) as u8 >= 2) as u8).collect();
        let binning = Binning::build(&x);
        let mut rows: Vec<u32> = (0..40).collect();
        let mut imp = [0.0; FEATURE_COUNT];
        let params = GiniParams {
            max_depth: None,
            mtry: FEATURE_COUNT,
            min_leaf: 5,
        };
        let mut grow_rng = ChaCha8Rng::seed_from_u64(3);
        let tree = grow_gini(&binning, &mut rows, &y, &params, &mut grow_rng, &mut imp);
        for (r, &label) in x.iter().zip(&y) {
            assert_eq!(tree.predict(r), label as f64);
        }
    }

    #[test]
    fn sse_tree_fits_piecewise_constant_target() {
        let x: Vec<[f64; FEATURE_COUNT]> = (0..200).map(|i| row(&[(3, (i / 50) as f64)])).collect();
        let g: Vec<f64> = (0..200).map(|i| ((i / 50) as f64) - 1.5).collect();
        let h = vec![1.0; 200];
        let binning = Binning::build(&x);
        let mut rows: Vec<u32> = (0..200).collect();
        let params = SseParams {
            max_depth: 3,
            min_leaf: 5,
        };
        let tree = grow_sse(&binning, &mut rows, &g, &h, &params);
        for (i, r) in x.iter().enumerate() {
            let want = ((i / 50) as f64) - 1.5;
            assert!((tree.predict(r) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sse_leaf_values_clamped() {
        // Tiny hessians force the Newton step into the clamp.
        let x: Vec<[f64; FEATURE_COUNT]> = (0..20).map(|i| row(&[(0, i as f64)])).collect();
        let g = vec![1.0; 20];
        let h = vec![1e-12; 20];
        let binning = Binning::build(&x);
        let mut rows: Vec<u32> = (0..20).collect();
        let tree = grow_sse(
            &binning,
            &mut rows,
            &g,
            &h,
            &SseParams {
                max_depth: 2,
                min_leaf: 5,
            },
        );
        for r in &x {
            assert!(tree.predict(r).abs() <= 4.0);
        }
    }

    #[test]
    fn growing_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(117);
        let x: Vec<[f64; FEATURE_COUNT]> = (0..250)
            .map(|_| {
                let mut r = [0.0; FEATURE_COUNT];
                for v in r.iter_mut() {
                    *v = rng.random_range(0.0..10.0);
                }
                r
            })
            .collect();
        let y: Vec<u8> = (0..250).map(|i| (i % 3 == 0) as u8).collect();
        let binning = Binning::build(&x);
        let params = GiniParams {
            max_depth: Some(6),
            mtry: 3,
            min_leaf: 5,
        };
        let grow = || {
            let mut rows: Vec<u32> = (0..250).collect();
            let mut imp = [0.0; FEATURE_COUNT];
            let mut r = ChaCha8Rng::seed_from_u64(42);
            let t = grow_gini(&binning, &mut rows, &y, &params, &mut r, &mut imp);
            (t, imp)
        };
        let (t1, imp1) = grow();
        let (t2, imp2) = grow();
        assert_eq!(t1.n_nodes(), t2.n_nodes());
        for r in &x {
            assert_eq!(t1.predict(r).to_bits(), t2.predict(r).to_bits());
        }
        for (a, b) in imp1.iter().zip(&imp2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
