//! Binary-classifier evaluation: confusion counts, recall / false alarm
//! rate, ROC sweep with trapezoidal AUC, and Youden-index threshold
//! selection.
//!
//! The positive class throughout is "affected" (target 1). Prediction rule
//! is `score >= threshold`, inclusive.

use std::io;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("scores ({scores}) and labels ({labels}) differ in length")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("a class is empty; rate undefined")]
    EmptyClass,
    #[error("labels contain a single class; ROC undefined")]
    SingleClass,
    #[error("empty ROC curve")]
    EmptyCurve,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Counts predictions at a threshold; predicted positive iff
/// `score >= threshold`.
pub fn confusion(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ConfusionCounts, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y != 0) {
            (true, true) => cm.true_pos += 1,
            (true, false) => cm.false_pos += 1,
            (false, false) => cm.true_neg += 1,
            (false, true) => cm.false_neg += 1,
        }
    }
    Ok(cm)
}

/// `(recall, far)`: recall = tp/(tp+fn), far = fp/(fp+tn). Errors when
/// either class is absent.
pub fn rates(cm: &ConfusionCounts) -> Result<(f64, f64), MetricsError> {
    let pos = cm.true_pos + cm.false_neg;
    let neg = cm.false_pos + cm.true_neg;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::EmptyClass);
    }
    Ok((
        cm.true_pos as f64 / pos as f64,
        cm.false_pos as f64 / neg as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub recall: f64,
}

/// ROC curve points ordered by non-increasing threshold, from (0,0) to
/// (1,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Sweeps the threshold through every distinct score, descending. The
/// leading (0,0) anchor gets a finite sentinel threshold just above the
/// maximum score so exports stay JSON-safe; the final distinct score
/// yields (1,1) because the decision rule is inclusive.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(RocCurve, f64), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&y| y != 0).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let max_score = scores[order[0]];
    let mut points = vec![RocPoint {
        threshold: max_score + 1.0,
        far: 0.0,
        recall: 0.0,
    }];

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // Absorb the whole tie group before emitting a point.
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            far: fp as f64 / neg,
            recall: tp as f64 / pos,
        });
    }

    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].far - w[0].far) * (w[0].recall + w[1].recall) / 2.0;
    }
    Ok((RocCurve { points }, auc))
}

/// Point maximizing Youden's J = recall − far; ties resolve toward the
/// higher threshold (the curve is threshold-descending, so the first
/// maximum wins). Returns `(threshold, j)`.
pub fn youden_threshold(curve: &RocCurve) -> Result<(f64, f64), MetricsError> {
    let mut best: Option<(f64, f64)> = None;
    for p in &curve.points {
        let j = p.recall - p.far;
        match best {
            Some((_, bj)) if j <= bj => {}
            _ => best = Some((p.threshold, j)),
        }
    }
    best.ok_or(MetricsError::EmptyCurve)
}

/// Writes `threshold,far,recall` rows for plotting.
pub fn write_roc_csv<W: io::Write>(curve: &RocCurve, w: W) -> Result<(), MetricsError> {
    let mut wtr = csv::Writer::from_writer(w);
    for p in &curve.points {
        wtr.serialize(p)
            .map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| MetricsError::Csv(e.to_string()))?;
    Ok(())
}
