//! Binary classifiers over the fixed 14-feature vectors, plus grid-search
//! cross-validation.
//!
//! Four model families share one `fit`/`score` surface: penalized logistic
//! regression, a random forest, gradient-boosted trees and a single
//! hidden-layer perceptron. All scores are class-1 probabilities in
//! [0, 1]. Every fit is fully determined by its hyperparameters, the
//! training rows and an explicit seed.

pub mod boost;
pub mod forest;
pub mod logistic;
pub mod mlp;
pub mod search;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use boost::BoostModel;
pub use forest::ForestModel;
pub use logistic::{logistic_gradient, logistic_objective, LogisticModel, Penalty};
pub use mlp::{Activation, MlpModel};
pub use search::{default_grid, grid_search_cv, stratified_folds, CvResult, FoldResult};

use crate::features::{FEATURE_COUNT, FEATURE_NAMES};
use crate::metrics::MetricsError;
use crate::sampling::SmoteError;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("training set is empty or row/label lengths differ")]
    EmptyTrainingSet,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("training features contain non-finite values")]
    NonFinite,
    #[error("invalid hyperparameter: {0}")]
    BadParam(String),
    #[error("training diverged to a non-finite objective")]
    Diverged,
    #[error("feature importance is only defined for random forest models")]
    NotAForest,
    #[error(
        "class too small for stratified folds: {count} rows of class {class} for {folds} folds"
    )]
    ClassTooSmall {
        class: u8,
        count: usize,
        folds: usize,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sampling(#[from] SmoteError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Logistic,
    RandomForest,
    GradientBoost,
    Mlp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Logistic,
        Algorithm::RandomForest,
        Algorithm::GradientBoost,
        Algorithm::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Logistic => "logistic",
            Algorithm::RandomForest => "random_forest",
            Algorithm::GradientBoost => "gradient_boost",
            Algorithm::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" | "lr" => Some(Algorithm::Logistic),
            "random_forest" | "rf" => Some(Algorithm::RandomForest),
            "gradient_boost" | "gbt" | "xgb" => Some(Algorithm::GradientBoost),
            "mlp" | "ann" => Some(Algorithm::Mlp),
            _ => None,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One point of a hyperparameter lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum ModelParams {
    Logistic {
        /// Inverse regularization: larger means a weaker penalty.
        strength: f64,
        penalty: Penalty,
    },
    RandomForest {
        n_trees: usize,
        /// `None` grows until purity or the minimum leaf size.
        max_depth: Option<usize>,
    },
    GradientBoost {
        rate: f64,
        max_depth: usize,
        n_trees: usize,
        subsample: f64,
    },
    Mlp {
        activation: Activation,
        alpha: f64,
        batch: usize,
        rate: f64,
    },
}

impl ModelParams {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ModelParams::Logistic { .. } => Algorithm::Logistic,
            ModelParams::RandomForest { .. } => Algorithm::RandomForest,
            ModelParams::GradientBoost { .. } => Algorithm::GradientBoost,
            ModelParams::Mlp { .. } => Algorithm::Mlp,
        }
    }

    /// Compact human-readable form for logs and reports.
    pub fn describe(&self) -> String {
        match self {
            ModelParams::Logistic { strength, penalty } => {
                format!("logistic(strength={strength}, penalty={})", penalty.as_str())
            }
            ModelParams::RandomForest { n_trees, max_depth } => match max_depth {
                Some(d) => format!("random_forest(trees={n_trees}, depth={d})"),
                None => format!("random_forest(trees={n_trees}, depth=unlimited)"),
            },
            ModelParams::GradientBoost { rate, max_depth, n_trees, subsample } => format!(
                "gradient_boost(rate={rate}, depth={max_depth}, trees={n_trees}, subsample={subsample})"
            ),
            ModelParams::Mlp { activation, alpha, batch, rate } => format!(
                "mlp(activation={}, alpha={alpha}, batch={batch}, rate={rate})",
                activation.as_str()
            ),
        }
    }
}

/// Hyperparameters plus the seed that makes the fit reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub params: ModelParams,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Logistic(LogisticModel),
    Forest(ForestModel),
    Boost(BoostModel),
    Mlp(MlpModel),
}

impl TrainedModel {
    pub fn fit(
        spec: &ModelSpec,
        x: &[[f64; FEATURE_COUNT]],
        y: &[u8],
    ) -> Result<TrainedModel, LearnError> {
        match &spec.params {
            ModelParams::Logistic { strength, penalty } => Ok(TrainedModel::Logistic(
                LogisticModel::fit(x, y, *strength, *penalty)?,
            )),
            ModelParams::RandomForest { n_trees, max_depth } => Ok(TrainedModel::Forest(
                ForestModel::fit(x, y, *n_trees, *max_depth, spec.seed)?,
            )),
            ModelParams::GradientBoost {
                rate,
                max_depth,
                n_trees,
                subsample,
            } => Ok(TrainedModel::Boost(BoostModel::fit(
                x, y, *rate, *max_depth, *n_trees, *subsample, spec.seed,
            )?)),
            ModelParams::Mlp {
                activation,
                alpha,
                batch,
                rate,
            } => Ok(TrainedModel::Mlp(MlpModel::fit(
                x,
                y,
                *activation,
                *alpha,
                *batch,
                *rate,
                spec.seed,
            )?)),
        }
    }

    pub fn score_row(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        match self {
            TrainedModel::Logistic(m) => m.score_row(x),
            TrainedModel::Forest(m) => m.score_row(x),
            TrainedModel::Boost(m) => m.score_row(x),
            TrainedModel::Mlp(m) => m.score_row(x),
        }
    }

    pub fn score_rows(&self, x: &[[f64; FEATURE_COUNT]]) -> Vec<f64> {
        x.iter().map(|row| self.score_row(row)).collect()
    }
}

/// Named random-forest importances, descending; ties break on feature
/// order. Errors for the other model families.
pub fn rf_importance(model: &TrainedModel) -> Result<Vec<(&'static str, f64)>, LearnError> {
    let forest = match model {
        TrainedModel::Forest(m) => m,
        _ => return Err(LearnError::NotAForest),
    };
    let mut named: Vec<(&'static str, f64)> = FEATURE_NAMES
        .iter()
        .copied()
        .zip(forest.importance().iter().copied())
        .collect();
    named.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(named)
}
