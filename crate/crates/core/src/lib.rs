//! Highway incident detection from probe-vehicle trajectories.
//!
//! The pipeline converts irregular GPS traces into trajectories sampled at
//! fixed "virtual detector" positions along a corridor, matches them
//! spatio-temporally against lane-closing incident records, extracts
//! per-detector-set speed/heading features, rebalances the minority class
//! with SMOTE, and evaluates four from-scratch classifiers under stratified
//! cross-validation with Youden-index threshold selection.
//!
//! Modules follow the data flow:
//!
//! - [`geo`]: corridor polylines, linear referencing, detector placement
//! - [`trajectory`]: point filtering, trip segmentation, detector resampling
//! - [`detector_db`]: historical per-detector speed statistics
//! - [`incident`]: incident records and spatial-temporal matching
//! - [`features`] / [`dataset`]: feature vectors and the modeling matrix
//! - [`sampling`]: SMOTE oversampling
//! - [`learn`]: classifiers, grid search, cross-validated evaluation
//! - [`metrics`]: recall / false-alarm rate / ROC / Youden threshold
//! - [`synth`]: seeded synthetic scenario generation

pub mod angle;
pub mod dataset;
pub mod detector_db;
pub mod features;
pub mod geo;
pub mod incident;
pub mod learn;
pub mod metrics;
pub mod sampling;
pub mod synth;
pub mod trajectory;

/// Splitmix64-style stream derivation: stable way to spawn independent
/// RNG seeds from a base seed and a task index, so parallel schedules
/// cannot change which stream a task sees.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
