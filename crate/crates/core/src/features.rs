//! Feature vectors for matched samples.
//!
//! A sample's trajectory is read at three sets of four consecutive
//! detectors upstream of the vehicle's reference position R, where R sits
//! four detectors (440 yd) upstream of the event detector E. Set 3 is the
//! block nearest the vehicle ({R .. R-3}), set 2 the next ({R-4 .. R-7}),
//! set 1 the farthest ({R-8 .. R-11}). Each set yields mean speed, speed
//! spread, historical mean speed, and heading change; peak and rain
//! binaries complete the 14-feature vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle;
use crate::detector_db::{classify_period, DbError, DetectorDB, Period};
use crate::incident::MatchedSample;
use crate::trajectory::{DetectorPass, DetectorTrajectory};

pub const FEATURE_COUNT: usize = 14;
/// First 12 columns are continuous; the trailing peak/rain are binary.
pub const CONTINUOUS_FEATURE_COUNT: usize = 12;
/// Column order of the exported dataset (and of `FeatureVector::to_array`).
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "ms1", "ss1", "hs1", "hc1", "ms2", "ss2", "hs2", "hc2", "ms3", "ss3", "hs3", "hc3", "peak",
    "rain",
];

/// Detectors between R and E, exclusive of both: the 440-yd downstream gap
/// expressed in 110-yd detector steps.
pub const DOWNSTREAM_GAP: u32 = 4;

/// Per-set aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetFeatures {
    pub mean_speed: f64,
    pub std_speed: f64,
    pub hist_mean_speed: f64,
    pub heading_change: f64,
}

/// The 14 features of one sample. `sets[0]` is set 1 (farthest upstream),
/// `sets[2]` is set 3 (at the vehicle).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sets: [SetFeatures; 3],
    pub peak: u8,
    pub rain: u8,
}

impl FeatureVector {
    /// Flattens to the dataset column order `ms1,ss1,hs1,hc1,...,peak,rain`.
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for (s, set) in self.sets.iter().enumerate() {
            out[4 * s] = set.mean_speed;
            out[4 * s + 1] = set.std_speed;
            out[4 * s + 2] = set.hist_mean_speed;
            out[4 * s + 3] = set.heading_change;
        }
        out[12] = self.peak as f64;
        out[13] = self.rain as f64;
        out
    }
}

/// Rain on/off over non-overlapping half-open time intervals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeatherTimeline {
    /// Sorted by start; `[start, end)`.
    intervals: Vec<WeatherInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherInterval {
    pub start: f64,
    pub end: f64,
    pub rain: bool,
}

impl WeatherTimeline {
    pub fn new(mut intervals: Vec<WeatherInterval>) -> Result<WeatherTimeline, FeatureError> {
        intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
        for w in intervals.windows(2) {
            if w[1].start < w[0].end {
                return Err(FeatureError::OverlappingWeather {
                    first_end: w[0].end,
                    second_start: w[1].start,
                });
            }
        }
        if intervals.iter().any(|iv| iv.end <= iv.start) {
            return Err(FeatureError::EmptyWeatherInterval);
        }
        Ok(WeatherTimeline { intervals })
    }

    pub fn intervals(&self) -> &[WeatherInterval] {
        &self.intervals
    }

    /// Rain flag at time `t`, or `None` when no interval covers it.
    pub fn rain_at(&self, t: f64) -> Option<bool> {
        let idx = self
            .intervals
            .partition_point(|iv| iv.start <= t)
            .checked_sub(1)?;
        let iv = &self.intervals[idx];
        (t < iv.end).then_some(iv.rain)
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("event detector {0} is too close to the grid origin for a feature window")]
    EventDetectorTooLow(u32),
    #[error("trajectory {trip_id} missing a pass at detector {detector_id}")]
    MissingPass { trip_id: String, detector_id: u32 },
    #[error("historical lookup failed: {0}")]
    Db(#[from] DbError),
    #[error("weather intervals overlap: one ends {first_end}, next starts {second_start}")]
    OverlappingWeather { first_end: f64, second_start: f64 },
    #[error("weather interval with non-positive length")]
    EmptyWeatherInterval,
    #[error("non-finite feature value for trip {trip_id}")]
    NonFinite { trip_id: String },
}

/// Detector ids of sets 1..3 for an event detector `e`. Element `[s-1]`
/// holds set `s` in ascending (travel) order.
pub fn set_detector_ids(e: u32) -> Result<[[u32; 4]; 3], FeatureError> {
    let r = e
        .checked_sub(DOWNSTREAM_GAP)
        .ok_or(FeatureError::EventDetectorTooLow(e))?;
    r.checked_sub(11)
        .ok_or(FeatureError::EventDetectorTooLow(e))?;
    let mut sets = [[0u32; 4]; 3];
    for (s, set) in sets.iter_mut().enumerate() {
        // Set 3 (index 2) abuts R; each earlier set is 4 detectors farther
        // upstream.
        let base = r - 4 * (2 - s as u32);
        for (k, id) in set.iter_mut().enumerate() {
            *id = base - 3 + k as u32;
        }
    }
    Ok(sets)
}

/// Extraction output: the vector plus the warnings the run report tallies.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub vector: FeatureVector,
    /// No weather interval covered the reference pass time; rain was 0.
    pub weather_missing: bool,
    /// Historical lookups that used the direction-wide fallback.
    pub hist_fallbacks: u32,
}

fn pass_at(traj: &DetectorTrajectory, detector_id: u32) -> Result<&DetectorPass, FeatureError> {
    traj.passes
        .binary_search_by_key(&detector_id, |p| p.detector_id)
        .map(|i| &traj.passes[i])
        .map_err(|_| FeatureError::MissingPass {
            trip_id: traj.trip_id.clone(),
            detector_id,
        })
}

/// Builds the 14-feature vector for one matched sample.
pub fn extract_features(
    sample: &MatchedSample,
    traj: &DetectorTrajectory,
    db: &DetectorDB,
    weather: &WeatherTimeline,
    tz_offset_hours: f64,
) -> Result<Extraction, FeatureError> {
    let sets = set_detector_ids(sample.event_detector_id)?;
    let r = sample.event_detector_id - DOWNSTREAM_GAP;
    let r_pass = pass_at(traj, r)?;
    let period = classify_period(r_pass.pass_time, tz_offset_hours);

    let mut hist_fallbacks = 0u32;
    let mut out_sets = [SetFeatures {
        mean_speed: 0.0,
        std_speed: 0.0,
        hist_mean_speed: 0.0,
        heading_change: 0.0,
    }; 3];

    for (s, ids) in sets.iter().enumerate() {
        let passes: Vec<&DetectorPass> = ids
            .iter()
            .map(|&id| pass_at(traj, id))
            .collect::<Result<_, _>>()?;

        let mean = passes.iter().map(|p| p.speed).sum::<f64>() / 4.0;
        let var = passes
            .iter()
            .map(|p| (p.speed - mean) * (p.speed - mean))
            .sum::<f64>()
            / 3.0;

        let mut hist_sum = 0.0;
        for &id in ids {
            let lookup = db.lookup_historical(id, period)?;
            if lookup.fallback {
                hist_fallbacks += 1;
            }
            hist_sum += lookup.stats.mean_speed;
        }

        let hc = passes
            .windows(2)
            .map(|w| angle::abs_diff_deg(w[0].heading, w[1].heading))
            .sum::<f64>()
            / 3.0;

        out_sets[s] = SetFeatures {
            mean_speed: mean,
            std_speed: var.max(0.0).sqrt(),
            hist_mean_speed: hist_sum / 4.0,
            heading_change: hc,
        };
    }

    let rain_flag = weather.rain_at(r_pass.pass_time);
    let vector = FeatureVector {
        sets: out_sets,
        peak: (period == Period::Peak) as u8,
        rain: rain_flag.unwrap_or(false) as u8,
    };
    if vector.to_array().iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite {
            trip_id: traj.trip_id.clone(),
        });
    }
    Ok(Extraction {
        vector,
        weather_missing: rain_flag.is_none(),
        hist_fallbacks,
    })
}
