//! The modeling dataset: one row per matched sample with the 14 features
//! and the binary target, plus CSV round-tripping and a per-feature
//! summary for run logs.

use std::collections::BTreeMap;
use std::io;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::detector_db::DetectorDB;
use crate::features::{
    self, Extraction, FeatureError, WeatherTimeline, FEATURE_COUNT, FEATURE_NAMES,
};
use crate::geo::Direction;
use crate::incident::MatchedSample;
use crate::trajectory::DetectorTrajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub trip_id: String,
    pub event_id: String,
    pub features: [f64; FEATURE_COUNT],
    pub target: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample references unknown trip {0}")]
    UnknownTrip(String),
    #[error("no detector database for direction {0}")]
    MissingDb(Direction),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(affected, normal)` row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.target == 1).count();
        (pos, self.rows.len() - pos)
    }

    pub fn targets(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.target).collect()
    }

    /// Writes `trip_id,event_id,ms1,...,rain,target`. Floats print in
    /// shortest round-trip form, so read-back is bit-exact.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["trip_id", "event_id"];
        header.extend_from_slice(&FEATURE_NAMES);
        header.push("target");
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = Vec::with_capacity(FEATURE_COUNT + 3);
            rec.push(row.trip_id.clone());
            rec.push(row.event_id.clone());
            for v in &row.features {
                rec.push(format!("{v}"));
            }
            rec.push(row.target.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(r: R) -> Result<Dataset, DatasetError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2; // header is line 1
            if rec.len() != FEATURE_COUNT + 3 {
                return Err(DatasetError::Parse {
                    line,
                    msg: format!("expected {} fields, got {}", FEATURE_COUNT + 3, rec.len()),
                });
            }
            let mut features = [0.0; FEATURE_COUNT];
            for (k, f) in features.iter_mut().enumerate() {
                *f = rec[k + 2].parse().map_err(|e| DatasetError::Parse {
                    line,
                    msg: format!("feature {}: {e}", FEATURE_NAMES[k]),
                })?;
            }
            let target: u8 = rec[FEATURE_COUNT + 2]
                .parse()
                .map_err(|e| DatasetError::Parse {
                    line,
                    msg: format!("target: {e}"),
                })?;
            if target > 1 {
                return Err(DatasetError::Parse {
                    line,
                    msg: format!("target must be 0/1, got {target}"),
                });
            }
            rows.push(DatasetRow {
                trip_id: rec[0].to_string(),
                event_id: rec[1].to_string(),
                features,
                target,
            });
        }
        Ok(Dataset { rows })
    }

    /// Per-feature mean/std/min/max over all rows.
    pub fn summary(&self) -> Vec<FeatureSummary> {
        (0..FEATURE_COUNT)
            .map(|k| {
                let vals: Vec<f64> = self.rows.iter().map(|r| r.features[k]).collect();
                let n = vals.len() as f64;
                let mean = if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / n
                };
                let std = if vals.len() >= 2 {
                    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                FeatureSummary {
                    feature: FEATURE_NAMES[k].to_string(),
                    mean,
                    std,
                    min: vals.iter().cloned().fold(f64::INFINITY, f64::min),
                    max: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSummary {
    pub feature: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Dataset assembly output with aggregated extraction warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub dataset: Dataset,
    pub weather_missing: usize,
    pub hist_fallbacks: u64,
}

/// Extracts features for every matched sample, in input order. Trajectories
/// are located by trip id; the database matching the trajectory's
/// direction serves the historical lookups.
pub fn build_dataset(
    samples: &[MatchedSample],
    trajectories: &[DetectorTrajectory],
    dbs: &BTreeMap<Direction, DetectorDB>,
    weather: &WeatherTimeline,
    tz_offset_hours: f64,
) -> Result<BuildOutput, DatasetError> {
    let by_id: BTreeMap<&str, &DetectorTrajectory> = trajectories
        .iter()
        .map(|t| (t.trip_id.as_str(), t))
        .collect();

    let extracted: Vec<(DatasetRow, Extraction)> = samples
        .par_iter()
        .map(|s| {
            let traj = *by_id
                .get(s.trip_id.as_str())
                .ok_or_else(|| DatasetError::UnknownTrip(s.trip_id.clone()))?;
            let db = dbs
                .get(&traj.direction)
                .ok_or(DatasetError::MissingDb(traj.direction))?;
            let ext = features::extract_features(s, traj, db, weather, tz_offset_hours)?;
            let row = DatasetRow {
                trip_id: s.trip_id.clone(),
                event_id: s.event_id.clone(),
                features: ext.vector.to_array(),
                target: s.label.target(),
            };
            Ok((row, ext))
        })
        .collect::<Result<_, DatasetError>>()?;

    let mut out = BuildOutput {
        dataset: Dataset::default(),
        weather_missing: 0,
        hist_fallbacks: 0,
    };
    for (row, ext) in extracted {
        out.weather_missing += ext.weather_missing as usize;
        out.hist_fallbacks += ext.hist_fallbacks as u64;
        out.dataset.rows.push(row);
    }
    Ok(out)
}
