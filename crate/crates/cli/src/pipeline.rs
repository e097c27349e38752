//! End-to-end run orchestration: ingest, corridor filtering, trip
//! segmentation, detector resampling, profile database construction,
//! incident matching, feature extraction, and the cross-validated model
//! grid. Every stage reports counts that must reconcile, and every
//! artifact lands in the output directory with a content hash in the run
//! report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vdet_core::dataset::{build_dataset, Dataset};
use vdet_core::derive_seed;
use vdet_core::detector_db::{self, build_db_parallel, DetectorDB};
use vdet_core::features::{WeatherTimeline, FEATURE_NAMES};
use vdet_core::geo::Direction;
use vdet_core::incident::{
    label_trajectories, match_event_detector, DiscardReason, Incident, MatchOutput,
};
use vdet_core::learn::search::{default_grid, grid_search_cv, CvResult};
use vdet_core::learn::{forest::ForestModel, Activation, Algorithm, ModelParams, Penalty};
use vdet_core::sampling::SmoteConfig;
use vdet_core::synth::ScenarioBundle;
use vdet_core::trajectory::{segment_trips, DetectorTrajectory, RawPoint, TrajectoryError, Trip};

use crate::config::{GridPreset, RunConfig};
use crate::ingest::{self, Conversion, Corridors};

// RNG stream tags for run-level seeds; disjoint from the tag spaces the
// core generator and search harness carve out of their own seeds.
const SMOTE_STREAM: u64 = 1 << 52;
const TRAIN_STREAM: u64 = 2 << 52;
const IMPORTANCE_STREAM: u64 = 3 << 52;

/// Everything read from disk, already in the planar frame.
pub struct Inputs {
    pub corridors: Corridors,
    pub points: Vec<RawPoint>,
    pub incidents: Vec<Incident>,
    pub weather: WeatherTimeline,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let corridors =
        ingest::load_corridor(&cfg.corridor, cfg.spacing_yd).context("ingest: corridor")?;
    let points = ingest::load_trajectories(&cfg.trajectories, corridors.reference)
        .context("ingest: trajectories")?;
    if points.is_empty() {
        bail!(
            "ingest: trajectory file {} has no fixes",
            cfg.trajectories.display()
        );
    }
    let incidents =
        ingest::load_incidents(&cfg.incidents, corridors.reference).context("ingest: incidents")?;
    let weather = ingest::load_weather(&cfg.weather).context("ingest: weather")?;
    Ok(Inputs {
        corridors,
        points,
        incidents,
        weather,
    })
}

/// Stage-by-stage accounting. The identities checked by
/// [`StageCounts::check`] hold for every successful run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub points_in: usize,
    pub points_kept: usize,
    pub points_filtered: usize,
    pub vehicles: usize,
    pub duplicate_points_dropped: usize,
    pub short_groups_dropped: usize,
    pub ambiguous_direction_groups: usize,
    pub trips: usize,
    pub det_trajectories: usize,
    pub trips_rejected: usize,
    pub rejection_reasons: BTreeMap<String, usize>,
    pub incidents_in: usize,
    pub incidents_matched: usize,
    pub incidents_off_corridor: usize,
    pub samples: usize,
    pub affected: usize,
    pub normal: usize,
    pub discards_outside_window: usize,
    pub discards_insufficient_upstream: usize,
    pub trips_with_multiple_events: usize,
    pub max_events_per_trip: usize,
    pub dataset_rows: usize,
    pub weather_missing: usize,
    pub hist_fallbacks: u64,
}

impl StageCounts {
    pub fn check(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.points_in != self.points_kept + self.points_filtered {
            problems.push("point conservation");
        }
        if self.trips != self.det_trajectories + self.trips_rejected {
            problems.push("trip conservation");
        }
        if self.samples != self.affected + self.normal {
            problems.push("label conservation");
        }
        if self.dataset_rows != self.samples {
            problems.push("dataset row conservation");
        }
        if self.incidents_in != self.incidents_matched + self.incidents_off_corridor {
            problems.push("incident conservation");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            bail!("internal accounting violated: {}", problems.join(", "))
        }
    }
}

/// Output of the data-preparation stages, before any model training.
pub struct Assembled {
    pub corridors: Corridors,
    pub trips: Vec<Trip>,
    pub det_trajs: Vec<DetectorTrajectory>,
    pub dbs: BTreeMap<Direction, DetectorDB>,
    pub incident_pairs: Vec<(Incident, u32)>,
    pub incidents_rejected: Vec<String>,
    pub matched: MatchOutput,
    pub weather: WeatherTimeline,
    pub dataset: Dataset,
    pub counts: StageCounts,
}

fn rejection_tag(err: &TrajectoryError) -> &'static str {
    match err {
        TrajectoryError::NoPoints => "no_points",
        TrajectoryError::AmbiguousDirection => "ambiguous_direction",
        TrajectoryError::DegenerateSpan => "degenerate_span",
        TrajectoryError::ExcessBackwardMotion { .. } => "excess_backward_motion",
    }
}

/// Runs corridor filtering through feature extraction.
pub fn assemble(cfg: &RunConfig, inputs: Inputs) -> Result<Assembled> {
    let Inputs {
        corridors,
        points,
        incidents,
        weather,
    } = inputs;
    let mut counts = StageCounts {
        points_in: points.len(),
        ..Default::default()
    };

    // Corridor filter: keep fixes within tolerance of either direction's
    // polyline.
    let kept: Vec<RawPoint> = points
        .into_par_iter()
        .filter(|p| {
            corridors
                .geometry
                .values()
                .any(|corr| corr.project(&p.pos).offset <= cfg.max_offset_yd)
        })
        .collect();
    counts.points_kept = kept.len();
    counts.points_filtered = counts.points_in - counts.points_kept;

    // Segmentation, per vehicle.
    let mut by_vehicle: BTreeMap<String, Vec<RawPoint>> = BTreeMap::new();
    for p in kept {
        by_vehicle.entry(p.vehicle_id.clone()).or_default().push(p);
    }
    counts.vehicles = by_vehicle.len();
    let groups: Vec<Vec<RawPoint>> = by_vehicle.into_values().collect();
    let segmented: Vec<_> = groups
        .into_par_iter()
        .map(|pts| segment_trips(pts, cfg.gap_s))
        .collect();
    let mut trips = Vec::new();
    for seg in segmented {
        counts.duplicate_points_dropped += seg.duplicate_points_dropped;
        counts.short_groups_dropped += seg.short_groups_dropped;
        counts.ambiguous_direction_groups += seg.ambiguous_direction_groups;
        trips.extend(seg.trips);
    }
    counts.trips = trips.len();

    // Detector resampling.
    let resampled: Vec<Result<DetectorTrajectory, TrajectoryError>> = trips
        .par_iter()
        .map(|trip| {
            let corr = &corridors.geometry[&trip.direction];
            let dets = &corridors.detectors[&trip.direction];
            vdet_core::trajectory::interpolate_to_detectors(trip, corr, dets)
        })
        .collect();
    let mut det_trajs = Vec::with_capacity(resampled.len());
    for r in resampled {
        match r {
            Ok(t) => det_trajs.push(t),
            Err(e) => {
                counts.trips_rejected += 1;
                *counts
                    .rejection_reasons
                    .entry(rejection_tag(&e).to_string())
                    .or_default() += 1;
            }
        }
    }
    counts.det_trajectories = det_trajs.len();

    // Historical profile database per direction.
    let mut dbs = BTreeMap::new();
    for &dir in corridors.geometry.keys() {
        let of_dir: Vec<DetectorTrajectory> = det_trajs
            .iter()
            .filter(|t| t.direction == dir)
            .cloned()
            .collect();
        if !of_dir.is_empty() {
            dbs.insert(dir, build_db_parallel(dir, &of_dir, cfg.tz_offset_hours));
        }
    }

    // Incident to event-detector matching.
    counts.incidents_in = incidents.len();
    let mut incident_pairs = Vec::new();
    let mut incidents_rejected = Vec::new();
    for inc in incidents {
        let corr = match corridors.geometry.get(&inc.direction) {
            Some(c) => c,
            None => {
                incidents_rejected.push(inc.event_id.clone());
                continue;
            }
        };
        match match_event_detector(
            &inc,
            corr,
            &corridors.detectors[&inc.direction],
            cfg.max_offset_yd,
        ) {
            Ok(det) => incident_pairs.push((inc, det)),
            Err(_) => incidents_rejected.push(inc.event_id.clone()),
        }
    }
    counts.incidents_matched = incident_pairs.len();
    counts.incidents_off_corridor = incidents_rejected.len();

    // Window labeling.
    let matched = label_trajectories(
        &incident_pairs,
        &det_trajs,
        cfg.pre_window_s,
        cfg.post_window_s,
        cfg.upstream_req,
    );
    counts.samples = matched.samples.len();
    counts.affected = matched
        .samples
        .iter()
        .filter(|s| s.label.target() == 1)
        .count();
    counts.normal = counts.samples - counts.affected;
    counts.discards_outside_window = matched
        .discards
        .iter()
        .filter(|d| d.reason == DiscardReason::OutsideWindow)
        .count();
    counts.discards_insufficient_upstream = matched.discards.len() - counts.discards_outside_window;
    counts.trips_with_multiple_events = matched.trips_with_multiple_events;
    counts.max_events_per_trip = matched.max_events_per_trip;

    // Feature extraction.
    let built = build_dataset(
        &matched.samples,
        &det_trajs,
        &dbs,
        &weather,
        cfg.tz_offset_hours,
    )
    .context("features: extracting matched samples")?;
    counts.dataset_rows = built.dataset.len();
    counts.weather_missing = built.weather_missing;
    counts.hist_fallbacks = built.hist_fallbacks;

    counts.check()?;
    Ok(Assembled {
        corridors,
        trips,
        det_trajs,
        dbs,
        incident_pairs,
        incidents_rejected,
        matched,
        weather,
        dataset: built.dataset,
        counts,
    })
}

/// One hyperparameter point per algorithm, for smoke runs.
pub fn quick_grid(algorithm: Algorithm) -> Vec<ModelParams> {
    match algorithm {
        Algorithm::Logistic => vec![ModelParams::Logistic {
            strength: 1.0,
            penalty: Penalty::L2,
        }],
        Algorithm::RandomForest => {
            vec![ModelParams::RandomForest {
                n_trees: 50,
                max_depth: Some(8),
            }]
        }
        Algorithm::GradientBoost => vec![ModelParams::GradientBoost {
            rate: 0.1,
            max_depth: 3,
            n_trees: 50,
            subsample: 1.0,
        }],
        Algorithm::Mlp => vec![ModelParams::Mlp {
            activation: Activation::Relu,
            alpha: 1e-4,
            batch: 32,
            rate: 1e-2,
        }],
    }
}

/// Cross-validates every (algorithm, balancing) cell of the run config.
pub fn train(cfg: &RunConfig, dataset: &Dataset) -> Result<Vec<CvResult>> {
    let mut results = Vec::new();
    for (ai, &algo) in cfg.algorithms.iter().enumerate() {
        let grid = match cfg.grid {
            GridPreset::Default => default_grid(algo),
            GridPreset::Quick => quick_grid(algo),
        };
        for (ri, ratio) in cfg.smote_ratios.iter().enumerate() {
            let cell = (ai * cfg.smote_ratios.len() + ri) as u64;
            let balancing = ratio.map(|r| SmoteConfig {
                ratio: r,
                k: cfg.smote_k,
                seed: derive_seed(cfg.seed, SMOTE_STREAM | cell),
            });
            let result = grid_search_cv(
                &grid,
                dataset,
                balancing.as_ref(),
                cfg.folds,
                derive_seed(cfg.seed, TRAIN_STREAM | cell),
            )
            .with_context(|| {
                format!(
                    "train: {} with balancing {}",
                    algo.as_str(),
                    ratio.map_or("none".to_string(), |r| r.to_string())
                )
            })?;
            results.push(result);
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImportanceEntry {
    pub feature: String,
    pub weight: f64,
}

/// Reference forest fit on the full dataset for the importance table.
pub fn importance_table(cfg: &RunConfig, dataset: &Dataset) -> Result<Vec<ImportanceEntry>> {
    let x: Vec<[f64; 14]> = dataset.rows.iter().map(|r| r.features).collect();
    let y = dataset.targets();
    let forest = ForestModel::fit(&x, &y, 300, None, derive_seed(cfg.seed, IMPORTANCE_STREAM))
        .context("train: importance forest")?;
    let mut entries: Vec<ImportanceEntry> = FEATURE_NAMES
        .iter()
        .zip(forest.importance())
        .map(|(name, &weight)| ImportanceEntry {
            feature: name.to_string(),
            weight,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.feature.cmp(&b.feature))
    });
    Ok(entries)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileDigest {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub config: BTreeMap<String, String>,
    pub conversion: Conversion,
    pub counts: StageCounts,
    pub incidents_rejected: Vec<String>,
    pub cv: Vec<CvResult>,
    pub importance: Vec<ImportanceEntry>,
    /// Content hashes of every artifact written beside the report.
    pub manifest: BTreeMap<String, FileDigest>,
}

fn write_artifact(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    manifest: &mut BTreeMap<String, FileDigest>,
) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    manifest.insert(
        name.to_string(),
        FileDigest {
            bytes: bytes.len() as u64,
            sha256: format!("{:x}", hasher.finalize()),
        },
    );
    Ok(())
}

fn detectors_csv(corridors: &Corridors) -> String {
    let mut out = String::from("direction,detector_id,chainage,x,y\n");
    for (dir, dets) in &corridors.detectors {
        for d in dets {
            writeln!(
                out,
                "{},{},{},{},{}",
                dir.as_str(),
                d.id,
                d.chainage,
                d.position.x,
                d.position.y
            )
            .unwrap();
        }
    }
    out
}

fn trips_csv(trips: &[Trip]) -> String {
    let mut out = String::from("trip_id,direction,n_points,t_first,t_last\n");
    for t in trips {
        writeln!(
            out,
            "{},{},{},{},{}",
            t.trip_id,
            t.direction.as_str(),
            t.points.len(),
            t.points.first().map_or(f64::NAN, |p| p.t),
            t.points.last().map_or(f64::NAN, |p| p.t),
        )
        .unwrap();
    }
    out
}

fn passes_csv(det_trajs: &[DetectorTrajectory]) -> String {
    let mut out = String::from("trip_id,direction,detector_id,pass_time,speed,heading\n");
    for t in det_trajs {
        for p in &t.passes {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                t.trip_id,
                t.direction.as_str(),
                p.detector_id,
                p.pass_time,
                p.speed,
                p.heading
            )
            .unwrap();
        }
    }
    out
}

fn samples_csv(matched: &MatchOutput) -> String {
    let mut out = String::from("event_id,trip_id,event_detector_id,label,coincide_time\n");
    for s in &matched.samples {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.event_id,
            s.trip_id,
            s.event_detector_id,
            s.label.as_str(),
            s.coincide_time
        )
        .unwrap();
    }
    out
}

fn discards_csv(matched: &MatchOutput) -> String {
    let mut out = String::from("event_id,trip_id,reason\n");
    for d in &matched.discards {
        let reason = match d.reason {
            DiscardReason::OutsideWindow => "outside_window",
            DiscardReason::InsufficientUpstream => "insufficient_upstream",
        };
        writeln!(out, "{},{},{}", d.event_id, d.trip_id, reason).unwrap();
    }
    out
}

/// Runs the full pipeline and writes every artifact into `out_dir`.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    if cfg.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .context("building thread pool")?;
        pool.install(|| run_pipeline_inner(cfg, out_dir))
    } else {
        run_pipeline_inner(cfg, out_dir)
    }
}

fn run_pipeline_inner(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let inputs = load_inputs(cfg)?;
    let assembled = assemble(cfg, inputs)?;
    let cv = train(cfg, &assembled.dataset)?;
    let importance = importance_table(cfg, &assembled.dataset)?;

    let mut manifest = BTreeMap::new();
    write_artifact(
        out_dir,
        "detectors.csv",
        detectors_csv(&assembled.corridors).as_bytes(),
        &mut manifest,
    )?;
    write_artifact(
        out_dir,
        "trips.csv",
        trips_csv(&assembled.trips).as_bytes(),
        &mut manifest,
    )?;
    write_artifact(
        out_dir,
        "passes.csv",
        passes_csv(&assembled.det_trajs).as_bytes(),
        &mut manifest,
    )?;

    let mut db_bytes = Vec::new();
    let db_refs: Vec<&DetectorDB> = assembled.dbs.values().collect();
    detector_db::write_csv(&db_refs, &mut db_bytes).context("write: db.csv")?;
    write_artifact(out_dir, "db.csv", &db_bytes, &mut manifest)?;

    write_artifact(
        out_dir,
        "samples.csv",
        samples_csv(&assembled.matched).as_bytes(),
        &mut manifest,
    )?;
    write_artifact(
        out_dir,
        "discards.csv",
        discards_csv(&assembled.matched).as_bytes(),
        &mut manifest,
    )?;

    let mut dataset_bytes = Vec::new();
    assembled
        .dataset
        .write_csv(&mut dataset_bytes)
        .context("write: dataset.csv")?;
    write_artifact(out_dir, "dataset.csv", &dataset_bytes, &mut manifest)?;

    let report = RunReport {
        config: cfg.echo(),
        conversion: assembled.corridors.conversion(),
        counts: assembled.counts.clone(),
        incidents_rejected: assembled.incidents_rejected.clone(),
        cv,
        importance,
        manifest,
    };
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    std::fs::write(out_dir.join("report.json"), json + "\n")
        .with_context(|| format!("writing {}", out_dir.join("report.json").display()))?;
    Ok(report)
}

/// Writes a generated scenario's files into `dir` with the names the
/// default config template points at.
pub fn write_bundle(dir: &Path, bundle: &ScenarioBundle) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files: [(&str, &str); 5] = [
        ("corridor.csv", &bundle.corridor_csv),
        ("trajectories.csv", &bundle.trajectory_csv),
        ("incidents.csv", &bundle.incident_csv),
        ("weather.csv", &bundle.weather_csv),
        ("ground_truth.csv", &bundle.ground_truth_csv),
    ];
    for (name, content) in files {
        std::fs::write(dir.join(name), content)
            .with_context(|| format!("writing {}", dir.join(name).display()))?;
    }
    let summary =
        serde_json::to_string_pretty(&bundle.summary).context("serializing scenario summary")?;
    std::fs::write(dir.join("summary.json"), summary + "\n").context("writing summary.json")?;
    Ok(())
}

/// Points a default config at a written bundle directory.
pub fn config_for_bundle(dir: &Path) -> RunConfig {
    RunConfig {
        corridor: dir.join("corridor.csv"),
        trajectories: dir.join("trajectories.csv"),
        incidents: dir.join("incidents.csv"),
        weather: dir.join("weather.csv"),
        ..RunConfig::default()
    }
}

/// Distinct vehicles named by a point set; used by callers reporting on
/// raw inputs.
pub fn count_vehicles(points: &[RawPoint]) -> usize {
    points
        .iter()
        .map(|p| p.vehicle_id.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_grids_are_singletons() {
        for algo in Algorithm::ALL {
            assert_eq!(quick_grid(algo).len(), 1, "{algo:?}");
        }
    }

    #[test]
    fn counts_check_catches_leaks() {
        let mut c = StageCounts {
            points_in: 10,
            points_kept: 6,
            points_filtered: 4,
            ..StageCounts::default()
        };
        assert!(c.check().is_ok());
        c.points_filtered = 3;
        let err = c.check().unwrap_err();
        assert!(err.to_string().contains("point conservation"));
    }
}
