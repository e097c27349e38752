//! End-to-end flow checks wiring the generator, ingest, pipeline and CLI
//! binary together on small corpora.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use tempfile::tempdir;

use vdet_cli::config::GridPreset;
use vdet_cli::pipeline;
use vdet_core::synth::{generate_scenario, study_preset, ScenarioConfig};

fn small_scenario(seed: u64) -> ScenarioConfig {
    let mut cfg = study_preset();
    cfg.corridor_length_miles = 6.0;
    cfg.n_vehicles = 500;
    cfg.n_incidents = 64;
    cfg.horizon_hours = 160.0;
    cfg.seed = seed;
    cfg
}

/// The generator labels its own corpus with the same matcher the pipeline
/// runs, so re-ingesting the emitted CSVs must reproduce the ground truth
/// exactly: same (trip, event) pairs, same labels.
#[test]
fn ground_truth_survives_the_round_trip() {
    let bundle = generate_scenario(&small_scenario(31)).unwrap();
    let dir = tempdir().unwrap();
    pipeline::write_bundle(dir.path(), &bundle).unwrap();

    let cfg = pipeline::config_for_bundle(dir.path());
    let assembled = pipeline::assemble(&cfg, pipeline::load_inputs(&cfg).unwrap()).unwrap();

    let mut expected = BTreeSet::new();
    for line in bundle.ground_truth_csv.lines().skip(1) {
        let mut cols = line.split(',');
        expected.insert((
            cols.next().unwrap().to_string(),
            cols.next().unwrap().to_string(),
            cols.next().unwrap().to_string(),
        ));
    }
    assert!(!expected.is_empty());

    let got: BTreeSet<(String, String, String)> = assembled
        .matched
        .samples
        .iter()
        .map(|s| {
            (
                s.trip_id.clone(),
                s.event_id.clone(),
                s.label.as_str().to_string(),
            )
        })
        .collect();
    assert_eq!(got, expected);
    assert_eq!(assembled.dataset.len(), got.len());
}

#[test]
fn report_covers_the_full_grid() {
    let bundle = generate_scenario(&small_scenario(8)).unwrap();
    let dir = tempdir().unwrap();
    let bundle_dir = dir.path().join("bundle");
    pipeline::write_bundle(&bundle_dir, &bundle).unwrap();

    let mut cfg = pipeline::config_for_bundle(&bundle_dir);
    cfg.grid = GridPreset::Quick;
    let out = dir.path().join("run");
    let report = pipeline::run_pipeline(&cfg, &out).unwrap();

    // 4 algorithms x 4 balancing settings, in declaration order.
    assert_eq!(report.cv.len(), 16);
    let mut seen = BTreeSet::new();
    for r in &report.cv {
        seen.insert((r.algorithm, r.smote_ratio.map(|v| v.to_bits())));
        assert!(r.mean_auc.is_finite() && (0.0..=1.0).contains(&r.mean_auc));
        assert_eq!(r.folds.len(), cfg.folds);
    }
    assert_eq!(seen.len(), 16, "every (algorithm, ratio) cell is distinct");

    for name in [
        "detectors",
        "trips",
        "passes",
        "db",
        "samples",
        "discards",
        "dataset",
    ] {
        let file = format!("{name}.csv");
        assert!(report.manifest.contains_key(&file), "manifest lacks {file}");
        assert!(out.join(&file).is_file(), "{file} missing on disk");
    }
    assert!(out.join("report.json").is_file());
    assert_eq!(report.importance.len(), 14);

    // The echoed configuration must reflect what actually ran.
    assert_eq!(report.config.get("grid").map(String::as_str), Some("quick"));
    assert_eq!(report.config.get("folds").map(String::as_str), Some("5"));
}

#[test]
fn cli_binary_runs_the_whole_flow() {
    let dir = tempdir().unwrap();
    let bundle_dir = dir.path().join("bundle");
    let run_dir = dir.path().join("run");
    let bin = env!("CARGO_BIN_EXE_vdet");

    let synth = Command::new(bin)
        .args(["synth", "--out-dir"])
        .arg(&bundle_dir)
        .args(["--seed", "9", "--vehicles", "400", "--incidents", "48"])
        .args(["--horizon-hours", "120", "--corridor-miles", "5"])
        .output()
        .unwrap();
    assert!(
        synth.status.success(),
        "synth: {}",
        String::from_utf8_lossy(&synth.stderr)
    );

    let config_path = dir.path().join("run.conf");
    let config_text = format!(
        "corridor = {d}/corridor.csv\ntrajectories = {d}/trajectories.csv\n\
         incidents = {d}/incidents.csv\nweather = {d}/weather.csv\n\
         grid = quick\nalgorithms = rf\nsmote_ratios = none\nseed = 9\n",
        d = bundle_dir.display()
    );
    std::fs::write(&config_path, config_text).unwrap();

    let run = Command::new(bin)
        .args(["pipeline", "--config"])
        .arg(&config_path)
        .arg("--out-dir")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "pipeline: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(
        stdout.contains("random_forest"),
        "pipeline stdout: {stdout}"
    );
    assert!(run_dir.join("report.json").is_file());

    let report = Command::new(bin)
        .args(["report", "--out-dir"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("top feature"));

    let plots = Command::new(bin)
        .args(["plot-data", "--config"])
        .arg(&config_path)
        .arg("--out-dir")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(
        plots.status.success(),
        "plot-data: {}",
        String::from_utf8_lossy(&plots.stderr)
    );
    for name in [
        "incident_durations.csv",
        "incident_breakdowns.csv",
        "detector_profile.csv",
        "event_speed_profile.csv",
        "model_metrics.csv",
        "feature_importance.csv",
    ] {
        assert!(
            run_dir.join("plots").join(name).is_file(),
            "missing plot file {name}"
        );
    }
}

#[test]
fn empty_inputs_fail_with_the_ingest_stage_named() {
    let bundle = generate_scenario(&small_scenario(5)).unwrap();
    let dir = tempdir().unwrap();
    pipeline::write_bundle(dir.path(), &bundle).unwrap();
    std::fs::write(
        dir.path().join("trajectories.csv"),
        "vehicle_id,t,lat,lon,speed,heading\n",
    )
    .unwrap();

    let cfg = pipeline::config_for_bundle(dir.path());
    let err = pipeline::run_pipeline(&cfg, &dir.path().join("out")).unwrap_err();
    let chain = format!("{err:#}");
    assert!(
        chain.contains("ingest"),
        "error should name the stage: {chain}"
    );

    // A bad config key fails before any file is touched.
    let missing = Path::new("/nonexistent/prefix/inputs.csv");
    let mut bad = pipeline::config_for_bundle(dir.path());
    bad.trajectories = missing.to_path_buf();
    let err = pipeline::run_pipeline(&bad, &dir.path().join("out2")).unwrap_err();
    assert!(format!("{err:#}").contains("inputs.csv"));
}
