use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use vdet_cli::config::RunConfig;
use vdet_cli::{pipeline, plots};
use vdet_core::dataset::Dataset;
use vdet_core::synth::{generate_scenario, study_preset, ScenarioConfig};

/// Virtual-detector incident pipeline: synthetic corpora, trajectory
/// processing, and cross-validated incident classifiers.
#[derive(Parser)]
#[command(name = "vdet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario (corridor, trajectories, incidents,
    /// weather, ground truth) into a directory.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// Base RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Queue speed reduction in [0, 1]; 0 removes the signal.
        #[arg(long)]
        speed_drop: Option<f64>,
        #[arg(long)]
        vehicles: Option<usize>,
        #[arg(long)]
        incidents: Option<usize>,
        #[arg(long)]
        horizon_hours: Option<f64>,
        #[arg(long)]
        corridor_miles: Option<f64>,
    },
    /// Parse and convert the configured inputs, reporting what was read.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        /// key=value config overrides, repeatable.
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Run the full pipeline and write artifacts plus report.json.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Re-run cross-validation on an existing dataset.csv artifact.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding dataset.csv; receives cv_results.json.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Summarize a run's report.json on stdout.
    Report {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Emit plot-ready CSVs from a completed run.
    PlotData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth {
            out_dir,
            seed,
            speed_drop,
            vehicles,
            incidents,
            horizon_hours,
            corridor_miles,
        } => {
            let mut cfg: ScenarioConfig = study_preset();
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = speed_drop {
                cfg.speed_drop = v;
            }
            if let Some(v) = vehicles {
                cfg.n_vehicles = v;
            }
            if let Some(v) = incidents {
                cfg.n_incidents = v;
            }
            if let Some(v) = horizon_hours {
                cfg.horizon_hours = v;
            }
            if let Some(v) = corridor_miles {
                cfg.corridor_length_miles = v;
            }
            let bundle = generate_scenario(&cfg).context("generating scenario")?;
            pipeline::write_bundle(&out_dir, &bundle)?;
            let s = &bundle.summary;
            println!(
                "wrote {} fixes, {} trips, {} samples ({} affected / {} normal) to {}",
                s.n_points,
                s.n_trips,
                s.n_samples,
                s.n_affected,
                s.n_normal,
                out_dir.display()
            );
            Ok(())
        }
        Command::Ingest { config, set } => {
            let cfg = RunConfig::load(&config, &set)?;
            let inputs = pipeline::load_inputs(&cfg)?;
            let conv = inputs.corridors.conversion();
            println!(
                "reference ({}, {}), radius {} yd",
                conv.reference_lat, conv.reference_lon, conv.earth_radius_yd
            );
            for (dir, dets) in &inputs.corridors.detectors {
                println!(
                    "{}: {:.1} yd corridor, {} detectors",
                    dir.as_str(),
                    inputs.corridors.geometry[dir].total_length(),
                    dets.len()
                );
            }
            println!(
                "{} fixes from {} vehicles, {} incidents, {} weather intervals",
                inputs.points.len(),
                pipeline::count_vehicles(&inputs.points),
                inputs.incidents.len(),
                inputs.weather.intervals().len()
            );
            Ok(())
        }
        Command::Pipeline {
            config,
            out_dir,
            set,
        } => {
            let cfg = RunConfig::load(&config, &set)?;
            let report = pipeline::run_pipeline(&cfg, &out_dir)?;
            print_report(&report);
            println!("artifacts in {}", out_dir.display());
            Ok(())
        }
        Command::Train {
            config,
            out_dir,
            set,
        } => {
            let cfg = RunConfig::load(&config, &set)?;
            let bytes = std::fs::read(out_dir.join("dataset.csv"))
                .with_context(|| format!("reading {}", out_dir.join("dataset.csv").display()))?;
            let dataset = Dataset::read_csv(bytes.as_slice()).context("parsing dataset.csv")?;
            let cv = pipeline::train(&cfg, &dataset)?;
            let json = serde_json::to_string_pretty(&cv).context("serializing cv results")?;
            std::fs::write(out_dir.join("cv_results.json"), json + "\n")
                .context("writing cv_results.json")?;
            for r in &cv {
                println!(
                    "{:>14} smote={:<5} auc {:.3}±{:.3} recall {:.3} far {:.3}",
                    r.algorithm.as_str(),
                    r.smote_ratio.map_or("none".to_string(), |v| v.to_string()),
                    r.mean_auc,
                    r.std_auc,
                    r.mean_recall,
                    r.mean_far
                );
            }
            Ok(())
        }
        Command::Report { out_dir } => {
            let text = std::fs::read_to_string(out_dir.join("report.json"))
                .with_context(|| format!("reading {}", out_dir.join("report.json").display()))?;
            let report: pipeline::RunReport =
                serde_json::from_str(&text).context("parsing report.json")?;
            print_report(&report);
            Ok(())
        }
        Command::PlotData {
            config,
            out_dir,
            set,
        } => {
            let cfg = RunConfig::load(&config, &set)?;
            let written = plots::emit_plots(&cfg, &out_dir)?;
            println!(
                "wrote {} plot files to {}",
                written.len(),
                out_dir.join("plots").display()
            );
            Ok(())
        }
    }
}

fn print_report(report: &pipeline::RunReport) {
    let c = &report.counts;
    println!(
        "points {} (kept {}, filtered {}) | vehicles {} | trips {} -> {} resampled",
        c.points_in, c.points_kept, c.points_filtered, c.vehicles, c.trips, c.det_trajectories
    );
    println!(
        "incidents {} matched / {} rejected | samples {} ({} affected, {} normal), discards {}",
        c.incidents_matched,
        c.incidents_off_corridor,
        c.samples,
        c.affected,
        c.normal,
        c.discards_outside_window + c.discards_insufficient_upstream
    );
    for r in &report.cv {
        println!(
            "{:>14} smote={:<5} auc {:.3}±{:.3} recall {:.3} far {:.3} J {:.3}",
            r.algorithm.as_str(),
            r.smote_ratio.map_or("none".to_string(), |v| v.to_string()),
            r.mean_auc,
            r.std_auc,
            r.mean_recall,
            r.mean_far,
            r.mean_youden_j
        );
    }
    if let Some(top) = report.importance.first() {
        println!("top feature: {} ({:.3})", top.feature, top.weight);
    }
    println!("{} artifacts hashed in manifest", report.manifest.len());
}
