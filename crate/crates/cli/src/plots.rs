//! Plot-ready data files derived from a completed run: incident
//! summaries, detector count/speed profiles, affected-vs-normal speed
//! traces around the event detector, model metric bars, and the feature
//! importance table. Each file starts with a `#` comment line describing
//! its columns; everything below it is plain CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use vdet_core::detector_db;
use vdet_core::features::DOWNSTREAM_GAP;
use vdet_core::incident::incident_summary;

use crate::config::RunConfig;
use crate::ingest;
use crate::pipeline::RunReport;

/// Upstream reach of the profile trace, in detectors before the event.
const PROFILE_UPSTREAM: i64 = 16;

fn read_run_file(run_dir: &Path, name: &str) -> Result<String> {
    std::fs::read_to_string(run_dir.join(name))
        .with_context(|| format!("missing run artifact {name} in {}", run_dir.display()))
}

/// Emits every plot file into `<run_dir>/plots`, returning the file names.
pub fn emit_plots(cfg: &RunConfig, run_dir: &Path) -> Result<Vec<String>> {
    let plots_dir = run_dir.join("plots");
    std::fs::create_dir_all(&plots_dir)
        .with_context(|| format!("creating {}", plots_dir.display()))?;

    let report: RunReport = serde_json::from_str(&read_run_file(run_dir, "report.json")?)
        .context("parsing report.json")?;

    let mut written = Vec::new();
    let mut emit = |name: &str, content: String| -> Result<()> {
        std::fs::write(plots_dir.join(name), content)
            .with_context(|| format!("writing plot {name}"))?;
        written.push(name.to_string());
        Ok(())
    };

    // Incident attribute summaries, from the configured incident file.
    let corridors = ingest::load_corridor(&cfg.corridor, cfg.spacing_yd)?;
    let incidents = ingest::load_incidents(&cfg.incidents, corridors.reference)?;
    let summary = incident_summary(&incidents);
    let mut s =
        String::from("# columns: minutes_lo,minutes_hi,count (incident duration histogram)\n");
    s.push_str("minutes_lo,minutes_hi,count\n");
    for (bin, count) in summary.duration_hist_15min.iter().enumerate() {
        writeln!(s, "{},{},{}", bin * 15, (bin + 1) * 15, count).unwrap();
    }
    emit("incident_durations.csv", s)?;

    let mut s =
        String::from("# columns: breakdown,key,count (incident counts by kind/direction/lanes)\n");
    s.push_str("breakdown,key,count\n");
    for (k, v) in &summary.by_kind {
        writeln!(s, "kind,{k},{v}").unwrap();
    }
    for (k, v) in &summary.by_direction {
        writeln!(s, "direction,{k},{v}").unwrap();
    }
    for (k, v) in &summary.by_lanes_closed {
        writeln!(s, "lanes_closed,{k},{v}").unwrap();
    }
    emit("incident_breakdowns.csv", s)?;

    // Per-(detector, period) traffic profile from the database artifact.
    let dbs = detector_db::read_csv(read_run_file(run_dir, "db.csv")?.as_bytes())
        .context("parsing db.csv")?;
    let mut s = String::from(
        "# columns: direction,detector_id,period,count,mean_speed (historical profile)\n",
    );
    s.push_str("direction,detector_id,period,count,mean_speed\n");
    for db in &dbs {
        for (&(id, period), stats) in db.cells() {
            writeln!(
                s,
                "{},{},{},{},{}",
                db.direction().as_str(),
                id,
                period.as_str(),
                stats.count,
                stats.mean_speed
            )
            .unwrap();
        }
    }
    emit("detector_profile.csv", s)?;

    // Affected vs normal mean speed by detector offset from the event.
    emit(
        "event_speed_profile.csv",
        speed_profile(
            &read_run_file(run_dir, "samples.csv")?,
            &read_run_file(run_dir, "passes.csv")?,
        )?,
    )?;

    // Model comparison bars.
    let mut s = String::from(
        "# columns: algorithm,smote_ratio,mean_auc,std_auc,mean_recall,std_recall,mean_far,std_far\n",
    );
    s.push_str("algorithm,smote_ratio,mean_auc,std_auc,mean_recall,std_recall,mean_far,std_far\n");
    for cv in &report.cv {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            cv.algorithm.as_str(),
            cv.smote_ratio.map_or("none".to_string(), |r| r.to_string()),
            cv.mean_auc,
            cv.std_auc,
            cv.mean_recall,
            cv.std_recall,
            cv.mean_far,
            cv.std_far
        )
        .unwrap();
    }
    emit("model_metrics.csv", s)?;

    // Importance bars.
    let mut s =
        String::from("# columns: feature,weight (impurity-decrease importance, sums to 1)\n");
    s.push_str("feature,weight\n");
    for e in &report.importance {
        writeln!(s, "{},{}", e.feature, e.weight).unwrap();
    }
    emit("feature_importance.csv", s)?;

    Ok(written)
}

/// Builds the affected-vs-normal mean-speed trace by detector offset
/// relative to each sample's event detector (negative = upstream).
fn speed_profile(samples_csv: &str, passes_csv: &str) -> Result<String> {
    // trip -> detector -> speed
    let mut speeds: BTreeMap<String, BTreeMap<u32, f64>> = BTreeMap::new();
    for (i, line) in passes_csv.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            bail!("passes.csv line {}: expected 6 fields", i + 1);
        }
        let detector: u32 = f[2].parse().context("passes.csv detector_id")?;
        let speed: f64 = f[4].parse().context("passes.csv speed")?;
        speeds
            .entry(f[0].to_string())
            .or_default()
            .insert(detector, speed);
    }

    // (offset, is_affected) -> (sum, n)
    let mut acc: BTreeMap<(i64, bool), (f64, u64)> = BTreeMap::new();
    for (i, line) in samples_csv.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!("samples.csv line {}: expected 5 fields", i + 1);
        }
        let trip = f[1];
        let event_det: i64 = f[2].parse().context("samples.csv event_detector_id")?;
        let affected = match f[3] {
            "affected" => true,
            "normal" => false,
            other => bail!("samples.csv line {}: unknown label '{other}'", i + 1),
        };
        let Some(trip_speeds) = speeds.get(trip) else {
            bail!(
                "samples.csv line {}: trip {trip} missing from passes.csv",
                i + 1
            );
        };
        for offset in -PROFILE_UPSTREAM..=(DOWNSTREAM_GAP as i64) {
            let det = event_det + offset;
            if det < 0 {
                continue;
            }
            if let Some(&v) = trip_speeds.get(&(det as u32)) {
                let e = acc.entry((offset, affected)).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }

    let mut s = String::from(
        "# columns: offset,affected_n,affected_mean_speed,normal_n,normal_mean_speed \
         (offset in detectors relative to the event detector; negative = upstream)\n",
    );
    s.push_str("offset,affected_n,affected_mean_speed,normal_n,normal_mean_speed\n");
    for offset in -PROFILE_UPSTREAM..=(DOWNSTREAM_GAP as i64) {
        let (a_sum, a_n) = acc.get(&(offset, true)).copied().unwrap_or((0.0, 0));
        let (n_sum, n_n) = acc.get(&(offset, false)).copied().unwrap_or((0.0, 0));
        let a_mean = if a_n > 0 {
            a_sum / a_n as f64
        } else {
            f64::NAN
        };
        let n_mean = if n_n > 0 {
            n_sum / n_n as f64
        } else {
            f64::NAN
        };
        writeln!(s, "{offset},{a_n},{a_mean},{n_n},{n_mean}").unwrap();
    }
    Ok(s)
}
