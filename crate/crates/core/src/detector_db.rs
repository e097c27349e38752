//! Historical per-detector traffic statistics.
//!
//! Every detector pass is bucketed by (detector, period) where the period
//! splits the local clock day into peak and off-peak. Each bucket keeps
//! pass count, mean and sample standard deviation of speed, and the
//! circular mean heading. The feature extractor reads historical speeds
//! back out of this database, falling back to direction-wide aggregates
//! for sparse cells.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle;
use crate::geo::Direction;
use crate::trajectory::DetectorTrajectory;

/// Time-of-day bucket. Peak covers the local-clock morning and afternoon
/// commute windows; everything else is off-peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Peak,
    Offpeak,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::Peak => "peak",
            Period::Offpeak => "offpeak",
        }
    }

    pub fn parse(s: &str) -> Option<Period> {
        match s.trim().to_ascii_lowercase().as_str() {
            "peak" => Some(Period::Peak),
            "offpeak" => Some(Period::Offpeak),
            _ => None,
        }
    }
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Peak iff local time-of-day is in [06:00, 10:00) or [15:00, 19:00),
/// half-open. `t` is epoch seconds; `tz_offset_hours` shifts to local
/// clock time (e.g. -5.0 for US Central daylight time).
pub fn classify_period(t: f64, tz_offset_hours: f64) -> Period {
    let tod = (t + tz_offset_hours * 3600.0).rem_euclid(86_400.0);
    let h = tod / 3600.0;
    if (6.0..10.0).contains(&h) || (15.0..19.0).contains(&h) {
        Period::Peak
    } else {
        Period::Offpeak
    }
}

/// Aggregate speed and heading statistics for one bucket of passes.
/// `std_speed` is the sample (n-1) standard deviation and is `None` when
/// fewer than two passes contribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedStats {
    pub count: u64,
    pub mean_speed: f64,
    pub std_speed: Option<f64>,
    pub mean_heading: f64,
}

/// Running accumulator: Welford mean/M2 for speed plus a heading resultant
/// vector. Merge is Chan's pairwise combination, so partial accumulators
/// built per trajectory can be reduced in any grouping; the builders below
/// always reduce in trajectory order to keep output bit-stable.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Accum {
    count: u64,
    mean: f64,
    m2: f64,
    hx: f64,
    hy: f64,
}

impl Accum {
    fn new() -> Accum {
        Accum {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            hx: 0.0,
            hy: 0.0,
        }
    }

    fn push(&mut self, speed: f64, heading: f64) {
        self.count += 1;
        let d = speed - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (speed - self.mean);
        let r = heading.to_radians();
        self.hx += r.cos();
        self.hy += r.sin();
    }

    fn merge(&mut self, other: &Accum) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let n = n1 + n2;
        let delta = other.mean - self.mean;
        self.mean += delta * n2 / n;
        self.m2 += other.m2 + delta * delta * n1 * n2 / n;
        self.count += other.count;
        self.hx += other.hx;
        self.hy += other.hy;
    }

    fn stats(&self) -> SpeedStats {
        let std_speed = if self.count >= 2 {
            Some((self.m2.max(0.0) / (self.count - 1) as f64).sqrt())
        } else {
            None
        };
        SpeedStats {
            count: self.count,
            mean_speed: self.mean,
            std_speed,
            mean_heading: angle::normalize_deg(self.hy.atan2(self.hx).to_degrees()),
        }
    }
}

#[derive(Debug, Error)]
pub enum DbError {
    #[error("no {period} observations anywhere on the {direction} grid")]
    EmptyFallback {
        direction: Direction,
        period: Period,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad field {field}: {value:?}")]
    BadField { field: &'static str, value: String },
}

/// Historical statistics for one direction's detector grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorDB {
    direction: Direction,
    cells: BTreeMap<(u32, Period), SpeedStats>,
    /// Direction-wide per-period aggregates used as the sparse-cell
    /// fallback; combined from the cells count-weighted.
    totals: BTreeMap<Period, SpeedStats>,
}

/// Result of a historical lookup: the stats plus whether the direction-wide
/// fallback had to stand in for the requested cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub stats: SpeedStats,
    pub fallback: bool,
}

fn partial(traj: &DetectorTrajectory, tz: f64) -> BTreeMap<(u32, Period), Accum> {
    let mut cells: BTreeMap<(u32, Period), Accum> = BTreeMap::new();
    for pass in &traj.passes {
        let period = classify_period(pass.pass_time, tz);
        cells
            .entry((pass.detector_id, period))
            .or_insert_with(Accum::new)
            .push(pass.speed, pass.heading);
    }
    cells
}

fn reduce(direction: Direction, partials: Vec<BTreeMap<(u32, Period), Accum>>) -> DetectorDB {
    let mut merged: BTreeMap<(u32, Period), Accum> = BTreeMap::new();
    for part in partials {
        for (key, acc) in part {
            merged.entry(key).or_insert_with(Accum::new).merge(&acc);
        }
    }
    let cells: BTreeMap<(u32, Period), SpeedStats> =
        merged.into_iter().map(|(k, a)| (k, a.stats())).collect();
    let totals = derive_totals(&cells);
    DetectorDB {
        direction,
        cells,
        totals,
    }
}

/// Count-weighted combination of all cells in a period. Derived from the
/// cell stats (not the raw passes) so a database imported from CSV carries
/// exactly the same fallback values as a freshly built one.
fn derive_totals(cells: &BTreeMap<(u32, Period), SpeedStats>) -> BTreeMap<Period, SpeedStats> {
    let mut acc: BTreeMap<Period, Accum> = BTreeMap::new();
    for (&(_, period), s) in cells {
        let m2 = match s.std_speed {
            Some(sd) => sd * sd * (s.count - 1) as f64,
            None => 0.0,
        };
        let r = s.mean_heading.to_radians();
        let n = s.count as f64;
        acc.entry(period).or_insert_with(Accum::new).merge(&Accum {
            count: s.count,
            mean: s.mean_speed,
            m2,
            hx: n * r.cos(),
            hy: n * r.sin(),
        });
    }
    acc.into_iter().map(|(p, a)| (p, a.stats())).collect()
}

/// Builds the database sequentially.
pub fn build_db(
    direction: Direction,
    trajectories: &[DetectorTrajectory],
    tz_offset_hours: f64,
) -> DetectorDB {
    let partials = trajectories
        .iter()
        .map(|t| partial(t, tz_offset_hours))
        .collect();
    reduce(direction, partials)
}

/// Builds the database with per-trajectory partials computed in parallel.
/// Partials are merged in trajectory order, so the result is bit-identical
/// to [`build_db`] at any thread count.
pub fn build_db_parallel(
    direction: Direction,
    trajectories: &[DetectorTrajectory],
    tz_offset_hours: f64,
) -> DetectorDB {
    use rayon::prelude::*;
    let partials = trajectories
        .par_iter()
        .map(|t| partial(t, tz_offset_hours))
        .collect();
    reduce(direction, partials)
}

impl DetectorDB {
    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn cells(&self) -> impl Iterator<Item = (&(u32, Period), &SpeedStats)> {
        self.cells.iter()
    }

    pub fn cell(&self, detector_id: u32, period: Period) -> Option<&SpeedStats> {
        self.cells.get(&(detector_id, period))
    }

    pub fn total_count(&self) -> u64 {
        self.cells.values().map(|s| s.count).sum()
    }

    pub fn period_total(&self, period: Period) -> Option<&SpeedStats> {
        self.totals.get(&period)
    }

    /// Historical stats for a cell. Sparse cells (absent, or with a single
    /// pass so no spread estimate) fall back to the direction-wide period
    /// aggregate with `fallback` set. Errors only when that aggregate is
    /// empty too, which makes the database unusable for this period.
    pub fn lookup_historical(&self, detector_id: u32, period: Period) -> Result<Lookup, DbError> {
        if let Some(stats) = self.cells.get(&(detector_id, period)) {
            if stats.count >= 2 {
                return Ok(Lookup {
                    stats: *stats,
                    fallback: false,
                });
            }
        }
        match self.totals.get(&period) {
            Some(total) if total.count > 0 => Ok(Lookup {
                stats: *total,
                fallback: true,
            }),
            _ => Err(DbError::EmptyFallback {
                direction: self.direction,
                period,
            }),
        }
    }
}

/// One exported CSV row.
#[derive(Debug, Serialize, Deserialize)]
struct DbRow {
    direction: String,
    detector_id: u32,
    period: String,
    count: u64,
    mean_speed: f64,
    std_speed: Option<f64>,
    mean_heading: f64,
}

/// Writes any number of per-direction databases into one CSV stream with
/// header `direction,detector_id,period,count,mean_speed,std_speed,mean_heading`.
pub fn write_csv<W: io::Write>(dbs: &[&DetectorDB], w: W) -> Result<(), DbError> {
    let mut wtr = csv::Writer::from_writer(w);
    for db in dbs {
        for (&(detector_id, period), s) in &db.cells {
            wtr.serialize(DbRow {
                direction: db.direction.as_str().to_string(),
                detector_id,
                period: period.as_str().to_string(),
                count: s.count,
                mean_speed: s.mean_speed,
                std_speed: s.std_speed,
                mean_heading: s.mean_heading,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads databases back from [`write_csv`] output, one per direction
/// present, with fallback totals rederived from the cells.
pub fn read_csv<R: io::Read>(r: R) -> Result<Vec<DetectorDB>, DbError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut by_dir: BTreeMap<Direction, BTreeMap<(u32, Period), SpeedStats>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: DbRow = row?;
        let direction = Direction::parse(&row.direction).ok_or(DbError::BadField {
            field: "direction",
            value: row.direction.clone(),
        })?;
        let period = Period::parse(&row.period).ok_or(DbError::BadField {
            field: "period",
            value: row.period.clone(),
        })?;
        by_dir.entry(direction).or_default().insert(
            (row.detector_id, period),
            SpeedStats {
                count: row.count,
                mean_speed: row.mean_speed,
                std_speed: row.std_speed,
                mean_heading: row.mean_heading,
            },
        );
    }
    Ok(by_dir
        .into_iter()
        .map(|(direction, cells)| {
            let totals = derive_totals(&cells);
            DetectorDB {
                direction,
                cells,
                totals,
            }
        })
        .collect())
}
