//! Raw GPS handling: corridor filtering, trip segmentation, direction
//! inference, and resampling of trips onto virtual detector positions.
//!
//! The probe feed arrives as per-vehicle point streams with uneven time
//! spacing. Processing proceeds in stages: discard points too far from the
//! corridor, split each vehicle's stream into trips at long time gaps,
//! infer each trip's travel direction from its headings, then interpolate
//! the trip onto the fixed detector grid in chainage space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle;
use crate::geo::{CorridorGeometry, Direction, GeoPoint, VirtualDetector};

/// One GPS fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub vehicle_id: String,
    /// Epoch seconds.
    pub t: f64,
    pub pos: GeoPoint,
    /// Miles per hour, non-negative.
    pub speed: f64,
    /// Compass degrees in [0, 360).
    pub heading: f64,
}

/// A maximal run of one vehicle's on-corridor points with no internal time
/// gap above the segmentation threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub trip_id: String,
    pub vehicle_id: String,
    pub direction: Direction,
    pub points: Vec<RawPoint>,
}

/// Interpolated state of a trip at one detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorPass {
    pub detector_id: u32,
    pub pass_time: f64,
    pub speed: f64,
    pub heading: f64,
}

/// A trip resampled onto the detector grid, ordered by travel direction
/// (ascending detector id).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTrajectory {
    pub trip_id: String,
    pub direction: Direction,
    pub passes: Vec<DetectorPass>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trip has no points with headings")]
    NoPoints,
    #[error("circular mean heading is on the 0/180 boundary; direction ambiguous")]
    AmbiguousDirection,
    #[error("chainage regresses {backward:.1} yd over a {span:.1} yd span")]
    ExcessBackwardMotion { backward: f64, span: f64 },
    #[error("fewer than 2 monotone points after filtering")]
    DegenerateSpan,
}

/// Per-vehicle segmentation output with the bookkeeping counters the
/// pipeline reports.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Segmentation {
    pub trips: Vec<Trip>,
    /// Later points sharing a timestamp with an earlier one, dropped.
    pub duplicate_points_dropped: usize,
    /// Point groups discarded for having fewer than 2 points.
    pub short_groups_dropped: usize,
    /// Point groups discarded because direction inference was ambiguous.
    pub ambiguous_direction_groups: usize,
}

/// Keeps exactly the points whose projection offset onto `corr` is at most
/// `max_offset` yards, preserving order.
pub fn filter_corridor(
    points: Vec<RawPoint>,
    corr: &CorridorGeometry,
    max_offset: f64,
) -> Vec<RawPoint> {
    points
        .into_iter()
        .filter(|p| corr.project(&p.pos).offset <= max_offset)
        .collect()
}

/// Travel direction from the circular mean of a point set's headings:
/// mean in (0°, 180°) is eastbound, in (180°, 360°) westbound. A mean on
/// the boundary (or an undefined mean) is an error; the caller drops the
/// trip. The boundary test uses the resultant vector's north component so
/// that symmetric heading sets like {350°, 10°} are recognized as exactly
/// ambiguous despite rounding.
pub fn infer_direction(points: &[RawPoint]) -> Result<Direction, TrajectoryError> {
    if points.is_empty() {
        return Err(TrajectoryError::NoPoints);
    }
    let headings: Vec<f64> = points.iter().map(|p| p.heading).collect();
    let (_, sy) = angle::resultant(&headings);
    let tol = 1e-12 * headings.len() as f64;
    if sy > tol {
        Ok(Direction::Eastbound)
    } else if sy < -tol {
        Ok(Direction::Westbound)
    } else {
        Err(TrajectoryError::AmbiguousDirection)
    }
}

/// Splits one vehicle's corridor-filtered points into trips wherever the
/// time gap between successive points exceeds `gap_s` (strictly). Points
/// are sorted by time first; later points with duplicate timestamps are
/// dropped and counted. Groups with fewer than 2 points or an ambiguous
/// direction are discarded and counted. Trip ids are
/// `"<vehicle_id>#<index>"` with the index running over emitted trips
/// from 0.
pub fn segment_trips(mut points: Vec<RawPoint>, gap_s: f64) -> Segmentation {
    let mut out = Segmentation::default();
    if points.is_empty() {
        return out;
    }
    points.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut deduped: Vec<RawPoint> = Vec::with_capacity(points.len());
    for p in points {
        match deduped.last() {
            Some(last) if last.t == p.t => out.duplicate_points_dropped += 1,
            _ => deduped.push(p),
        }
    }

    let vehicle_id = deduped[0].vehicle_id.clone();
    let mut groups: Vec<Vec<RawPoint>> = Vec::new();
    let mut current: Vec<RawPoint> = Vec::new();
    for p in deduped {
        if let Some(last) = current.last() {
            if p.t - last.t > gap_s {
                groups.push(std::mem::take(&mut current));
            }
        }
        current.push(p);
    }
    groups.push(current);

    for group in groups {
        if group.len() < 2 {
            out.short_groups_dropped += 1;
            continue;
        }
        match infer_direction(&group) {
            Ok(direction) => {
                let trip_id = format!("{}#{}", vehicle_id, out.trips.len());
                out.trips.push(Trip {
                    trip_id,
                    vehicle_id: vehicle_id.clone(),
                    direction,
                    points: group,
                });
            }
            Err(_) => out.ambiguous_direction_groups += 1,
        }
    }
    out
}

/// Resamples a trip onto the detector grid of its direction.
///
/// Every point is projected to chainage on `corr` (whose vertex order
/// follows the travel direction, so chainage increases downstream). Trips
/// whose total chainage regression exceeds 5% of their span are rejected
/// as noisy. Small regressions are smoothed by keeping the strictly
/// increasing chainage subsequence. Each detector whose chainage falls
/// inside the kept span gets pass time and speed linearly interpolated in
/// chainage between the bracketing points, and heading interpolated along
/// the shortest arc.
pub fn interpolate_to_detectors(
    trip: &Trip,
    corr: &CorridorGeometry,
    detectors: &[VirtualDetector],
) -> Result<DetectorTrajectory, TrajectoryError> {
    if trip.points.len() < 2 {
        return Err(TrajectoryError::DegenerateSpan);
    }
    let chainages: Vec<f64> = trip
        .points
        .iter()
        .map(|p| corr.project(&p.pos).chainage)
        .collect();

    let mut backward = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for w in chainages.windows(2) {
        backward += (w[0] - w[1]).max(0.0);
    }
    for &c in &chainages {
        lo = lo.min(c);
        hi = hi.max(c);
    }
    let span = hi - lo;
    if span <= 0.0 {
        return Err(TrajectoryError::DegenerateSpan);
    }
    if backward > 0.05 * span {
        return Err(TrajectoryError::ExcessBackwardMotion { backward, span });
    }

    // Strictly increasing chainage subsequence; interpolation needs
    // well-ordered brackets.
    let mut kept: Vec<(f64, &RawPoint)> = Vec::with_capacity(trip.points.len());
    for (c, p) in chainages.iter().zip(&trip.points) {
        if kept.last().is_none_or(|(last, _)| c > last) {
            kept.push((*c, p));
        }
    }
    if kept.len() < 2 {
        return Err(TrajectoryError::DegenerateSpan);
    }
    let c_min = kept[0].0;
    let c_max = kept[kept.len() - 1].0;

    let mut passes = Vec::new();
    let mut seg = 0usize;
    for det in detectors {
        let c = det.chainage;
        if c < c_min || c > c_max {
            continue;
        }
        while seg + 2 < kept.len() && kept[seg + 1].0 < c {
            seg += 1;
        }
        let (c0, p0) = kept[seg];
        let (c1, p1) = kept[seg + 1];
        let t = (c - c0) / (c1 - c0);
        passes.push(DetectorPass {
            detector_id: det.id,
            pass_time: p0.t + t * (p1.t - p0.t),
            speed: p0.speed + t * (p1.speed - p0.speed),
            heading: angle::interp_deg(p0.heading, p1.heading, t),
        });
    }

    Ok(DetectorTrajectory {
        trip_id: trip.trip_id.clone(),
        direction: trip.direction,
        passes,
    })
}
