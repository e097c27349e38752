//! Incident records and spatio-temporal matching against detector
//! trajectories.
//!
//! Each incident is pinned to its nearest detector (the event detector).
//! A trajectory in the same direction that passes over that detector is
//! labeled by when the pass happened relative to the incident start:
//! shortly after means the vehicle drove into the affected zone, a window
//! before means it saw normal conditions. Pairs outside both windows, and
//! pairs without enough upstream coverage to build features from, go to a
//! discard log with a reason code.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, CorridorGeometry, Direction, GeoPoint, VirtualDetector};
use crate::trajectory::DetectorTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentKind {
    Accident,
    StalledVehicle,
    Other,
}

impl IncidentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IncidentKind::Accident => "accident",
            IncidentKind::StalledVehicle => "stalled_vehicle",
            IncidentKind::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<IncidentKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "accident" => Some(IncidentKind::Accident),
            "stalled_vehicle" => Some(IncidentKind::StalledVehicle),
            "other" => Some(IncidentKind::Other),
            _ => None,
        }
    }
}

/// A lane-blocking event on the corridor.
#[derive(Debug, Clone, PartialEq)]
pub struct Incident {
    pub event_id: String,
    pub start_time: f64,
    pub clear_time: f64,
    pub pos: GeoPoint,
    pub direction: Direction,
    pub lanes_closed: u32,
    pub kind: IncidentKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Affected,
    Normal,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Affected => "affected",
            Label::Normal => "normal",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "affected" => Some(Label::Affected),
            "normal" => Some(Label::Normal),
            _ => None,
        }
    }

    /// Binary target: affected = 1.
    pub fn target(self) -> u8 {
        match self {
            Label::Affected => 1,
            Label::Normal => 0,
        }
    }
}

/// A labeled (trip, incident) pair. `coincide_time` is the trip's pass
/// time at the event detector.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSample {
    pub trip_id: String,
    pub event_id: String,
    pub event_detector_id: u32,
    pub label: Label,
    pub coincide_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    /// Pass at the event detector fell outside both label windows.
    OutsideWindow,
    /// Fewer than the required contiguous upstream detector passes.
    InsufficientUpstream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discard {
    pub event_id: String,
    pub trip_id: String,
    pub reason: DiscardReason,
}

/// Matching output: retained samples, the discard log, and multiplicity
/// bookkeeping for trips that matched more than one incident.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutput {
    pub samples: Vec<MatchedSample>,
    pub discards: Vec<Discard>,
    /// Trips contributing ≥2 retained samples.
    pub trips_with_multiple_events: usize,
    /// Largest number of retained samples from a single trip.
    pub max_events_per_trip: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum IncidentError {
    #[error("incident {event_id} projects {offset:.1} yd off the corridor (max {max_offset})")]
    OffCorridor {
        event_id: String,
        offset: f64,
        max_offset: f64,
    },
    #[error("no detectors for direction")]
    NoDetectors,
}

/// Finds the event detector: nearest detector to the incident's projected
/// chainage on its own direction's grid. Incidents projecting farther than
/// `max_offset` from the corridor are rejected for the caller to discard.
pub fn match_event_detector(
    inc: &Incident,
    corr: &CorridorGeometry,
    detectors: &[VirtualDetector],
    max_offset: f64,
) -> Result<u32, IncidentError> {
    let proj = corr.project(&inc.pos);
    if proj.offset > max_offset {
        return Err(IncidentError::OffCorridor {
            event_id: inc.event_id.clone(),
            offset: proj.offset,
            max_offset,
        });
    }
    let det =
        geo::nearest_detector(detectors, proj.chainage).map_err(|_| IncidentError::NoDetectors)?;
    Ok(det.id)
}

/// Label windows relative to the incident start: a pass in
/// `[start, start + post_window]` is affected, in
/// `(start - pre_window, start)` is normal, anything else is discarded.
fn classify(coincide: f64, start: f64, pre_window: f64, post_window: f64) -> Option<Label> {
    if coincide >= start && coincide <= start + post_window {
        Some(Label::Affected)
    } else if coincide > start - pre_window && coincide < start {
        Some(Label::Normal)
    } else {
        None
    }
}

/// Labels every same-direction (incident, trajectory) pair where the
/// trajectory passes the incident's event detector. Pairs outside the
/// label windows or without `upstream_req` contiguous upstream passes are
/// logged, not returned. One trajectory may produce samples against
/// several incidents; multiplicity is tallied in the output. Samples and
/// discards come back sorted by (event_id, trip_id).
pub fn label_trajectories(
    incidents: &[(Incident, u32)],
    det_trajs: &[DetectorTrajectory],
    pre_window: f64,
    post_window: f64,
    upstream_req: usize,
) -> MatchOutput {
    let per_incident: Vec<(Vec<MatchedSample>, Vec<Discard>)> = incidents
        .par_iter()
        .map(|(inc, event_det)| {
            let mut samples = Vec::new();
            let mut discards = Vec::new();
            for traj in det_trajs {
                if traj.direction != inc.direction {
                    continue;
                }
                let idx = match traj
                    .passes
                    .binary_search_by_key(event_det, |p| p.detector_id)
                {
                    Ok(i) => i,
                    Err(_) => continue,
                };
                let coincide = traj.passes[idx].pass_time;
                let label = match classify(coincide, inc.start_time, pre_window, post_window) {
                    Some(l) => l,
                    None => {
                        discards.push(Discard {
                            event_id: inc.event_id.clone(),
                            trip_id: traj.trip_id.clone(),
                            reason: DiscardReason::OutsideWindow,
                        });
                        continue;
                    }
                };
                let upstream_ok = idx >= upstream_req
                    && (1..=upstream_req)
                        .all(|k| traj.passes[idx - k].detector_id == event_det - k as u32);
                if !upstream_ok {
                    discards.push(Discard {
                        event_id: inc.event_id.clone(),
                        trip_id: traj.trip_id.clone(),
                        reason: DiscardReason::InsufficientUpstream,
                    });
                    continue;
                }
                samples.push(MatchedSample {
                    trip_id: traj.trip_id.clone(),
                    event_id: inc.event_id.clone(),
                    event_detector_id: *event_det,
                    label,
                    coincide_time: coincide,
                });
            }
            (samples, discards)
        })
        .collect();

    let mut out = MatchOutput::default();
    for (s, d) in per_incident {
        out.samples.extend(s);
        out.discards.extend(d);
    }
    out.samples
        .sort_by(|a, b| (&a.event_id, &a.trip_id).cmp(&(&b.event_id, &b.trip_id)));
    out.discards
        .sort_by(|a, b| (&a.event_id, &a.trip_id).cmp(&(&b.event_id, &b.trip_id)));

    let mut per_trip: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &out.samples {
        *per_trip.entry(&s.trip_id).or_default() += 1;
    }
    out.trips_with_multiple_events = per_trip.values().filter(|&&n| n >= 2).count();
    out.max_events_per_trip = per_trip.values().copied().max().unwrap_or(0);
    out
}

/// Figure-style corpus summary: duration histogram in 15-minute bins plus
/// marginal counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IncidentSummary {
    pub total: u64,
    /// Bin i counts durations in [i*900, (i+1)*900) seconds.
    pub duration_hist_15min: Vec<u64>,
    pub by_kind: BTreeMap<String, u64>,
    pub by_direction: BTreeMap<String, u64>,
    pub by_lanes_closed: BTreeMap<u32, u64>,
}

pub fn incident_summary(incidents: &[Incident]) -> IncidentSummary {
    let mut s = IncidentSummary {
        total: incidents.len() as u64,
        ..Default::default()
    };
    for inc in incidents {
        let bin = ((inc.clear_time - inc.start_time) / 900.0).floor() as usize;
        if s.duration_hist_15min.len() <= bin {
            s.duration_hist_15min.resize(bin + 1, 0);
        }
        s.duration_hist_15min[bin] += 1;
        *s.by_kind.entry(inc.kind.as_str().to_string()).or_default() += 1;
        *s.by_direction
            .entry(inc.direction.as_str().to_string())
            .or_default() += 1;
        *s.by_lanes_closed.entry(inc.lanes_closed).or_default() += 1;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::DetectorPass;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn incident(event_id: &str, start: f64, x: f64, y: f64, dir: Direction) -> Incident {
        Incident {
            event_id: event_id.into(),
            start_time: start,
            clear_time: start + 1800.0,
            pos: GeoPoint::new(x, y),
            direction: dir,
            lanes_closed: 1,
            kind: IncidentKind::StalledVehicle,
        }
    }

    fn straight() -> (CorridorGeometry, Vec<VirtualDetector>) {
        let corr = CorridorGeometry::new(
            Direction::Eastbound,
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(5000.0, 0.0)],
        )
        .unwrap();
        let dets = corr.place_detectors(110.0).unwrap();
        (corr, dets)
    }

    /// Trajectory passing detectors [first, last] at one pass per 4 s,
    /// hitting detector `at_det` exactly at time `t_at`.
    fn traj_covering(
        trip_id: &str,
        first: u32,
        last: u32,
        at_det: u32,
        t_at: f64,
    ) -> DetectorTrajectory {
        let passes = (first..=last)
            .map(|id| DetectorPass {
                detector_id: id,
                pass_time: t_at + 4.0 * (id as f64 - at_det as f64),
                speed: 60.0,
                heading: 90.0,
            })
            .collect();
        DetectorTrajectory {
            trip_id: trip_id.into(),
            direction: Direction::Eastbound,
            passes,
        }
    }

    #[test]
    fn event_detector_matching() {
        let (corr, dets) = straight();
        // Exactly at detector 7 (chainage 770).
        let inc = incident("e1", 0.0, 770.0, 0.0, Direction::Eastbound);
        assert_eq!(match_event_detector(&inc, &corr, &dets, 50.0).unwrap(), 7);
        // Midway between 7 and 8 (825): lower id wins the tie.
        let mid = incident("e2", 0.0, 825.0, 0.0, Direction::Eastbound);
        assert_eq!(match_event_detector(&mid, &corr, &dets, 50.0).unwrap(), 7);
        // Too far off the carriageway.
        let off = incident("e3", 0.0, 770.0, 80.0, Direction::Eastbound);
        assert!(matches!(
            match_event_detector(&off, &corr, &dets, 50.0),
            Err(IncidentError::OffCorridor { .. })
        ));
    }

    #[test]
    fn event_detector_matches_brute_force() {
        let (corr, dets) = straight();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for k in 0..50 {
            let x = rng.random_range(0.0..5000.0);
            let y = rng.random_range(-40.0..40.0);
            let inc = incident(&format!("e{k}"), 0.0, x, y, Direction::Eastbound);
            let got = match_event_detector(&inc, &corr, &dets, 50.0).unwrap();
            let ch = corr.project(&inc.pos).chainage;
            let brute = dets
                .iter()
                .min_by(|a, b| {
                    (a.chainage - ch)
                        .abs()
                        .partial_cmp(&(b.chainage - ch).abs())
                        .unwrap()
                        .then(a.id.cmp(&b.id))
                })
                .unwrap()
                .id;
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn label_window_boundaries() {
        let start = 100_000.0;
        let e_det = 20u32;
        let inc = vec![(
            incident("e1", start, 2200.0, 0.0, Direction::Eastbound),
            e_det,
        )];
        let eps = 1e-3;
        let cases: &[(f64, Option<Label>)] = &[
            (-7201.0, None),
            (-7200.0 + eps, Some(Label::Normal)),
            (-1.0, Some(Label::Normal)),
            (0.0, Some(Label::Affected)),
            (900.0, Some(Label::Affected)),
            (901.0, None),
            (-3600.0, Some(Label::Normal)),
            (600.0, Some(Label::Affected)),
            (-10800.0, None),
        ];
        for (i, &(offset, expect)) in cases.iter().enumerate() {
            let traj = traj_covering(&format!("t{i}"), 0, 25, e_det, start + offset);
            let out = label_trajectories(&inc, &[traj], 7200.0, 900.0, 16);
            match expect {
                Some(label) => {
                    assert_eq!(out.samples.len(), 1, "offset {offset}");
                    assert_eq!(out.samples[0].label, label, "offset {offset}");
                    assert_eq!(out.samples[0].coincide_time, start + offset);
                    assert!(out.discards.is_empty());
                }
                None => {
                    assert!(out.samples.is_empty(), "offset {offset}");
                    assert_eq!(out.discards.len(), 1);
                    assert_eq!(out.discards[0].reason, DiscardReason::OutsideWindow);
                }
            }
        }
    }

    #[test]
    fn upstream_requirement_enforced() {
        let start = 100_000.0;
        let e_det = 20u32;
        let inc = vec![(
            incident("e1", start, 2200.0, 0.0, Direction::Eastbound),
            e_det,
        )];

        // Only 10 upstream detectors available.
        let short = traj_covering("t0", 10, 25, e_det, start + 60.0);
        let out = label_trajectories(&inc, &[short], 7200.0, 900.0, 16);
        assert!(out.samples.is_empty());
        assert_eq!(out.discards[0].reason, DiscardReason::InsufficientUpstream);

        // Exactly 16 upstream: kept.
        let exact = traj_covering("t1", 4, 21, e_det, start + 60.0);
        let out = label_trajectories(&inc, &[exact], 7200.0, 900.0, 16);
        assert_eq!(out.samples.len(), 1);

        // Trajectory missing the event detector entirely: not even a pair.
        let miss = traj_covering("t2", 0, 15, 10, start + 60.0);
        let out = label_trajectories(&inc, &[miss], 7200.0, 900.0, 16);
        assert!(out.samples.is_empty() && out.discards.is_empty());

        // Wrong direction: ignored.
        let mut wrong = traj_covering("t3", 0, 25, e_det, start + 60.0);
        wrong.direction = Direction::Westbound;
        let out = label_trajectories(&inc, &[wrong], 7200.0, 900.0, 16);
        assert!(out.samples.is_empty() && out.discards.is_empty());
    }

    #[test]
    fn multiplicity_and_ordering() {
        let start = 100_000.0;
        let incs = vec![
            (
                incident("e2", start + 300.0, 2310.0, 0.0, Direction::Eastbound),
                21,
            ),
            (incident("e1", start, 2200.0, 0.0, Direction::Eastbound), 20),
        ];
        let traj = traj_covering("t0", 0, 30, 20, start + 60.0);
        let out = label_trajectories(&incs, &[traj], 7200.0, 900.0, 16);
        assert_eq!(out.samples.len(), 2);
        // Sorted by event_id despite input order.
        assert_eq!(out.samples[0].event_id, "e1");
        assert_eq!(out.samples[1].event_id, "e2");
        assert_eq!(out.samples[0].label, Label::Affected);
        // Pass at 21 happens at start+64 vs e2 start+300: 236 s before -> normal.
        assert_eq!(out.samples[1].label, Label::Normal);
        assert_eq!(out.trips_with_multiple_events, 1);
        assert_eq!(out.max_events_per_trip, 2);
    }

    #[test]
    fn pair_conservation_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let n_trajs = rng.random_range(5..40);
            let trajs: Vec<DetectorTrajectory> = (0..n_trajs)
                .map(|i| {
                    let first = rng.random_range(0..30u32);
                    let last = first + rng.random_range(1..35u32);
                    let at = rng.random_range(first..=last);
                    let mut t = traj_covering(
                        &format!("t{i}"),
                        first,
                        last,
                        at,
                        rng.random_range(0.0..20_000.0),
                    );
                    if rng.random_bool(0.3) {
                        t.direction = Direction::Westbound;
                    }
                    t
                })
                .collect();
            let incs: Vec<(Incident, u32)> = (0..rng.random_range(1..10))
                .map(|k| {
                    let dir = if rng.random_bool(0.3) {
                        Direction::Westbound
                    } else {
                        Direction::Eastbound
                    };
                    (
                        incident(
                            &format!("e{k}"),
                            rng.random_range(0.0..20_000.0),
                            0.0,
                            0.0,
                            dir,
                        ),
                        rng.random_range(0..60u32),
                    )
                })
                .collect();
            let out = label_trajectories(&incs, &trajs, 7200.0, 900.0, 16);

            let universe: usize = incs
                .iter()
                .map(|(inc, det)| {
                    trajs
                        .iter()
                        .filter(|t| {
                            t.direction == inc.direction
                                && t.passes.iter().any(|p| p.detector_id == *det)
                        })
                        .count()
                })
                .sum();
            assert_eq!(out.samples.len() + out.discards.len(), universe);

            for s in &out.samples {
                let inc = &incs
                    .iter()
                    .find(|(i, _)| i.event_id == s.event_id)
                    .unwrap()
                    .0;
                match s.label {
                    Label::Affected => {
                        assert!(s.coincide_time >= inc.start_time);
                        assert!(s.coincide_time <= inc.start_time + 900.0);
                    }
                    Label::Normal => {
                        assert!(s.coincide_time < inc.start_time);
                        assert!(s.coincide_time > inc.start_time - 7200.0);
                    }
                }
            }
        }
    }

    #[test]
    fn summary_marginals() {
        let incidents = vec![
            Incident {
                event_id: "a".into(),
                start_time: 0.0,
                clear_time: 800.0,
                pos: GeoPoint::new(0.0, 0.0),
                direction: Direction::Westbound,
                lanes_closed: 1,
                kind: IncidentKind::Accident,
            },
            Incident {
                event_id: "b".into(),
                start_time: 0.0,
                clear_time: 1900.0,
                pos: GeoPoint::new(0.0, 0.0),
                direction: Direction::Eastbound,
                lanes_closed: 2,
                kind: IncidentKind::StalledVehicle,
            },
            Incident {
                event_id: "c".into(),
                start_time: 0.0,
                clear_time: 950.0,
                pos: GeoPoint::new(0.0, 0.0),
                direction: Direction::Westbound,
                lanes_closed: 1,
                kind: IncidentKind::StalledVehicle,
            },
        ];
        let s = incident_summary(&incidents);
        assert_eq!(s.total, 3);
        // Durations 800 s, 950 s, 1900 s land in 15-minute bins 0, 1, 2.
        assert_eq!(s.duration_hist_15min, vec![1, 1, 1]);
        assert_eq!(s.by_kind["accident"], 1);
        assert_eq!(s.by_kind["stalled_vehicle"], 2);
        assert_eq!(s.by_direction["westbound"], 2);
        assert_eq!(s.by_direction["eastbound"], 1);
        assert_eq!(s.by_lanes_closed[&1], 2);
        assert_eq!(s.by_lanes_closed[&2], 1);
        let sum_kind: u64 = s.by_kind.values().sum();
        let sum_dir: u64 = s.by_direction.values().sum();
        let sum_lanes: u64 = s.by_lanes_closed.values().sum();
        let sum_hist: u64 = s.duration_hist_15min.iter().sum();
        assert!(sum_kind == 3 && sum_dir == 3 && sum_lanes == 3 && sum_hist == 3);

        let empty = incident_summary(&[]);
        assert_eq!(empty.total, 0);
        assert!(empty.duration_hist_15min.is_empty());
    }
}
