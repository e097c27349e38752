//! Seeded synthetic scenario generation.
//!
//! Stands in for proprietary probe-vehicle, incident and weather feeds
//! with a controllable corridor world: a straight two-direction corridor,
//! Poisson vehicle departures, per-vehicle cruise speeds, and incidents
//! that depress speeds across an upstream queue while active. The
//! generator labels its own (trip, incident) pairs with the production
//! matcher, so the emitted `ground_truth.csv` is derivable from the other
//! files by construction.
//!
//! Everything is driven by per-entity RNG streams split off one seed, so
//! output is byte-identical across runs and thread counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::derive_seed;
use crate::geo::{planar_to_latlon, CorridorGeometry, Direction, GeoPoint, VirtualDetector};
use crate::incident::{
    label_trajectories, match_event_detector, Incident, IncidentError, IncidentKind,
};
use crate::trajectory::{interpolate_to_detectors, segment_trips, DetectorTrajectory, RawPoint};

// Matching constants the ground-truth pass assumes; they mirror the
// pipeline defaults (detector spacing, corridor offset gate, segmentation
// gap, label windows, upstream requirement).
const SPACING_YD: f64 = 110.0;
const MAX_OFFSET_YD: f64 = 50.0;
const GAP_S: f64 = 900.0;
const PRE_WINDOW_S: f64 = 7200.0;
const POST_WINDOW_S: f64 = 900.0;
const UPSTREAM_REQ: usize = 16;

const YD_PER_S_PER_MPH: f64 = 1760.0 / 3600.0;
/// Hard floor keeping queued vehicles moving so traversal terminates.
const MIN_SPEED_MPH: f64 = 2.0;

// RNG stream tags.
const VEHICLE_STREAM: u64 = 1 << 40;
const INCIDENT_STREAM: u64 = 2 << 40;
const WEATHER_STREAM: u64 = 3 << 40;
const POOL_STREAM: u64 = 4 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub corridor_length_miles: f64,
    pub n_vehicles: usize,
    /// Mean seconds between fixes; jittered per fix, always below 30 s.
    pub fix_interval_mean: f64,
    /// Per-vehicle cruise speed distribution, mph.
    pub base_speed_mean: f64,
    pub base_speed_std: f64,
    pub n_incidents: usize,
    /// Incident mix by kind: (stalled_vehicle, accident, other); sums to 1.
    pub kind_mix: [f64; 3],
    /// Westbound share of incidents.
    pub wb_fraction: f64,
    /// Share of incidents closing two lanes (the rest close one).
    pub two_lane_fraction: f64,
    /// Queue speed multiplier is (1 - speed_drop); 0 disables the signal.
    pub speed_drop: f64,
    pub queue_length_yd: f64,
    /// Share of weather blocks marked rainy.
    pub rain_fraction: f64,
    pub seed: u64,
    // Shape parameters beyond the core knobs.
    pub horizon_hours: f64,
    /// Westbound share of vehicles.
    pub wb_vehicle_fraction: f64,
    /// Share of vehicles taking a mid-corridor dwell longer than the
    /// segmentation gap, forcing a trip split.
    pub dwell_fraction: f64,
    /// Mean incident duration, seconds (uniform around it, min 900).
    pub incident_duration_mean_s: f64,
    /// Demand swings sinusoidally around its mean with this relative
    /// amplitude in [0, 1); 0 keeps departures uniform.
    pub demand_amplitude: f64,
    /// Period of the demand swing, seconds.
    pub demand_period_s: f64,
    /// WGS84 anchor mapped to the corridor midpoint for lat/lon emission.
    pub origin_lat: f64,
    pub origin_lon: f64,
}

/// Desk-scale configuration mirroring the original corridor study: a few
/// thousand trips, 256 incidents with its kind/direction/lane marginals,
/// and window densities that land the affected:normal ratio near 1:7.
pub fn study_preset() -> ScenarioConfig {
    ScenarioConfig {
        corridor_length_miles: 20.0,
        n_vehicles: 4600,
        fix_interval_mean: 12.0,
        base_speed_mean: 65.0,
        base_speed_std: 6.0,
        n_incidents: 256,
        kind_mix: [200.0 / 256.0, 48.0 / 256.0, 8.0 / 256.0],
        wb_fraction: 153.0 / 256.0,
        two_lane_fraction: 14.0 / 256.0,
        speed_drop: 0.5,
        queue_length_yd: 880.0,
        rain_fraction: 0.25,
        seed: 42,
        horizon_hours: 720.0,
        wb_vehicle_fraction: 0.5,
        dwell_fraction: 0.1,
        incident_duration_mean_s: 3600.0,
        demand_amplitude: 0.7,
        demand_period_s: 14_400.0,
        origin_lat: 30.4,
        origin_lon: -91.1,
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Incident(#[from] IncidentError),
}

/// Generated corpus, as the CSV payloads the pipeline ingests.
#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    /// `direction,lat,lon` vertex rows in travel order.
    pub corridor_csv: String,
    /// `vehicle_id,t,lat,lon,speed,heading`.
    pub trajectory_csv: String,
    /// `event_id,start_time,clear_time,lat,lon,direction,lanes_closed,kind`.
    pub incident_csv: String,
    /// `start,end,rain` half-open intervals covering the horizon.
    pub weather_csv: String,
    /// `trip_id,event_id,label` from the generator's own matcher pass.
    pub ground_truth_csv: String,
    pub summary: ScenarioSummary,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScenarioSummary {
    pub n_points: usize,
    pub n_trips: usize,
    /// Trips the interpolation stage rejected during the ground-truth pass.
    pub n_trips_rejected: usize,
    pub n_samples: usize,
    pub n_affected: usize,
    pub n_normal: usize,
    pub n_discards: usize,
    pub by_kind: BTreeMap<String, u64>,
    pub by_direction: BTreeMap<String, u64>,
    pub by_lanes: BTreeMap<u32, u64>,
}

impl ScenarioConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::BadConfig(msg.to_string()));
        if self.n_vehicles == 0 {
            return bad("n_vehicles must be positive");
        }
        if !(self.corridor_length_miles.is_finite() && self.corridor_length_miles >= 2.0) {
            return bad("corridor must be at least 2 miles for the upstream detector sets");
        }
        if !(self.fix_interval_mean > 0.0 && self.fix_interval_mean < 30.0) {
            return bad("fix_interval_mean must lie in (0, 30) seconds");
        }
        if !(self.base_speed_mean > 0.0 && self.base_speed_std >= 0.0) {
            return bad("base speed mean must be positive, std non-negative");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.kind_mix.iter().all(|p| unit(*p))
            || (self.kind_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("kind_mix proportions must lie in [0,1] and sum to 1");
        }
        if !(unit(self.wb_fraction)
            && unit(self.two_lane_fraction)
            && unit(self.speed_drop)
            && unit(self.rain_fraction)
            && unit(self.wb_vehicle_fraction)
            && unit(self.dwell_fraction))
        {
            return bad("all proportions must lie in [0,1]");
        }
        if self.queue_length_yd < 0.0 {
            return bad("queue_length_yd must be non-negative");
        }
        if self.n_incidents > 0 {
            if self.horizon_hours * 3600.0 < 10_800.0 {
                return bad("horizon too short to place incident label windows");
            }
            if self.incident_duration_mean_s < 900.0 {
                return bad("incident_duration_mean_s must be at least 900 s");
            }
        }
        if !(0.0..1.0).contains(&self.demand_amplitude) {
            return bad("demand_amplitude must lie in [0, 1)");
        }
        if self.demand_amplitude > 0.0 && self.demand_period_s <= 0.0 {
            return bad("demand_period_s must be positive when demand swings");
        }
        if self.horizon_hours <= 0.0 {
            return bad("horizon_hours must be positive");
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`
/// (non-negative, summing to 1): exact totals, deterministic ties toward
/// the lower index.
fn exact_counts(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = fractions.iter().map(|f| (n as f64 * f) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = n as f64 * fractions[a] - (n as f64 * fractions[a]).floor();
        let fb = n as f64 * fractions[b] - (n as f64 * fractions[b]).floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in 0..n - assigned {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Active incident footprint in one direction's chainage frame.
struct QueueZone {
    chain_lo: f64,
    chain_hi: f64,
    t_start: f64,
    t_end: f64,
}

struct World {
    length_yd: f64,
    eb: CorridorGeometry,
    wb: CorridorGeometry,
    eb_detectors: Vec<VirtualDetector>,
    wb_detectors: Vec<VirtualDetector>,
}

impl World {
    fn build(length_yd: f64) -> World {
        let eb = CorridorGeometry::new(
            Direction::Eastbound,
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(length_yd, 0.0)],
        )
        .expect("straight corridor is valid");
        let wb = CorridorGeometry::new(
            Direction::Westbound,
            vec![GeoPoint::new(length_yd, 0.0), GeoPoint::new(0.0, 0.0)],
        )
        .expect("straight corridor is valid");
        let eb_detectors = eb.place_detectors(SPACING_YD).expect("positive spacing");
        let wb_detectors = wb.place_detectors(SPACING_YD).expect("positive spacing");
        World {
            length_yd,
            eb,
            wb,
            eb_detectors,
            wb_detectors,
        }
    }

    fn corridor(&self, direction: Direction) -> &CorridorGeometry {
        match direction {
            Direction::Eastbound => &self.eb,
            Direction::Westbound => &self.wb,
        }
    }

    fn detectors(&self, direction: Direction) -> &[VirtualDetector] {
        match direction {
            Direction::Eastbound => &self.eb_detectors,
            Direction::Westbound => &self.wb_detectors,
        }
    }

    /// Planar position for a chainage in `direction`'s frame.
    fn planar(&self, direction: Direction, chainage: f64, lateral: f64) -> GeoPoint {
        match direction {
            Direction::Eastbound => GeoPoint::new(chainage, lateral),
            Direction::Westbound => GeoPoint::new(self.length_yd - chainage, lateral),
        }
    }
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<ScenarioBundle, SynthError> {
    cfg.validate()?;
    let length_yd = cfg.corridor_length_miles * 1760.0;
    let horizon_s = cfg.horizon_hours * 3600.0;
    let world = World::build(length_yd);

    let incidents = draw_incidents(cfg, &world, horizon_s);
    let zones = queue_zones(cfg, &incidents, &world);

    // Vehicles in parallel; stream (seed, vehicle index) keeps output
    // independent of scheduling.
    let vehicle_points: Vec<Vec<RawPoint>> = (0..cfg.n_vehicles)
        .into_par_iter()
        .map(|v| drive_vehicle(cfg, &world, &zones, horizon_s, v))
        .collect();

    // Ground truth via the production segmentation/interpolation/matcher
    // path over the generator's own planar fixes.
    let per_vehicle: Vec<(Vec<DetectorTrajectory>, usize)> = vehicle_points
        .par_iter()
        .map(|points| {
            let seg = segment_trips(points.clone(), GAP_S);
            let mut trajs = Vec::new();
            let mut rejected = 0;
            for trip in &seg.trips {
                let corr = world.corridor(trip.direction);
                match interpolate_to_detectors(trip, corr, world.detectors(trip.direction)) {
                    Ok(t) => trajs.push(t),
                    Err(_) => rejected += 1,
                }
            }
            (trajs, rejected)
        })
        .collect();
    let mut det_trajs = Vec::new();
    let mut n_trips_rejected = 0;
    for (trajs, rejected) in per_vehicle {
        det_trajs.extend(trajs);
        n_trips_rejected += rejected;
    }

    let mut pairs = Vec::with_capacity(incidents.len());
    for inc in &incidents {
        let corr = world.corridor(inc.direction);
        let event_det =
            match_event_detector(inc, corr, world.detectors(inc.direction), MAX_OFFSET_YD)?;
        pairs.push((inc.clone(), event_det));
    }
    let matched = label_trajectories(
        &pairs,
        &det_trajs,
        PRE_WINDOW_S,
        POST_WINDOW_S,
        UPSTREAM_REQ,
    );

    // Serialize. All planar coordinates shift to the corridor midpoint so
    // the emitted corridor's lat/lon centroid is exactly the origin anchor.
    let to_latlon = |pos: &GeoPoint| {
        let centered = GeoPoint::new(pos.x - length_yd / 2.0, pos.y);
        planar_to_latlon(&centered, cfg.origin_lat, cfg.origin_lon)
    };

    let mut corridor_csv = String::from("direction,lat,lon\n");
    for (direction, verts) in [
        (Direction::Eastbound, world.eb.vertices()),
        (Direction::Westbound, world.wb.vertices()),
    ] {
        for v in verts {
            let (lat, lon) = to_latlon(v);
            writeln!(corridor_csv, "{},{lat},{lon}", direction.as_str()).unwrap();
        }
    }

    let mut trajectory_csv = String::from("vehicle_id,t,lat,lon,speed,heading\n");
    let mut n_points = 0;
    for points in &vehicle_points {
        for p in points {
            let (lat, lon) = to_latlon(&p.pos);
            writeln!(
                trajectory_csv,
                "{},{},{lat},{lon},{},{}",
                p.vehicle_id, p.t, p.speed, p.heading
            )
            .unwrap();
            n_points += 1;
        }
    }

    let mut incident_csv =
        String::from("event_id,start_time,clear_time,lat,lon,direction,lanes_closed,kind\n");
    for inc in &incidents {
        let (lat, lon) = to_latlon(&inc.pos);
        writeln!(
            incident_csv,
            "{},{},{},{lat},{lon},{},{},{}",
            inc.event_id,
            inc.start_time,
            inc.clear_time,
            inc.direction.as_str(),
            inc.lanes_closed,
            inc.kind.as_str()
        )
        .unwrap();
    }

    let weather_csv = draw_weather(cfg, horizon_s);

    let mut ground_truth_csv = String::from("trip_id,event_id,label\n");
    let mut n_affected = 0;
    for s in &matched.samples {
        if s.label.target() == 1 {
            n_affected += 1;
        }
        writeln!(
            ground_truth_csv,
            "{},{},{}",
            s.trip_id,
            s.event_id,
            s.label.as_str()
        )
        .unwrap();
    }

    let mut by_kind = BTreeMap::new();
    let mut by_direction = BTreeMap::new();
    let mut by_lanes = BTreeMap::new();
    for inc in &incidents {
        *by_kind.entry(inc.kind.as_str().to_string()).or_insert(0) += 1;
        *by_direction
            .entry(inc.direction.as_str().to_string())
            .or_insert(0) += 1;
        *by_lanes.entry(inc.lanes_closed).or_insert(0) += 1;
    }

    let summary = ScenarioSummary {
        n_points,
        n_trips: det_trajs.len(),
        n_trips_rejected,
        n_samples: matched.samples.len(),
        n_affected,
        n_normal: matched.samples.len() - n_affected,
        n_discards: matched.discards.len(),
        by_kind,
        by_direction,
        by_lanes,
    };

    Ok(ScenarioBundle {
        corridor_csv,
        trajectory_csv,
        incident_csv,
        weather_csv,
        ground_truth_csv,
        summary,
    })
}

fn draw_incidents(cfg: &ScenarioConfig, world: &World, horizon_s: f64) -> Vec<Incident> {
    let n = cfg.n_incidents;
    if n == 0 {
        return Vec::new();
    }

    // Exact marginal pools, independently shuffled then zipped.
    let kind_counts = exact_counts(n, &cfg.kind_mix);
    let mut kinds = Vec::with_capacity(n);
    for (kind, count) in [
        (IncidentKind::StalledVehicle, kind_counts[0]),
        (IncidentKind::Accident, kind_counts[1]),
        (IncidentKind::Other, kind_counts[2]),
    ] {
        kinds.extend(std::iter::repeat_n(kind, count));
    }
    let dir_counts = exact_counts(n, &[cfg.wb_fraction, 1.0 - cfg.wb_fraction]);
    let mut dirs = Vec::with_capacity(n);
    dirs.extend(std::iter::repeat_n(Direction::Westbound, dir_counts[0]));
    dirs.extend(std::iter::repeat_n(Direction::Eastbound, dir_counts[1]));
    let lane_counts = exact_counts(n, &[cfg.two_lane_fraction, 1.0 - cfg.two_lane_fraction]);
    let mut lanes = Vec::with_capacity(n);
    lanes.extend(std::iter::repeat_n(2u32, lane_counts[0]));
    lanes.extend(std::iter::repeat_n(1u32, lane_counts[1]));

    for (i, pool) in [&mut kinds as &mut dyn AnyShuffle, &mut dirs, &mut lanes]
        .into_iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, POOL_STREAM | i as u64));
        pool.shuffle_with(&mut rng);
    }

    // Keep the event detector far enough downstream for the upstream
    // feature sets, and leave room for label windows inside the horizon.
    let chain_lo = ((UPSTREAM_REQ + 6) as f64 * SPACING_YD).max(0.1 * world.length_yd);
    let chain_hi = 0.95 * world.length_yd;
    let start_lo = PRE_WINDOW_S + 800.0;
    let start_hi = horizon_s - 2.0 * POST_WINDOW_S;
    let dur_half = cfg.incident_duration_mean_s - 900.0;

    (0..n)
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INCIDENT_STREAM | i as u64));
            let chainage = rng.random_range(chain_lo..chain_hi);
            let start_time = draw_demand_time(cfg, &mut rng, start_lo, start_hi);
            let duration = 900.0 + rng.random_range(0.0..=(2.0 * dur_half).max(f64::MIN_POSITIVE));
            let lateral = rng.random_range(-3.0..3.0);
            let direction = dirs[i];
            Incident {
                event_id: format!("e{i:04}"),
                start_time,
                clear_time: start_time + duration,
                pos: world.planar(direction, chainage, lateral),
                direction,
                lanes_closed: lanes[i],
                kind: kinds[i],
            }
        })
        .collect()
}

/// Object-safe shuffle so heterogeneous pools share one loop.
trait AnyShuffle {
    fn shuffle_with(&mut self, rng: &mut ChaCha8Rng);
}

impl<T> AnyShuffle for Vec<T> {
    fn shuffle_with(&mut self, rng: &mut ChaCha8Rng) {
        shuffle(self, rng);
    }
}

/// Relative traffic demand at time `t`: a sinusoid around 1.0.
fn demand_weight(cfg: &ScenarioConfig, t: f64) -> f64 {
    if cfg.demand_amplitude == 0.0 {
        return 1.0;
    }
    1.0 + cfg.demand_amplitude * (std::f64::consts::TAU * t / cfg.demand_period_s).sin()
}

/// Draws a time in `[lo, hi)` with density proportional to demand, by
/// rejection against the sinusoid's upper bound. Departures and incident
/// starts both use this: incident risk tracks exposure, and because the
/// two-hour normal window averages the demand wave with a quarter-cycle
/// lag while the short affected window rides its crest, exposure-weighted
/// starts steer the affected:normal ratio down toward the 1:7 target.
fn draw_demand_time(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let mut t = rng.random_range(lo..hi);
    if cfg.demand_amplitude == 0.0 {
        return t;
    }
    for _ in 0..64 {
        if rng.random_range(0.0..1.0 + cfg.demand_amplitude) < demand_weight(cfg, t) {
            break;
        }
        t = rng.random_range(lo..hi);
    }
    t
}

fn queue_zones(
    cfg: &ScenarioConfig,
    incidents: &[Incident],
    world: &World,
) -> BTreeMap<Direction, Vec<QueueZone>> {
    let mut zones: BTreeMap<Direction, Vec<QueueZone>> = BTreeMap::new();
    for inc in incidents {
        let chainage = world.corridor(inc.direction).project(&inc.pos).chainage;
        zones.entry(inc.direction).or_default().push(QueueZone {
            chain_lo: chainage - cfg.queue_length_yd,
            chain_hi: chainage,
            t_start: inc.start_time,
            t_end: inc.clear_time.max(inc.start_time + POST_WINDOW_S),
        });
    }
    zones
}

fn drive_vehicle(
    cfg: &ScenarioConfig,
    world: &World,
    zones: &BTreeMap<Direction, Vec<QueueZone>>,
    horizon_s: f64,
    v: usize,
) -> Vec<RawPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, VEHICLE_STREAM | v as u64));
    let vehicle_id = format!("v{v:05}");
    let direction = if rng.random_bool(cfg.wb_vehicle_fraction) {
        Direction::Westbound
    } else {
        Direction::Eastbound
    };
    // Conditioned on the vehicle count, an inhomogeneous Poisson arrival
    // process is exactly i.i.d. draws from the normalized demand curve.
    let t0 = draw_demand_time(cfg, &mut rng, 0.0, horizon_s);
    let speed_dist = Normal::new(cfg.base_speed_mean, cfg.base_speed_std)
        .expect("validated std is non-negative");
    let cruise = speed_dist.sample(&mut rng).max(15.0);
    let has_dwell = rng.random_bool(cfg.dwell_fraction);
    let dwell_chain = rng.random_range(0.25 * world.length_yd..0.75 * world.length_yd);
    let dwell_s = rng.random_range((GAP_S + 50.0)..(3.0 * GAP_S));

    let base_heading = match direction {
        Direction::Eastbound => 90.0,
        Direction::Westbound => 270.0,
    };
    let empty = Vec::new();
    let my_zones = zones.get(&direction).unwrap_or(&empty);

    let mut points = Vec::new();
    let mut chain = 0.0f64;
    let mut t = t0;
    let mut dwelled = false;
    while chain <= world.length_yd && points.len() < 200_000 {
        let mut mult = 1.0f64;
        for z in my_zones {
            if t >= z.t_start && t <= z.t_end && chain >= z.chain_lo && chain <= z.chain_hi {
                mult = mult.min(1.0 - cfg.speed_drop);
            }
        }
        let noise = 1.0 + rng.random_range(-0.05..0.05);
        let speed = (cruise * mult * noise).max(MIN_SPEED_MPH);
        let lateral = rng.random_range(-4.0..4.0);
        let heading = (base_heading + rng.random_range(-3.0_f64..3.0)).rem_euclid(360.0);
        points.push(RawPoint {
            vehicle_id: vehicle_id.clone(),
            t,
            pos: world.planar(direction, chain, lateral),
            speed,
            heading,
        });
        if has_dwell && !dwelled && chain >= dwell_chain {
            // Silent parked interval: no fixes, gap above the
            // segmentation threshold.
            t += dwell_s;
            dwelled = true;
        }
        let dt = (cfg.fix_interval_mean * rng.random_range(0.6..1.4)).clamp(1.0, 29.5);
        chain += speed * YD_PER_S_PER_MPH * dt;
        t += dt;
    }
    points
}

fn draw_weather(cfg: &ScenarioConfig, horizon_s: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, WEATHER_STREAM));
    let block = 7200.0;
    // Cover past the horizon so late trips never fall off the timeline.
    let end = horizon_s + 4.0 * 3600.0;
    let mut csv = String::from("start,end,rain\n");
    let mut t = 0.0;
    while t < end {
        let rain = u8::from(rng.random_bool(cfg.rain_fraction));
        writeln!(csv, "{},{},{}", t, t + block, rain).unwrap();
        t += block;
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::latlon_to_planar;

    fn small_config(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            corridor_length_miles: 4.0,
            n_vehicles: 150,
            fix_interval_mean: 10.0,
            base_speed_mean: 60.0,
            base_speed_std: 5.0,
            n_incidents: 12,
            kind_mix: [0.75, 0.1875, 0.0625],
            wb_fraction: 0.5,
            two_lane_fraction: 0.25,
            speed_drop: 0.5,
            queue_length_yd: 660.0,
            rain_fraction: 0.3,
            seed,
            horizon_hours: 30.0,
            wb_vehicle_fraction: 0.5,
            dwell_fraction: 0.15,
            incident_duration_mean_s: 1800.0,
            demand_amplitude: 0.0,
            demand_period_s: 14_400.0,
            origin_lat: 30.4,
            origin_lon: -91.1,
        }
    }

    struct ParsedFix {
        vehicle: String,
        t: f64,
        pos: GeoPoint,
        speed: f64,
        westbound: bool,
    }

    fn parse_fixes(bundle: &ScenarioBundle, cfg: &ScenarioConfig) -> Vec<ParsedFix> {
        let length_yd = cfg.corridor_length_miles * 1760.0;
        bundle
            .trajectory_csv
            .lines()
            .skip(1)
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                let planar = latlon_to_planar(
                    f[2].parse().unwrap(),
                    f[3].parse().unwrap(),
                    cfg.origin_lat,
                    cfg.origin_lon,
                );
                let heading: f64 = f[5].parse().unwrap();
                ParsedFix {
                    vehicle: f[0].to_string(),
                    t: f[1].parse().unwrap(),
                    pos: GeoPoint::new(planar.x + length_yd / 2.0, planar.y),
                    speed: f[4].parse().unwrap(),
                    westbound: heading.to_radians().sin() < 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn preset_marginals_are_exact() {
        let cfg = study_preset();
        let n = cfg.n_incidents;
        let kinds = exact_counts(n, &cfg.kind_mix);
        assert_eq!(kinds, vec![200, 48, 8]);
        let dirs = exact_counts(n, &[cfg.wb_fraction, 1.0 - cfg.wb_fraction]);
        assert_eq!(dirs, vec![153, 103]);
        let lanes = exact_counts(n, &[cfg.two_lane_fraction, 1.0 - cfg.two_lane_fraction]);
        assert_eq!(lanes, vec![14, 242]);
    }

    #[test]
    fn exact_counts_total_and_round_sensibly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..500usize);
            let raw: Vec<f64> = (0..rng.random_range(2..6usize))
                .map(|_| rng.random_range(0.01..1.0))
                .collect();
            let total: f64 = raw.iter().sum();
            let fracs: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let counts = exact_counts(n, &fracs);
            assert_eq!(counts.iter().sum::<usize>(), n);
            for (c, f) in counts.iter().zip(&fracs) {
                assert!((*c as f64 - n as f64 * f).abs() < fracs.len() as f64);
            }
        }
    }

    #[test]
    fn small_scenario_marginals_match_pools() {
        let bundle = generate_scenario(&small_config(1)).unwrap();
        let s = &bundle.summary;
        assert_eq!(s.by_kind.get("stalled_vehicle"), Some(&9));
        assert_eq!(s.by_kind.get("accident"), Some(&2));
        assert_eq!(s.by_kind.get("other"), Some(&1));
        assert_eq!(s.by_direction.get("westbound"), Some(&6));
        assert_eq!(s.by_direction.get("eastbound"), Some(&6));
        assert_eq!(s.by_lanes.get(&2), Some(&3));
        assert_eq!(s.by_lanes.get(&1), Some(&9));
    }

    #[test]
    fn generation_is_deterministic_across_thread_counts() {
        let cfg = small_config(7);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| generate_scenario(&cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.corridor_csv, b.corridor_csv);
        assert_eq!(a.trajectory_csv, b.trajectory_csv);
        assert_eq!(a.incident_csv, b.incident_csv);
        assert_eq!(a.weather_csv, b.weather_csv);
        assert_eq!(a.ground_truth_csv, b.ground_truth_csv);

        let c = generate_scenario(&small_config(8)).unwrap();
        assert_ne!(a.trajectory_csv, c.trajectory_csv);
    }

    #[test]
    fn fix_gaps_respect_the_interval_contract() {
        let cfg = small_config(11);
        let bundle = generate_scenario(&cfg).unwrap();
        let fixes = parse_fixes(&bundle, &cfg);
        let mut by_vehicle: BTreeMap<&str, Vec<&ParsedFix>> = BTreeMap::new();
        for f in &fixes {
            by_vehicle.entry(&f.vehicle).or_default().push(f);
        }
        let mut dwell_gaps = 0;
        for fixes in by_vehicle.values() {
            for w in fixes.windows(2) {
                let gap = w[1].t - w[0].t;
                assert!(gap > 0.0);
                if gap > 30.0 {
                    assert!(gap > 900.0, "mid-range gap {} breaks the contract", gap);
                    dwell_gaps += 1;
                }
            }
        }
        assert!(dwell_gaps > 0, "dwell fraction should inject trip splits");
        // Speeds positive, points on-corridor.
        let length_yd = cfg.corridor_length_miles * 1760.0;
        for f in &fixes {
            assert!(f.speed > 0.0);
            assert!((-0.001..=length_yd + 0.001).contains(&f.pos.x));
            assert!(f.pos.y.abs() <= 4.0 + 1e-6);
        }
    }

    #[test]
    fn queue_depresses_affected_speeds() {
        // Same seed with and without the signal; affected rows must show
        // the configured dip where the null run shows none.
        let mut cfg = small_config(13);
        cfg.n_vehicles = 400;
        cfg.speed_drop = 0.5;
        let signal = generate_scenario(&cfg).unwrap();
        cfg.speed_drop = 0.0;
        let null = generate_scenario(&cfg).unwrap();

        let dip = |bundle: &ScenarioBundle| {
            let fixes = parse_fixes(bundle, &cfg);
            // Queue zones from the incident CSV.
            let length_yd = cfg.corridor_length_miles * 1760.0;
            let mut zones: Vec<(f64, f64, f64, f64, bool)> = Vec::new();
            for line in bundle.incident_csv.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                let start: f64 = f[1].parse().unwrap();
                let clear: f64 = f[2].parse().unwrap();
                let planar = latlon_to_planar(
                    f[3].parse().unwrap(),
                    f[4].parse().unwrap(),
                    cfg.origin_lat,
                    cfg.origin_lon,
                );
                let x = planar.x + length_yd / 2.0;
                let wb = f[5] == "westbound";
                let chain = if wb { length_yd - x } else { x };
                zones.push((
                    chain - cfg.queue_length_yd,
                    chain,
                    start,
                    clear.max(start + 900.0),
                    wb,
                ));
            }
            let mut in_queue = Vec::new();
            let mut free = Vec::new();
            for fix in &fixes {
                // A fix belongs to a zone only in its own direction's
                // chainage frame.
                let chain = if fix.westbound {
                    length_yd - fix.pos.x
                } else {
                    fix.pos.x
                };
                let queued = zones.iter().any(|&(lo, hi, t0, t1, wb)| {
                    wb == fix.westbound && fix.t >= t0 && fix.t <= t1 && chain >= lo && chain <= hi
                });
                if queued {
                    in_queue.push(fix.speed);
                } else {
                    free.push(fix.speed);
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!(
                in_queue.len() > 30,
                "need queued fixes, got {}",
                in_queue.len()
            );
            mean(&in_queue) / mean(&free)
        };

        let signal_ratio = dip(&signal);
        let null_ratio = dip(&null);
        assert!(
            signal_ratio < 0.7,
            "queued speeds should dip at least 30%, ratio {signal_ratio}"
        );
        assert!(
            (0.85..=1.15).contains(&null_ratio),
            "no-signal run should show no dip, ratio {null_ratio}"
        );
    }

    #[test]
    fn ground_truth_is_consistent_and_nonempty() {
        let bundle = generate_scenario(&small_config(17)).unwrap();
        let s = &bundle.summary;
        assert_eq!(s.n_samples, s.n_affected + s.n_normal);
        assert!(s.n_samples > 0, "windows should capture some passes");
        assert!(s.n_normal > 0);
        let rows: Vec<&str> = bundle.ground_truth_csv.lines().skip(1).collect();
        assert_eq!(rows.len(), s.n_samples);
        for row in rows {
            let f: Vec<&str> = row.split(',').collect();
            assert_eq!(f.len(), 3);
            assert!(f[0].contains('#'), "trip id {}", f[0]);
            assert!(f[1].starts_with('e'));
            assert!(f[2] == "affected" || f[2] == "normal");
        }
    }

    #[test]
    fn weather_tiles_the_horizon() {
        let cfg = small_config(19);
        let bundle = generate_scenario(&cfg).unwrap();
        let mut prev_end = 0.0;
        let mut rainy = 0usize;
        let mut rows = 0usize;
        for line in bundle.weather_csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let start: f64 = f[0].parse().unwrap();
            let end: f64 = f[1].parse().unwrap();
            let rain: u8 = f[2].parse().unwrap();
            assert_eq!(start, prev_end, "intervals must tile without gaps");
            assert!(end > start);
            assert!(rain == 0 || rain == 1);
            rainy += rain as usize;
            prev_end = end;
            rows += 1;
        }
        assert!(prev_end >= cfg.horizon_hours * 3600.0);
        assert!(rainy > 0 && rainy < rows, "mixed weather expected");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_config(1);
        cfg.n_vehicles = 0;
        assert!(matches!(
            generate_scenario(&cfg),
            Err(SynthError::BadConfig(_))
        ));

        let mut cfg = small_config(1);
        cfg.fix_interval_mean = 30.0;
        assert!(generate_scenario(&cfg).is_err());

        let mut cfg = small_config(1);
        cfg.kind_mix = [0.5, 0.2, 0.2];
        assert!(generate_scenario(&cfg).is_err());

        let mut cfg = small_config(1);
        cfg.speed_drop = 1.5;
        assert!(generate_scenario(&cfg).is_err());

        let mut cfg = small_config(1);
        cfg.horizon_hours = 0.5;
        assert!(generate_scenario(&cfg).is_err());
    }

    #[test]
    fn corridor_centroid_equals_origin_anchor() {
        let cfg = small_config(23);
        let bundle = generate_scenario(&cfg).unwrap();
        let mut lat_sum = 0.0;
        let mut lon_sum = 0.0;
        let mut n = 0.0;
        for line in bundle.corridor_csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            lat_sum += f[1].parse::<f64>().unwrap();
            lon_sum += f[2].parse::<f64>().unwrap();
            n += 1.0;
        }
        assert!((lat_sum / n - cfg.origin_lat).abs() < 1e-9);
        assert!((lon_sum / n - cfg.origin_lon).abs() < 1e-9);
    }
}
