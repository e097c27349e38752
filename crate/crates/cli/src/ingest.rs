//! Input readers: corridor vertices, GPS fixes, incident logs, and the
//! weather timeline. All geographic columns arrive as WGS84 lat/lon and
//! are converted to the planar yard frame by an equirectangular
//! projection about the corridor's vertex centroid, so every stage
//! downstream works in the same frame the detector grid is built in.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use vdet_core::features::{WeatherInterval, WeatherTimeline};
use vdet_core::geo::{
    latlon_to_planar, CorridorGeometry, Direction, VirtualDetector, EARTH_RADIUS_YD,
};
use vdet_core::incident::{Incident, IncidentKind};
use vdet_core::trajectory::RawPoint;

/// Corridor geometry per direction plus the projection parameters every
/// other reader reuses.
#[derive(Debug, Clone)]
pub struct Corridors {
    pub reference: (f64, f64),
    pub geometry: BTreeMap<Direction, CorridorGeometry>,
    pub detectors: BTreeMap<Direction, Vec<VirtualDetector>>,
}

/// Conversion parameters echoed into the run report so a reader can
/// reproduce the planar frame exactly.
#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct Conversion {
    pub reference_lat: f64,
    pub reference_lon: f64,
    pub earth_radius_yd: f64,
    pub model: String,
}

impl Corridors {
    pub fn conversion(&self) -> Conversion {
        Conversion {
            reference_lat: self.reference.0,
            reference_lon: self.reference.1,
            earth_radius_yd: EARTH_RADIUS_YD,
            model: "equirectangular about the corridor vertex centroid".to_string(),
        }
    }
}

fn check_latlon(lat: f64, lon: f64, what: &str, record: u64) -> Result<()> {
    if !(lat.is_finite() && lon.is_finite() && lat.abs() <= 85.0 && lon.abs() <= 180.0) {
        bail!("{what} record {record}: implausible coordinates ({lat}, {lon})");
    }
    Ok(())
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

/// Reads `direction,lat,lon` vertex rows (travel order per direction),
/// converts them about their joint centroid, and places detectors every
/// `spacing_yd` yards.
pub fn load_corridor(path: &Path, spacing_yd: f64) -> Result<Corridors> {
    let mut rdr = reader(path)?;
    let mut rows: Vec<(Direction, f64, f64)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: record {}", path.display(), i + 1))?;
        if rec.len() != 3 {
            bail!(
                "{}: record {}: expected direction,lat,lon",
                path.display(),
                i + 1
            );
        }
        let dir = Direction::parse(&rec[0]).ok_or_else(|| {
            anyhow!(
                "{}: record {}: bad direction '{}'",
                path.display(),
                i + 1,
                &rec[0]
            )
        })?;
        let lat: f64 = rec[1]
            .parse()
            .with_context(|| format!("record {} lat", i + 1))?;
        let lon: f64 = rec[2]
            .parse()
            .with_context(|| format!("record {} lon", i + 1))?;
        check_latlon(lat, lon, "corridor", i as u64 + 1)?;
        rows.push((dir, lat, lon));
    }
    if rows.is_empty() {
        bail!("{}: corridor file has no vertices", path.display());
    }
    let n = rows.len() as f64;
    let ref_lat = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let ref_lon = rows.iter().map(|r| r.2).sum::<f64>() / n;

    let mut vertices: BTreeMap<Direction, Vec<_>> = BTreeMap::new();
    for (dir, lat, lon) in &rows {
        vertices
            .entry(*dir)
            .or_default()
            .push(latlon_to_planar(*lat, *lon, ref_lat, ref_lon));
    }
    let mut geometry = BTreeMap::new();
    let mut detectors = BTreeMap::new();
    for (dir, verts) in vertices {
        let corr = CorridorGeometry::new(dir, verts)
            .with_context(|| format!("corridor polyline for {}", dir.as_str()))?;
        let dets = corr
            .place_detectors(spacing_yd)
            .with_context(|| format!("placing detectors for {}", dir.as_str()))?;
        geometry.insert(dir, corr);
        detectors.insert(dir, dets);
    }
    Ok(Corridors {
        reference: (ref_lat, ref_lon),
        geometry,
        detectors,
    })
}

/// Reads `vehicle_id,t,lat,lon,speed,heading` fixes into the planar frame.
pub fn load_trajectories(path: &Path, reference: (f64, f64)) -> Result<Vec<RawPoint>> {
    let mut rdr = reader(path)?;
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: record {}", path.display(), i + 1))?;
        if rec.len() != 6 {
            bail!(
                "{}: record {}: expected vehicle_id,t,lat,lon,speed,heading",
                path.display(),
                i + 1
            );
        }
        let fail = |field: &str| format!("{}: record {}: {field}", path.display(), i + 1);
        let t: f64 = rec[1].parse().with_context(|| fail("t"))?;
        let lat: f64 = rec[2].parse().with_context(|| fail("lat"))?;
        let lon: f64 = rec[3].parse().with_context(|| fail("lon"))?;
        let speed: f64 = rec[4].parse().with_context(|| fail("speed"))?;
        let heading: f64 = rec[5].parse().with_context(|| fail("heading"))?;
        check_latlon(lat, lon, "trajectory", i as u64 + 1)?;
        if !(t.is_finite() && speed.is_finite() && speed >= 0.0 && heading.is_finite()) {
            bail!("{}", fail("non-finite or negative field"));
        }
        points.push(RawPoint {
            vehicle_id: rec[0].to_string(),
            t,
            pos: latlon_to_planar(lat, lon, reference.0, reference.1),
            speed,
            heading: heading.rem_euclid(360.0),
        });
    }
    Ok(points)
}

/// Reads `event_id,start_time,clear_time,lat,lon,direction,lanes_closed,kind`.
pub fn load_incidents(path: &Path, reference: (f64, f64)) -> Result<Vec<Incident>> {
    let mut rdr = reader(path)?;
    let mut incidents = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: record {}", path.display(), i + 1))?;
        if rec.len() != 8 {
            bail!(
                "{}: record {}: expected event_id,start_time,clear_time,lat,lon,direction,lanes_closed,kind",
                path.display(),
                i + 1
            );
        }
        let fail = |field: &str| format!("{}: record {}: {field}", path.display(), i + 1);
        let start_time: f64 = rec[1].parse().with_context(|| fail("start_time"))?;
        let clear_time: f64 = rec[2].parse().with_context(|| fail("clear_time"))?;
        let lat: f64 = rec[3].parse().with_context(|| fail("lat"))?;
        let lon: f64 = rec[4].parse().with_context(|| fail("lon"))?;
        check_latlon(lat, lon, "incident", i as u64 + 1)?;
        if !(start_time.is_finite() && clear_time.is_finite() && clear_time >= start_time) {
            bail!("{}", fail("bad time window"));
        }
        let direction = Direction::parse(&rec[5])
            .ok_or_else(|| anyhow!(fail(&format!("bad direction '{}'", &rec[5]))))?;
        let lanes_closed: u32 = rec[6].parse().with_context(|| fail("lanes_closed"))?;
        let kind = IncidentKind::parse(&rec[7])
            .ok_or_else(|| anyhow!(fail(&format!("bad kind '{}'", &rec[7]))))?;
        incidents.push(Incident {
            event_id: rec[0].to_string(),
            start_time,
            clear_time,
            pos: latlon_to_planar(lat, lon, reference.0, reference.1),
            direction,
            lanes_closed,
            kind,
        });
    }
    Ok(incidents)
}

/// Reads `start,end,rain` half-open intervals.
pub fn load_weather(path: &Path) -> Result<WeatherTimeline> {
    let mut rdr = reader(path)?;
    let mut intervals = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: record {}", path.display(), i + 1))?;
        if rec.len() != 3 {
            bail!(
                "{}: record {}: expected start,end,rain",
                path.display(),
                i + 1
            );
        }
        let fail = |field: &str| format!("{}: record {}: {field}", path.display(), i + 1);
        let start: f64 = rec[0].parse().with_context(|| fail("start"))?;
        let end: f64 = rec[1].parse().with_context(|| fail("end"))?;
        let rain = match &rec[2] {
            "0" => false,
            "1" => true,
            other => bail!("{}", fail(&format!("rain must be 0 or 1, got '{other}'"))),
        };
        intervals.push(WeatherInterval { start, end, rain });
    }
    WeatherTimeline::new(intervals).with_context(|| format!("validating {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn corridor_centroid_is_reference() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "corridor.csv",
            "direction,lat,lon\n\
             eastbound,30.0,-91.1\n\
             eastbound,30.0,-90.9\n\
             westbound,30.0,-90.9\n\
             westbound,30.0,-91.1\n",
        );
        let c = load_corridor(&path, 110.0).unwrap();
        assert!((c.reference.0 - 30.0).abs() < 1e-12);
        assert!((c.reference.1 + 91.0).abs() < 1e-12);
        // Both polylines live on y = 0 and run ~0.2 degrees of longitude.
        for corr in c.geometry.values() {
            for v in corr.vertices() {
                assert!(v.y.abs() < 1e-6, "corridor off the reference latitude");
            }
        }
        let eb = &c.geometry[&Direction::Eastbound];
        let expected = EARTH_RADIUS_YD * (30.0f64.to_radians().cos()) * 0.2f64.to_radians();
        assert!((eb.total_length() - expected).abs() < 1e-6);
        assert!(!c.detectors[&Direction::Eastbound].is_empty());
    }

    #[test]
    fn trajectory_rows_become_planar_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "traj.csv",
            "vehicle_id,t,lat,lon,speed,heading\n\
             v1,0.0,30.0,-91.0,60.0,90.0\n\
             v1,10.0,30.0,-90.999,60.0,450.0\n",
        );
        let pts = load_trajectories(&path, (30.0, -91.0)).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts[0].pos.x.abs() < 1e-9 && pts[0].pos.y.abs() < 1e-9);
        assert!(pts[1].pos.x > 0.0);
        assert_eq!(pts[1].heading, 90.0); // normalized into [0, 360)
    }

    #[test]
    fn bad_rows_are_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "traj.csv",
            "vehicle_id,t,lat,lon,speed,heading\n\
             v1,0.0,300.0,-91.0,60.0,90.0\n",
        );
        let err = load_trajectories(&path, (30.0, -91.0)).unwrap_err();
        assert!(format!("{err:#}").contains("record 1"), "{err:#}");

        let path = write_file(
            dir.path(),
            "traj2.csv",
            "vehicle_id,t,lat,lon,speed,heading\n\
             v1,0.0,30.0,-91.0,-2.0,90.0\n",
        );
        assert!(load_trajectories(&path, (30.0, -91.0)).is_err());
    }

    #[test]
    fn incident_and_weather_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inc_path = write_file(
            dir.path(),
            "inc.csv",
            "event_id,start_time,clear_time,lat,lon,direction,lanes_closed,kind\n\
             e1,100.0,900.0,30.0,-91.0,westbound,1,accident\n",
        );
        let incs = load_incidents(&inc_path, (30.0, -91.0)).unwrap();
        assert_eq!(incs.len(), 1);
        assert_eq!(incs[0].direction, Direction::Westbound);
        assert_eq!(incs[0].kind, IncidentKind::Accident);

        let w_path = write_file(
            dir.path(),
            "weather.csv",
            "start,end,rain\n0,7200,0\n7200,14400,1\n",
        );
        let tl = load_weather(&w_path).unwrap();
        assert_eq!(tl.rain_at(8000.0), Some(true));
        assert_eq!(tl.rain_at(100.0), Some(false));

        let bad = write_file(dir.path(), "weather_bad.csv", "start,end,rain\n0,100,2\n");
        assert!(load_weather(&bad).is_err());
    }
}
