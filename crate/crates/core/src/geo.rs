//! Linear referencing for a highway corridor.
//!
//! A corridor is an ordered polyline per travel direction. Positions along
//! it are expressed as *chainage*: cumulative distance in yards from the
//! first vertex. Virtual detectors sit at fixed chainage intervals and act
//! as resampling anchors for the trajectory pipeline.
//!
//! All coordinates are planar yards; ingestion converts lat/lon once so
//! everything downstream stays Euclidean.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Travel direction of a carriageway. Each direction carries its own
/// corridor polyline and detector grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Eastbound,
    Westbound,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Eastbound => "eastbound",
            Direction::Westbound => "westbound",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eastbound" | "eb" => Some(Direction::Eastbound),
            "westbound" | "wb" => Some(Direction::Westbound),
            _ => None,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Planar point in yards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub fn new(x: f64, y: f64) -> GeoPoint {
        GeoPoint { x, y }
    }

    pub fn distance(&self, other: &GeoPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Result of projecting a point onto the corridor polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Distance along the corridor of the closest polyline point, yards.
    pub chainage: f64,
    /// Perpendicular distance from the query point to that closest point.
    pub offset: f64,
}

/// A fixed resampling location on one direction's corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualDetector {
    pub id: u32,
    pub direction: Direction,
    pub chainage: f64,
    pub position: GeoPoint,
}

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("corridor needs at least 2 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("consecutive duplicate vertex at index {0}")]
    DuplicateVertex(usize),
    #[error("non-finite vertex coordinate at index {0}")]
    NonFiniteVertex(usize),
    #[error("detector spacing must be positive and finite, got {0}")]
    NonPositiveSpacing(f64),
    #[error("empty detector list")]
    NoDetectors,
}

/// One direction's polyline with per-vertex cumulative chainage.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorGeometry {
    direction: Direction,
    vertices: Vec<GeoPoint>,
    cum_chainage: Vec<f64>,
}

impl CorridorGeometry {
    /// Builds a corridor from ordered vertices, computing the running
    /// polyline length. Rejects degenerate inputs (fewer than two vertices,
    /// consecutive duplicates, non-finite coordinates).
    pub fn new(
        direction: Direction,
        vertices: Vec<GeoPoint>,
    ) -> Result<CorridorGeometry, GeoError> {
        if vertices.len() < 2 {
            return Err(GeoError::TooFewVertices(vertices.len()));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(GeoError::NonFiniteVertex(i));
            }
        }
        let mut cum = Vec::with_capacity(vertices.len());
        cum.push(0.0);
        for i in 1..vertices.len() {
            let seg = vertices[i - 1].distance(&vertices[i]);
            if seg == 0.0 {
                return Err(GeoError::DuplicateVertex(i));
            }
            cum.push(cum[i - 1] + seg);
        }
        Ok(CorridorGeometry {
            direction,
            vertices,
            cum_chainage: cum,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    pub fn cum_chainage(&self) -> &[f64] {
        &self.cum_chainage
    }

    pub fn total_length(&self) -> f64 {
        *self.cum_chainage.last().unwrap()
    }

    /// Interpolates the polyline point at a given chainage, clamped to
    /// `[0, total_length]`.
    pub fn point_at(&self, chainage: f64) -> GeoPoint {
        let c = chainage.clamp(0.0, self.total_length());
        // Index of the segment containing c: last vertex with cum <= c.
        let i = match self
            .cum_chainage
            .binary_search_by(|v| v.partial_cmp(&c).unwrap())
        {
            Ok(i) => i,
            Err(ins) => ins - 1,
        };
        if i + 1 >= self.vertices.len() {
            return *self.vertices.last().unwrap();
        }
        let seg_len = self.cum_chainage[i + 1] - self.cum_chainage[i];
        let t = (c - self.cum_chainage[i]) / seg_len;
        let a = self.vertices[i];
        let b = self.vertices[i + 1];
        GeoPoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
    }

    /// Projects a point onto the polyline: chainage of the closest polyline
    /// point over all segments and its perpendicular offset. Total function;
    /// ties between segments resolve to the lower chainage.
    pub fn project(&self, p: &GeoPoint) -> Projection {
        let mut best = Projection {
            chainage: 0.0,
            offset: f64::INFINITY,
        };
        for i in 0..self.vertices.len() - 1 {
            let a = self.vertices[i];
            let b = self.vertices[i + 1];
            let abx = b.x - a.x;
            let aby = b.y - a.y;
            let seg_len2 = abx * abx + aby * aby;
            let t = (((p.x - a.x) * abx + (p.y - a.y) * aby) / seg_len2).clamp(0.0, 1.0);
            let cx = a.x + t * abx;
            let cy = a.y + t * aby;
            let dist = (p.x - cx).hypot(p.y - cy);
            if dist < best.offset {
                let seg_len = self.cum_chainage[i + 1] - self.cum_chainage[i];
                best = Projection {
                    chainage: self.cum_chainage[i] + t * seg_len,
                    offset: dist,
                };
            }
        }
        best
    }

    /// Places detectors at chainages `0, spacing, 2*spacing, ...` up to the
    /// corridor length; count is `floor(L / spacing) + 1`.
    pub fn place_detectors(&self, spacing: f64) -> Result<Vec<VirtualDetector>, GeoError> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(GeoError::NonPositiveSpacing(spacing));
        }
        let count = (self.total_length() / spacing).floor() as u32 + 1;
        let detectors = (0..count)
            .map(|id| {
                let chainage = id as f64 * spacing;
                VirtualDetector {
                    id,
                    direction: self.direction,
                    chainage,
                    position: self.point_at(chainage),
                }
            })
            .collect();
        Ok(detectors)
    }
}

/// Mean Earth radius in yards (6,371,008.8 m over 0.9144 m/yd).
pub const EARTH_RADIUS_YD: f64 = 6_371_008.8 / 0.9144;

/// Local equirectangular projection of WGS84 coordinates about a reference
/// point: x east, y north, both in yards. Adequate at corridor scale; the
/// inverse is [`planar_to_latlon`].
pub fn latlon_to_planar(lat: f64, lon: f64, ref_lat: f64, ref_lon: f64) -> GeoPoint {
    let scale = EARTH_RADIUS_YD * std::f64::consts::PI / 180.0;
    GeoPoint::new(
        (lon - ref_lon) * scale * ref_lat.to_radians().cos(),
        (lat - ref_lat) * scale,
    )
}

/// Inverse of [`latlon_to_planar`] about the same reference point;
/// returns (lat, lon).
pub fn planar_to_latlon(pos: &GeoPoint, ref_lat: f64, ref_lon: f64) -> (f64, f64) {
    let scale = EARTH_RADIUS_YD * std::f64::consts::PI / 180.0;
    (
        ref_lat + pos.y / scale,
        ref_lon + pos.x / (scale * ref_lat.to_radians().cos()),
    )
}

/// Detector minimizing `|detector.chainage - chainage|`; ties break toward
/// the lower id.
pub fn nearest_detector(
    detectors: &[VirtualDetector],
    chainage: f64,
) -> Result<&VirtualDetector, GeoError> {
    detectors
        .iter()
        .fold(None::<&VirtualDetector>, |best, d| match best {
            Some(b) if (d.chainage - chainage).abs() < (b.chainage - chainage).abs() => Some(d),
            Some(b) => Some(b),
            None => Some(d),
        })
        .ok_or(GeoError::NoDetectors)
}
