//! Circular statistics for compass headings in degrees `[0, 360)`.

/// Wraps any angle into `[0, 360)`.
pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid(−1e-17, 360) can return 360.0 itself; fold it back.
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Signed shortest arc from `a` to `b`, in `(-180, 180]`.
pub fn signed_diff_deg(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Magnitude of the shortest arc between two headings, in `[0, 180]`.
pub fn abs_diff_deg(a: f64, b: f64) -> f64 {
    signed_diff_deg(a, b).abs()
}

/// Interpolates along the shortest arc from `a` to `b` by fraction `t`.
pub fn interp_deg(a: f64, b: f64, t: f64) -> f64 {
    normalize_deg(a + t * signed_diff_deg(a, b))
}

/// Resultant vector of a set of headings: `(sum cos, sum sin)`.
pub fn resultant(degs: &[f64]) -> (f64, f64) {
    let mut sx = 0.0;
    let mut sy = 0.0;
    for &d in degs {
        let r = d.to_radians();
        sx += r.cos();
        sy += r.sin();
    }
    (sx, sy)
}

/// Circular mean of headings via the resultant vector, in `[0, 360)`.
/// Returns `None` for an empty slice or a (numerically) zero resultant,
/// where the mean direction is undefined.
pub fn circular_mean_deg(degs: &[f64]) -> Option<f64> {
    if degs.is_empty() {
        return None;
    }
    let (sx, sy) = resultant(degs);
    let norm = sx.hypot(sy);
    if norm <= 1e-9 * degs.len() as f64 {
        return None;
    }
    Some(normalize_deg(sy.atan2(sx).to_degrees()))
}
