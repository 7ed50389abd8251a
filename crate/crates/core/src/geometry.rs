//! Digitized ribbon curves and discrete curvature.
//!
//! A [`RibbonCurve`] is an ordered planar polyline extracted from one
//! loading-state frame. [`compute_curvature`] evaluates the discrete
//! parametric curvature
//!
//! ```text
//! kappa(i) = |x'(i)·y''(i) − y'(i)·x''(i)| / (x'(i)² + y'(i)²)^(3/2)
//! ```
//!
//! with derivatives taken on the point-index grid, plus a signed variant used
//! for tensile-side selection. The sign convention is fixed: `kappa_signed`
//! is positive where the curve bends toward decreasing `y` in frame
//! coordinates (toward the opposing ribbon for the upper ribbon as imaged),
//! under the curve's stored point order. Reversing the point order flips the
//! sign pointwise.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Coordinate unit of a digitized curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Pixel,
    Mm,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Pixel => write!(f, "pixel"),
            Unit::Mm => write!(f, "mm"),
        }
    }
}

/// Finite-difference scheme used for the curve derivatives.
///
/// `Central` is second-order central differences at interior points with
/// one-sided second-order stencils at the two endpoints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DerivativeScheme {
    #[default]
    Central,
}

/// Relative tolerance for the stationary-point guard: a tangent is degenerate
/// when x'² + y'² < 1e-12 · (bounding-box diagonal)².
const STATIONARY_TOL: f64 = 1e-12;

/// Curvature maxima at or below this are treated as a flat profile.
const FLAT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("curve needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("consecutive duplicate point at index {index}")]
    DuplicatePoint { index: usize },
    #[error("anchor index {index} out of range for {len} points")]
    AnchorOutOfRange { index: usize, len: usize },
    #[error("degenerate tangent at point {index}: stationary or fold-back sampling")]
    DegenerateTangent { index: usize },
    #[error("flat profile: max curvature {max:.3e} at or below floor {floor:.3e}")]
    FlatProfile { max: f64, floor: f64 },
    #[error("resample station {station} outside curve arc length [0, {length}]")]
    StationOutOfRange { station: f64, length: f64 },
    #[error("state label {0} outside 1..=8")]
    BadStateLabel(u8),
    #[error("reading curve file: {0}")]
    Io(#[from] std::io::Error),
    #[error("curve file row {row}: {message}")]
    Parse { row: usize, message: String },
}

/// Ordered planar polyline digitized from one loading-state frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RibbonCurve {
    points: Vec<[f64; 2]>,
    state_label: u8,
    anchor_index: usize,
    unit: Unit,
}

impl RibbonCurve {
    /// Validates and wraps a point list.
    ///
    /// Coordinates must be finite and no two consecutive points may coincide.
    /// Two points are enough to carry a polyline; curvature itself demands at
    /// least five (checked by [`compute_curvature`]).
    pub fn new(
        points: Vec<[f64; 2]>,
        state_label: u8,
        anchor_index: usize,
        unit: Unit,
    ) -> Result<Self, GeometryError> {
        if !(1..=8).contains(&state_label) {
            return Err(GeometryError::BadStateLabel(state_label));
        }
        if points.len() < 2 {
            return Err(GeometryError::TooFewPoints {
                needed: 2,
                got: points.len(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(GeometryError::NonFinite { index: i });
            }
        }
        for i in 1..points.len() {
            if points[i] == points[i - 1] {
                return Err(GeometryError::DuplicatePoint { index: i });
            }
        }
        if anchor_index >= points.len() {
            return Err(GeometryError::AnchorOutOfRange {
                index: anchor_index,
                len: points.len(),
            });
        }
        Ok(Self {
            points,
            state_label,
            anchor_index,
            unit,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn state_label(&self) -> u8 {
        self.state_label
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    /// Cumulative arc length at every point, starting at 0.
    pub fn arclength(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.points.len());
        let mut s = 0.0;
        acc.push(0.0);
        for w in self.points.windows(2) {
            s += segment_len(w[0], w[1]);
            acc.push(s);
        }
        acc
    }

    /// Total polyline length.
    pub fn total_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| segment_len(w[0], w[1]))
            .sum()
    }

    /// Diagonal of the axis-aligned bounding box.
    fn bbox_diagonal(&self) -> f64 {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in &self.points {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        ((max[0] - min[0]).powi(2) + (max[1] - min[1]).powi(2)).sqrt()
    }
}

fn segment_len(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

/// Per-point curvature along a curve's arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureProfile {
    arclength: Vec<f64>,
    kappa: Vec<f64>,
    kappa_signed: Vec<f64>,
}

impl CurvatureProfile {
    /// Assembles a profile, enforcing the type invariants:
    /// `kappa[i] == |kappa_signed[i]|`, all values finite and non-negative,
    /// arc length strictly increasing.
    pub fn new(
        arclength: Vec<f64>,
        kappa_signed: Vec<f64>,
    ) -> Result<Self, GeometryError> {
        assert_eq!(arclength.len(), kappa_signed.len());
        for (i, k) in kappa_signed.iter().enumerate() {
            if !k.is_finite() {
                return Err(GeometryError::NonFinite { index: i });
            }
        }
        for i in 1..arclength.len() {
            debug_assert!(
                arclength[i] > arclength[i - 1],
                "arclength not strictly increasing at {i}"
            );
        }
        let kappa = kappa_signed.iter().map(|k| k.abs()).collect();
        Ok(Self {
            arclength,
            kappa,
            kappa_signed,
        })
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    pub fn arclength(&self) -> &[f64] {
        &self.arclength
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn kappa_signed(&self) -> &[f64] {
        &self.kappa_signed
    }
}

/// Discrete curvature of `curve` under the given derivative scheme.
///
/// The unsigned series is the absolute value of the signed one; both are
/// reported on the curve's cumulative arc length.
pub fn compute_curvature(
    curve: &RibbonCurve,
    scheme: DerivativeScheme,
) -> Result<CurvatureProfile, GeometryError> {
    let pts = curve.points();
    let n = pts.len();
    if n < 5 {
        return Err(GeometryError::TooFewPoints { needed: 5, got: n });
    }
    let DerivativeScheme::Central = scheme;

    let tol = STATIONARY_TOL * curve.bbox_diagonal().powi(2);
    let mut signed = Vec::with_capacity(n);
    for i in 0..n {
        let (d1, d2) = stencil(pts, i, n);
        let speed_sq = d1[0] * d1[0] + d1[1] * d1[1];
        if speed_sq < tol {
            return Err(GeometryError::DegenerateTangent { index: i });
        }
        let cross = d1[0] * d2[1] - d1[1] * d2[0];
        // Negated so that bending toward decreasing y comes out positive.
        signed.push(-cross / speed_sq.powf(1.5));
    }
    CurvatureProfile::new(curve.arclength(), signed)
}

/// First and second index-grid derivatives at point `i`.
fn stencil(pts: &[[f64; 2]], i: usize, n: usize) -> ([f64; 2], [f64; 2]) {
    let mut d1 = [0.0; 2];
    let mut d2 = [0.0; 2];
    for d in 0..2 {
        if i == 0 {
            d1[d] = (-3.0 * pts[0][d] + 4.0 * pts[1][d] - pts[2][d]) / 2.0;
            d2[d] = 2.0 * pts[0][d] - 5.0 * pts[1][d] + 4.0 * pts[2][d] - pts[3][d];
        } else if i == n - 1 {
            d1[d] = (3.0 * pts[n - 1][d] - 4.0 * pts[n - 2][d] + pts[n - 3][d]) / 2.0;
            d2[d] = 2.0 * pts[n - 1][d] - 5.0 * pts[n - 2][d] + 4.0 * pts[n - 3][d]
                - pts[n - 4][d];
        } else {
            d1[d] = (pts[i + 1][d] - pts[i - 1][d]) / 2.0;
            d2[d] = pts[i + 1][d] - 2.0 * pts[i][d] + pts[i - 1][d];
        }
    }
    (d1, d2)
}

/// Scales a profile so the unsigned maximum becomes exactly 1.
///
/// The signed series is scaled by the same factor and the arc-length axis is
/// untouched.
pub fn normalize_profile(profile: &CurvatureProfile) -> Result<CurvatureProfile, GeometryError> {
    let max = profile
        .kappa
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max > FLAT_FLOOR) {
        return Err(GeometryError::FlatProfile {
            max,
            floor: FLAT_FLOOR,
        });
    }
    let signed = profile.kappa_signed.iter().map(|k| k / max).collect();
    CurvatureProfile::new(profile.arclength.clone(), signed)
}

/// Resamples a curve to `n` points at equal arc-length spacing.
///
/// The first and last points are preserved exactly; the anchor index is
/// remapped to the station nearest the original anchor's arc-length position.
pub fn resample_arclength(curve: &RibbonCurve, n: usize) -> Result<RibbonCurve, GeometryError> {
    if n < 5 {
        return Err(GeometryError::TooFewPoints { needed: 5, got: n });
    }
    let acc = curve.arclength();
    let total = *acc.last().expect("non-empty");
    let stations: Vec<f64> = (0..n)
        .map(|j| total * j as f64 / (n - 1) as f64)
        .collect();
    let mut points = sample_stations(curve, &acc, &stations)?;
    // Pin the endpoints bit-exactly.
    points[0] = curve.points[0];
    points[n - 1] = curve.points[curve.points.len() - 1];

    let anchor_s = acc[curve.anchor_index];
    let anchor_index = nearest_station(&stations, anchor_s);
    RibbonCurve::new(points, curve.state_label, anchor_index, curve.unit)
}

/// Resamples a curve at explicit arc-length stations (used by placement to
/// put all eight states onto one shared grid).
pub(crate) fn resample_at(
    curve: &RibbonCurve,
    stations: &[f64],
    anchor_station: f64,
) -> Result<RibbonCurve, GeometryError> {
    let acc = curve.arclength();
    let points = sample_stations(curve, &acc, stations)?;
    let anchor_index = nearest_station(stations, anchor_station);
    RibbonCurve::new(points, curve.state_label, anchor_index, curve.unit)
}

fn nearest_station(stations: &[f64], s: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &sj) in stations.iter().enumerate() {
        let d = (sj - s).abs();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn sample_stations(
    curve: &RibbonCurve,
    acc: &[f64],
    stations: &[f64],
) -> Result<Vec<[f64; 2]>, GeometryError> {
    let total = *acc.last().expect("non-empty");
    let pts = curve.points();
    let mut out = Vec::with_capacity(stations.len());
    let mut seg = 0usize;
    for &s in stations {
        if s < -1e-12 || s > total * (1.0 + 1e-12) + 1e-12 {
            return Err(GeometryError::StationOutOfRange {
                station: s,
                length: total,
            });
        }
        let s = s.clamp(0.0, total);
        while seg + 2 < acc.len() && acc[seg + 1] < s {
            seg += 1;
        }
        // Stations are non-decreasing in every caller, but rewind defensively
        // so the function stays correct for arbitrary input.
        while seg > 0 && acc[seg] > s {
            seg -= 1;
        }
        let span = acc[seg + 1] - acc[seg];
        let t = if span > 0.0 { (s - acc[seg]) / span } else { 0.0 };
        out.push([
            pts[seg][0] + t * (pts[seg + 1][0] - pts[seg][0]),
            pts[seg][1] + t * (pts[seg + 1][1] - pts[seg][1]),
        ]);
    }
    Ok(out)
}

/// Reads a curve from CSV with columns `x,y` (header optional), ordered
/// tip-to-tip.
pub fn read_curve_csv(
    path: &Path,
    state_label: u8,
    anchor_index: usize,
    unit: Unit,
) -> Result<RibbonCurve, GeometryError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| GeometryError::Parse {
            row: 0,
            message: e.to_string(),
        })?;
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GeometryError::Parse {
            row: row + 1,
            message: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(GeometryError::Parse {
                row: row + 1,
                message: format!("expected 2 columns, got {}", record.len()),
            });
        }
        match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => points.push([x, y]),
            _ if row == 0 => continue, // header line
            _ => {
                return Err(GeometryError::Parse {
                    row: row + 1,
                    message: format!("cannot parse '{},{}'", &record[0], &record[1]),
                })
            }
        }
    }
    RibbonCurve::new(points, state_label, anchor_index, unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn line_curve(n: usize) -> RibbonCurve {
        let pts = (0..n)
            .map(|k| {
                let x = 10.0 * k as f64 / (n - 1) as f64;
                [x, 2.0 * x]
            })
            .collect();
        RibbonCurve::new(pts, 1, 0, Unit::Mm).unwrap()
    }

    fn circle_curve(r: f64, n: usize) -> RibbonCurve {
        let pts = (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        RibbonCurve::new(pts, 1, 0, Unit::Mm).unwrap()
    }

    fn parabola_curve(n: usize) -> RibbonCurve {
        let pts = (0..n)
            .map(|k| {
                let x = -1.0 + 2.0 * k as f64 / (n - 1) as f64;
                [x, x * x]
            })
            .collect();
        RibbonCurve::new(pts, 1, 0, Unit::Mm).unwrap()
    }

    #[test]
    fn straight_line_has_zero_curvature() {
        let profile = compute_curvature(&line_curve(1000), DerivativeScheme::Central).unwrap();
        for &k in &profile.kappa()[1..999] {
            assert!(k <= 1e-9, "line curvature {k}");
        }
    }

    #[test]
    fn circle_curvature_is_reciprocal_radius() {
        let profile = compute_curvature(&circle_curve(2.0, 1000), DerivativeScheme::Central)
            .unwrap();
        for &k in &profile.kappa()[1..999] {
            assert!((k - 0.5).abs() / 0.5 < 1e-3, "circle curvature {k}");
        }
    }

    #[test]
    fn circle_curvature_spread_is_tight() {
        let profile = compute_curvature(&circle_curve(2.0, 1000), DerivativeScheme::Central)
            .unwrap();
        let interior = &profile.kappa()[1..999];
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        let var = interior.iter().map(|k| (k - mean).powi(2)).sum::<f64>()
            / interior.len() as f64;
        assert!(var.sqrt() / mean < 1e-3);
    }

    #[test]
    fn parabola_apex_curvature() {
        let profile = compute_curvature(&parabola_curve(2001), DerivativeScheme::Central)
            .unwrap();
        assert_abs_diff_eq!(profile.kappa()[1000], 2.0, epsilon = 1e-3);
    }

    #[test]
    fn downward_bend_is_positive_signed() {
        // y = -x²: bends toward decreasing y when traversed left to right.
        let pts = (0..201)
            .map(|k| {
                let x = -1.0 + 2.0 * k as f64 / 200.0;
                [x, -x * x]
            })
            .collect();
        let curve = RibbonCurve::new(pts, 1, 0, Unit::Mm).unwrap();
        let profile = compute_curvature(&curve, DerivativeScheme::Central).unwrap();
        assert!(profile.kappa_signed()[100] > 0.0);
    }

    #[test]
    fn degenerate_tangent_detected() {
        // Fold-back: point i+1 equals point i-1, so the central difference
        // vanishes even though consecutive points are distinct.
        let pts = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
        ];
        let curve = RibbonCurve::new(pts, 1, 0, Unit::Mm).unwrap();
        match compute_curvature(&curve, DerivativeScheme::Central) {
            Err(GeometryError::DegenerateTangent { .. }) => {}
            other => panic!("expected DegenerateTangent, got {other:?}"),
        }
    }

    #[test]
    fn normalize_divides_by_max() {
        let profile =
            CurvatureProfile::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 4.0]).unwrap();
        let norm = normalize_profile(&profile).unwrap();
        assert_eq!(norm.kappa(), &[0.0, 0.5, 1.0]);
        assert_eq!(norm.arclength(), profile.arclength());
    }

    #[test]
    fn normalize_is_scale_invariant() {
        let base = vec![0.1, -0.7, 0.3, 0.2];
        let s = vec![0.0, 1.0, 2.0, 3.0];
        let a = normalize_profile(&CurvatureProfile::new(s.clone(), base.clone()).unwrap())
            .unwrap();
        let scaled: Vec<f64> = base.iter().map(|k| k * 37.5).collect();
        let b = normalize_profile(&CurvatureProfile::new(s, scaled).unwrap()).unwrap();
        for (x, y) in a.kappa_signed().iter().zip(b.kappa_signed()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_flat_profile() {
        let profile =
            CurvatureProfile::new(vec![0.0, 1.0], vec![1e-15, 1e-15]).unwrap();
        match normalize_profile(&profile) {
            Err(GeometryError::FlatProfile { .. }) => {}
            other => panic!("expected FlatProfile, got {other:?}"),
        }
    }

    #[test]
    fn resample_three_point_polyline() {
        let curve = RibbonCurve::new(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            1,
            0,
            Unit::Mm,
        )
        .unwrap();
        let out = resample_arclength(&curve, 5).unwrap();
        let xs: Vec<f64> = out.points().iter().map(|p| p[0]).collect();
        for (x, expect) in xs.iter().zip([0.0, 0.5, 1.0, 1.5, 2.0]) {
            assert_abs_diff_eq!(x, &expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn resample_is_idempotent_on_uniform_curves() {
        let curve = line_curve(64);
        let out = resample_arclength(&curve, 64).unwrap();
        for (a, b) in curve.points().iter().zip(out.points()) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-9);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn resample_preserves_arc_length_on_circle_arc() {
        let pts = (0..500)
            .map(|k| {
                let t = std::f64::consts::PI * k as f64 / 499.0;
                [3.0 * t.cos(), 3.0 * t.sin()]
            })
            .collect();
        let curve = RibbonCurve::new(pts, 1, 0, Unit::Mm).unwrap();
        let before = curve.total_length();
        let after = resample_arclength(&curve, 100).unwrap().total_length();
        assert!((before - after).abs() / before < 1e-3);
    }

    fn rotate_translate(curve: &RibbonCurve, theta: f64, tx: f64, ty: f64) -> RibbonCurve {
        let (s, c) = theta.sin_cos();
        let pts = curve
            .points()
            .iter()
            .map(|p| [c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty])
            .collect();
        RibbonCurve::new(pts, curve.state_label(), curve.anchor_index(), curve.unit()).unwrap()
    }

    fn wavy_curve(a: f64, b: f64) -> RibbonCurve {
        let pts = (0..128)
            .map(|k| {
                let x = k as f64 / 127.0 * 4.0;
                [x, a * (b * x).sin()]
            })
            .collect();
        RibbonCurve::new(pts, 1, 0, Unit::Mm).unwrap()
    }

    proptest! {
        #[test]
        fn curvature_invariant_under_rigid_motion(
            a in 0.1f64..1.0,
            b in 0.5f64..2.0,
            theta in -3.0f64..3.0,
            tx in -10.0f64..10.0,
            ty in -10.0f64..10.0,
        ) {
            let curve = wavy_curve(a, b);
            let moved = rotate_translate(&curve, theta, tx, ty);
            let p0 = compute_curvature(&curve, DerivativeScheme::Central).unwrap();
            let p1 = compute_curvature(&moved, DerivativeScheme::Central).unwrap();
            for (x, y) in p0.kappa().iter().zip(p1.kappa()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn curvature_scales_inversely(
            a in 0.1f64..1.0,
            b in 0.5f64..2.0,
            c in 0.1f64..10.0,
        ) {
            let curve = wavy_curve(a, b);
            let scaled_pts = curve.points().iter().map(|p| [p[0] * c, p[1] * c]).collect();
            let scaled = RibbonCurve::new(scaled_pts, 1, 0, Unit::Mm).unwrap();
            let p0 = compute_curvature(&curve, DerivativeScheme::Central).unwrap();
            let p1 = compute_curvature(&scaled, DerivativeScheme::Central).unwrap();
            // "Relative" against the profile's curvature scale: pointwise
            // relative error is meaningless at near-inflection points.
            let kmax = p0.kappa().iter().cloned().fold(0.0, f64::max);
            for (x, y) in p0.kappa().iter().zip(p1.kappa()) {
                prop_assert!((y - x / c).abs() <= 1e-9 * kmax / c);
            }
        }

        #[test]
        fn signed_curvature_flips_under_reversal(a in 0.1f64..1.0, b in 0.5f64..2.0) {
            let curve = wavy_curve(a, b);
            let mut rev_pts: Vec<[f64; 2]> = curve.points().to_vec();
            rev_pts.reverse();
            let rev = RibbonCurve::new(rev_pts, 1, 0, Unit::Mm).unwrap();
            let p0 = compute_curvature(&curve, DerivativeScheme::Central).unwrap();
            let p1 = compute_curvature(&rev, DerivativeScheme::Central).unwrap();
            let n = p0.len();
            for i in 0..n {
                prop_assert!((p0.kappa_signed()[i] + p1.kappa_signed()[n - 1 - i]).abs() < 1e-9);
            }
        }
    }
}
