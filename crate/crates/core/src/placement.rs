//! Sensor-region scoring across the eight loading states.
//!
//! The eight state curves are resampled onto one shared arc-length station
//! grid (signed offsets from the anchor point), their curvature profiles are
//! zero-phase filtered and normalized, and sliding windows are scored by how
//! much the window-mean normalized curvature varies across states plus a
//! bonus for adjacent-state sign flips of the signed curvature. The side to
//! print the well pattern on is the surface under tensile strain for the
//! dominant bending direction.

use std::fmt;

use thiserror::Error;

use crate::dsp::{self, DspError, LowPassSpec};
use crate::exec;
use crate::geometry::{
    self, CurvatureProfile, DerivativeScheme, GeometryError, RibbonCurve,
};

/// Weight of the adjacent-state sign-flip bonus in the window score.
const FLIP_WEIGHT: f64 = 0.25;

/// A sign flip only counts when both window means clear 1% of the normalized
/// curvature scale. Near-balanced windows otherwise harvest flip bonuses
/// from filter leakage and digitization jitter around zero.
const FLIP_FLOOR: f64 = 0.01;

/// Windows whose score stays at or below this carry no placement information.
const FLAT_SCORE_FLOOR: f64 = 1e-6;

/// |state-averaged signed curvature| below this makes the tensile side
/// ambiguous (not robust to digitization noise).
const AMBIGUITY_FLOOR: f64 = 0.05;

/// Tolerance for the shared-grid invariant.
const GRID_TOL: f64 = 1e-9;

pub const N_STATES: usize = 8;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("need exactly 8 state curves, got {0}")]
    WrongStateCount(usize),
    #[error("state {0} appears more than once")]
    DuplicateState(u8),
    #[error("state {0} is missing")]
    MissingState(u8),
    #[error("profiles do not share one arclength grid")]
    GridMismatch,
    #[error("profile length {profile} does not match curve length {curve}")]
    LengthMismatch { profile: usize, curve: usize },
    #[error("curves share no arc-length overlap around the anchor")]
    EmptyOverlap,
    #[error("window and stride must be positive, got {window} / {stride}")]
    BadWindow { window: f64, stride: f64 },
    #[error("no window shows curvature variation above the flat-score floor")]
    NoVariation,
    #[error("tensile side ambiguous: |state-averaged signed curvature| {0:.4} below floor")]
    AmbiguousSide(f64),
    #[error("region [{lo:.3}, {hi:.3}] outside the station grid")]
    RegionOutsideGrid { lo: f64, hi: f64 },
    #[error("malformed report at line {line}: {message}")]
    ParseReport { line: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Which ribbon surface carries the printed well pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Top,
    Bottom,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Top => "top",
            Side::Bottom => "bottom",
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Top => Side::Bottom,
            Side::Bottom => Side::Top,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top" => Ok(Side::Top),
            "bottom" => Ok(Side::Bottom),
            other => Err(format!("unknown side '{other}'")),
        }
    }
}

/// A candidate sensor region on the signed station axis (arc-length offset
/// from the anchor point, in curve units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorRegion {
    pub center: f64,
    pub half_width: f64,
    pub side: Side,
    pub score: f64,
}

/// Outcome of the tensile-side decision, with the deciding mean attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceChoice {
    pub side: Side,
    /// State-averaged signed normalized curvature over the region.
    pub mean_signed: f64,
}

/// The eight state curves on one shared station grid with matching filtered,
/// normalized curvature profiles.
#[derive(Debug, Clone)]
pub struct StateCurveSet {
    curves: Vec<RibbonCurve>,
    profiles: Vec<CurvatureProfile>,
}

impl StateCurveSet {
    /// Validates the set invariants: exactly eight curves labeled 1..8, one
    /// profile per curve of matching length, all profiles on one grid.
    pub fn new(
        mut curves: Vec<RibbonCurve>,
        mut profiles: Vec<CurvatureProfile>,
    ) -> Result<Self, PlacementError> {
        if curves.len() != N_STATES || profiles.len() != N_STATES {
            return Err(PlacementError::WrongStateCount(curves.len()));
        }
        let mut order: Vec<usize> = (0..N_STATES).collect();
        order.sort_by_key(|&i| curves[i].state_label());
        let mut seen = [false; N_STATES + 1];
        for &i in &order {
            let label = curves[i].state_label() as usize;
            if seen[label] {
                return Err(PlacementError::DuplicateState(label as u8));
            }
            seen[label] = true;
        }
        for label in 1..=N_STATES {
            if !seen[label] {
                return Err(PlacementError::MissingState(label as u8));
            }
        }
        // Reorder both vectors so index k holds state k+1.
        let mut sorted_curves = Vec::with_capacity(N_STATES);
        let mut sorted_profiles = Vec::with_capacity(N_STATES);
        for &i in &order {
            sorted_curves.push(curves[i].clone());
            sorted_profiles.push(profiles[i].clone());
        }
        curves = sorted_curves;
        profiles = sorted_profiles;

        for (c, p) in curves.iter().zip(&profiles) {
            if c.points().len() != p.len() {
                return Err(PlacementError::LengthMismatch {
                    profile: p.len(),
                    curve: c.points().len(),
                });
            }
        }
        let grid = profiles[0].arclength();
        for p in &profiles[1..] {
            if p.arclength().len() != grid.len() {
                return Err(PlacementError::GridMismatch);
            }
            for (a, b) in p.arclength().iter().zip(grid) {
                if (a - b).abs() > GRID_TOL {
                    return Err(PlacementError::GridMismatch);
                }
            }
        }
        Ok(Self { curves, profiles })
    }

    /// Full pipeline from raw digitized curves: resample all eight onto one
    /// signed station grid around the anchor, compute curvature, zero-phase
    /// filter the signed series, normalize.
    pub fn from_curves(
        curves: &[RibbonCurve],
        stations: usize,
        cutoff_ratio: f64,
    ) -> Result<Self, PlacementError> {
        if curves.len() != N_STATES {
            return Err(PlacementError::WrongStateCount(curves.len()));
        }
        // Signed extent (offset from anchor) common to all curves.
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut anchors = Vec::with_capacity(curves.len());
        for c in curves {
            let acc = c.arclength();
            let s_anchor = acc[c.anchor_index()];
            anchors.push(s_anchor);
            lo = lo.max(-s_anchor);
            hi = hi.min(acc[acc.len() - 1] - s_anchor);
        }
        if !(hi > lo) {
            return Err(PlacementError::EmptyOverlap);
        }
        let grid: Vec<f64> = (0..stations)
            .map(|j| lo + (hi - lo) * j as f64 / (stations - 1) as f64)
            .collect();

        let spec = LowPassSpec::new(cutoff_ratio)?;
        let coeffs = dsp::design_butterworth2(&spec);
        let pad = spec.settle_len();

        let indexed: Vec<(usize, &RibbonCurve)> = curves.iter().enumerate().collect();
        let results: Vec<Result<(RibbonCurve, CurvatureProfile), PlacementError>> =
            exec::map_slice(&indexed, |&(i, curve)| {
                let abs_stations: Vec<f64> = grid.iter().map(|u| u + anchors[i]).collect();
                let resampled = geometry::resample_at(curve, &abs_stations, anchors[i])?;
                let raw = geometry::compute_curvature(&resampled, DerivativeScheme::Central)?;
                let filtered_signed = dsp::apply_zero_phase(&coeffs, pad, raw.kappa_signed())?;
                let profile = CurvatureProfile::new(grid.clone(), filtered_signed)?;
                let profile = geometry::normalize_profile(&profile)?;
                Ok((resampled, profile))
            });
        let mut out_curves = Vec::with_capacity(N_STATES);
        let mut out_profiles = Vec::with_capacity(N_STATES);
        for r in results {
            let (c, p) = r?;
            out_curves.push(c);
            out_profiles.push(p);
        }
        Self::new(out_curves, out_profiles)
    }

    /// Shared signed station grid (arc-length offset from the anchor).
    pub fn stations(&self) -> &[f64] {
        self.profiles[0].arclength()
    }

    /// Curves ordered by state 1..8.
    pub fn curves(&self) -> &[RibbonCurve] {
        &self.curves
    }

    /// Profiles ordered by state 1..8.
    pub fn profiles(&self) -> &[CurvatureProfile] {
        &self.profiles
    }

    fn window_indices(&self, center: f64, half_width: f64) -> Vec<usize> {
        self.stations()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= center - half_width - GRID_TOL && s <= center + half_width + GRID_TOL)
            .map(|(i, _)| i)
            .collect()
    }

    /// Window-mean normalized curvature per state, unsigned and signed.
    fn window_means(&self, idx: &[usize]) -> ([f64; N_STATES], [f64; N_STATES]) {
        let mut unsigned = [0.0; N_STATES];
        let mut signed = [0.0; N_STATES];
        for (k, p) in self.profiles.iter().enumerate() {
            let mut su = 0.0;
            let mut ss = 0.0;
            for &i in idx {
                su += p.kappa()[i];
                ss += p.kappa_signed()[i];
            }
            unsigned[k] = su / idx.len() as f64;
            signed[k] = ss / idx.len() as f64;
        }
        (unsigned, signed)
    }
}

fn window_score(unsigned: &[f64; N_STATES], signed: &[f64; N_STATES]) -> f64 {
    let mean = unsigned.iter().sum::<f64>() / N_STATES as f64;
    let var = unsigned.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / N_STATES as f64;
    let flips = signed
        .windows(2)
        .filter(|w| w[0] * w[1] < 0.0 && w[0].abs() > FLIP_FLOOR && w[1].abs() > FLIP_FLOOR)
        .count();
    var + FLIP_WEIGHT * flips as f64 / (N_STATES - 1) as f64
}

/// Scores sliding windows over the station grid and returns the surviving
/// regions, best first.
///
/// Candidate centers step by `stride` from the low end of the grid; a window
/// must fit inside the grid and must not contain the anchor (station 0).
/// Overlapping candidates are suppressed at one window width around each
/// kept region. Ordering is by descending score, then ascending center.
pub fn score_regions(
    set: &StateCurveSet,
    window: f64,
    stride: f64,
) -> Result<Vec<SensorRegion>, PlacementError> {
    if !(window > 0.0 && stride > 0.0) {
        return Err(PlacementError::BadWindow { window, stride });
    }
    let stations = set.stations();
    let (lo, hi) = (stations[0], stations[stations.len() - 1]);
    let half = window / 2.0;

    let mut centers = Vec::new();
    let mut k = 0usize;
    loop {
        let c = lo + half + k as f64 * stride;
        if c + half > hi + GRID_TOL {
            break;
        }
        // The anchor sits between the two sensor territories; windows that
        // reach it are invalid.
        if c - half > 0.0 || c + half < 0.0 {
            centers.push(c);
        }
        k += 1;
    }
    if centers.is_empty() {
        return Err(PlacementError::NoVariation);
    }

    let scored: Vec<Option<SensorRegion>> = exec::map_slice(&centers, |&c| {
        let idx = set.window_indices(c, half);
        if idx.is_empty() {
            return None;
        }
        let (unsigned, signed) = set.window_means(&idx);
        let score = window_score(&unsigned, &signed);
        let mean_signed = signed.iter().sum::<f64>() / N_STATES as f64;
        let side = if mean_signed >= 0.0 { Side::Bottom } else { Side::Top };
        Some(SensorRegion {
            center: c,
            half_width: half,
            side,
            score,
        })
    });

    let mut regions: Vec<SensorRegion> = scored.into_iter().flatten().collect();
    if regions.iter().all(|r| r.score <= FLAT_SCORE_FLOOR) {
        return Err(PlacementError::NoVariation);
    }
    regions.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.center.total_cmp(&b.center))
    });
    let mut kept: Vec<SensorRegion> = Vec::new();
    for r in regions {
        if r.score <= FLAT_SCORE_FLOOR {
            continue;
        }
        if kept.iter().all(|k| (k.center - r.center).abs() >= window - GRID_TOL) {
            kept.push(r);
        }
    }
    Ok(kept)
}

/// Decides the tensile side for a region: bottom when the state-averaged
/// signed curvature is positive (bending toward the opposing ribbon
/// stretches the lower surface), top otherwise.
pub fn select_surface(
    set: &StateCurveSet,
    region: &SensorRegion,
) -> Result<SurfaceChoice, PlacementError> {
    let stations = set.stations();
    let (lo, hi) = (stations[0], stations[stations.len() - 1]);
    let (rlo, rhi) = (region.center - region.half_width, region.center + region.half_width);
    if rlo < lo - GRID_TOL || rhi > hi + GRID_TOL {
        return Err(PlacementError::RegionOutsideGrid { lo: rlo, hi: rhi });
    }
    let idx = set.window_indices(region.center, region.half_width);
    if idx.is_empty() {
        return Err(PlacementError::RegionOutsideGrid { lo: rlo, hi: rhi });
    }
    let (_, signed) = set.window_means(&idx);
    let mean_signed = signed.iter().sum::<f64>() / N_STATES as f64;
    if mean_signed.abs() < AMBIGUITY_FLOOR {
        return Err(PlacementError::AmbiguousSide(mean_signed.abs()));
    }
    let side = if mean_signed > 0.0 { Side::Bottom } else { Side::Top };
    Ok(SurfaceChoice { side, mean_signed })
}

/// Serializes the per-station, per-state normalized curvature table followed
/// by the selected regions.
///
/// Layout: a `station_mm,state,kappa_norm,kappa_signed_norm` table (stations
/// outer, states inner), then a literal `# regions` line and a
/// `center_mm,half_width_mm,side,score` block. Floats use the shortest
/// representation that round-trips exactly.
pub fn emit_placement_report(set: &StateCurveSet, regions: &[SensorRegion]) -> String {
    let mut out = String::from("station_mm,state,kappa_norm,kappa_signed_norm\n");
    let stations = set.stations();
    for (i, s) in stations.iter().enumerate() {
        for (k, p) in set.profiles().iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s,
                k + 1,
                p.kappa()[i],
                p.kappa_signed()[i]
            ));
        }
    }
    out.push_str("# regions\n");
    out.push_str("center_mm,half_width_mm,side,score\n");
    for r in regions {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.center, r.half_width, r.side, r.score
        ));
    }
    out
}

/// Parses a placement report back into its region list (round-trip check and
/// downstream tooling).
pub fn parse_placement_report(report: &str) -> Result<Vec<SensorRegion>, PlacementError> {
    let mut lines = report.lines().enumerate();
    for (_, line) in lines.by_ref() {
        if line.trim() == "# regions" {
            break;
        }
    }
    let mut regions = Vec::new();
    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() || line == "center_mm,half_width_mm,side,score" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(PlacementError::ParseReport {
                line: n + 1,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| {
            s.parse::<f64>().map_err(|e| PlacementError::ParseReport {
                line: n + 1,
                message: e.to_string(),
            })
        };
        regions.push(SensorRegion {
            center: parse_f(fields[0])?,
            half_width: parse_f(fields[1])?,
            side: fields[2].parse().map_err(|message| PlacementError::ParseReport {
                line: n + 1,
                message,
            })?,
            score: parse_f(fields[3])?,
        });
    }
    Ok(regions)
}
