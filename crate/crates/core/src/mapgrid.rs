//! Decision-region rasterization over the normalized-signal plane.
//!
//! A [`DecisionGrid`] samples the classifier at every cell center of a square
//! grid. Internally labels are row-major with y ascending (row 0 at the low
//! edge, x inner); the PPM export flips rows so the image reads like a plot
//! with y up. Exports are deterministic byte for byte.

use std::io::Write;

use thiserror::Error;

use crate::exec;
use crate::svm::{MulticlassSvm, SvmError};

/// Fixed class palette: state k renders as `PALETTE[k − 1]` (RGB).
pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

pub const MAX_RESOLUTION: usize = 4096;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("degenerate bounds: x=({0}, {1}), y=({2}, {3})")]
    BadBounds(f64, f64, f64, f64),
    #[error("resolution {0} outside [2, {MAX_RESOLUTION}]")]
    BadResolution(usize),
    #[error("resolution {0} not supported by the ppm exporter (max {MAX_RESOLUTION})")]
    UnsupportedResolution(usize),
    #[error("map csv line {line}: {message}")]
    ParseCsv { line: usize, message: String },
    #[error(transparent)]
    Svm(#[from] SvmError),
}

/// Feature-plane extent of a rasterized map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl GridBounds {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Result<Self, MapError> {
        let ok = x.0.is_finite()
            && x.1.is_finite()
            && y.0.is_finite()
            && y.1.is_finite()
            && x.0 < x.1
            && y.0 < y.1;
        if !ok {
            return Err(MapError::BadBounds(x.0, x.1, y.0, y.1));
        }
        Ok(Self { x, y })
    }

    /// Bounding box of `points` expanded by 15% per side (a fixed margin
    /// stands in when the box degenerates).
    pub fn around(points: &[[f64; 2]]) -> Result<Self, MapError> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for d in 0..2 {
            let span = max[d] - min[d];
            let margin = if span > 0.0 { 0.15 * span } else { 0.5 };
            lo[d] = min[d] - margin;
            hi[d] = max[d] + margin;
        }
        Self::new((lo[0], hi[0]), (lo[1], hi[1]))
    }
}

/// A training point stamped onto exported maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayPoint {
    pub x: f64,
    pub y: f64,
    pub label: u8,
}

/// Class labels sampled at the cell centers of a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionGrid {
    bounds: GridBounds,
    resolution: usize,
    labels: Vec<u8>,
    overlay: Vec<OverlayPoint>,
}

impl DecisionGrid {
    pub fn bounds(&self) -> GridBounds {
        self.bounds
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Row-major labels, y outer ascending, x inner ascending.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn overlay(&self) -> &[OverlayPoint] {
        &self.overlay
    }

    pub fn with_overlay(mut self, overlay: Vec<OverlayPoint>) -> Self {
        self.overlay = overlay;
        self
    }

    pub fn label_at(&self, ix: usize, iy: usize) -> u8 {
        self.labels[iy * self.resolution + ix]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let (x0, x1) = self.bounds.x;
        let (y0, y1) = self.bounds.y;
        let r = self.resolution as f64;
        [
            x0 + (ix as f64 + 0.5) * (x1 - x0) / r,
            y0 + (iy as f64 + 0.5) * (y1 - y0) / r,
        ]
    }

    fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (x0, x1) = self.bounds.x;
        let (y0, y1) = self.bounds.y;
        if x < x0 || x > x1 || y < y0 || y > y1 {
            return None;
        }
        let r = self.resolution;
        let ix = (((x - x0) / (x1 - x0)) * r as f64) as usize;
        let iy = (((y - y0) / (y1 - y0)) * r as f64) as usize;
        Some((ix.min(r - 1), iy.min(r - 1)))
    }
}

/// Labels every cell center with the model's prediction.
pub fn rasterize(
    model: &MulticlassSvm,
    bounds: GridBounds,
    resolution: usize,
) -> Result<DecisionGrid, MapError> {
    if !(2..=MAX_RESOLUTION).contains(&resolution) {
        return Err(MapError::BadResolution(resolution));
    }
    let grid = DecisionGrid {
        bounds,
        resolution,
        labels: Vec::new(),
        overlay: Vec::new(),
    };
    let rows: Vec<Result<Vec<u8>, SvmError>> = exec::map_indexed(resolution, |iy| {
        (0..resolution)
            .map(|ix| {
                let c = grid.cell_center(ix, iy);
                model.predict(&c)
            })
            .collect()
    });
    let mut labels = Vec::with_capacity(resolution * resolution);
    for row in rows {
        labels.extend(row?);
    }
    Ok(DecisionGrid { labels, ..grid })
}

/// Map export format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Ppm,
}

impl std::str::FromStr for MapFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(MapFormat::Csv),
            "ppm" => Ok(MapFormat::Ppm),
            other => Err(format!("unknown map format '{other}' (csv|ppm)")),
        }
    }
}

/// Serializes the grid in the requested format.
pub fn export_map(grid: &DecisionGrid, format: MapFormat) -> Result<Vec<u8>, MapError> {
    match format {
        MapFormat::Csv => Ok(export_csv(grid).into_bytes()),
        MapFormat::Ppm => export_ppm(grid),
    }
}

/// `x,y,label` rows, y outer ascending, x inner ascending.
pub fn export_csv(grid: &DecisionGrid) -> String {
    let mut out = String::from("x,y,label\n");
    for iy in 0..grid.resolution {
        for ix in 0..grid.resolution {
            let c = grid.cell_center(ix, iy);
            out.push_str(&format!("{},{},{}\n", c[0], c[1], grid.label_at(ix, iy)));
        }
    }
    out
}

/// Parses an exported map CSV back into `(x, y, label)` rows.
pub fn parse_map_csv(text: &str) -> Result<Vec<(f64, f64, u8)>, MapError> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(MapError::ParseCsv {
                line: n + 1,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let parse_err = |e: String| MapError::ParseCsv {
            line: n + 1,
            message: e,
        };
        rows.push((
            fields[0].parse::<f64>().map_err(|e| parse_err(e.to_string()))?,
            fields[1].parse::<f64>().map_err(|e| parse_err(e.to_string()))?,
            fields[2].parse::<u8>().map_err(|e| parse_err(e.to_string()))?,
        ));
    }
    Ok(rows)
}

/// Binary P6 image, top row at the high-y edge, training points stamped as
/// 3×3 black squares.
pub fn export_ppm(grid: &DecisionGrid) -> Result<Vec<u8>, MapError> {
    let r = grid.resolution;
    if r > MAX_RESOLUTION {
        return Err(MapError::UnsupportedResolution(r));
    }
    let mut out = Vec::with_capacity(r * r * 3 + 32);
    write!(&mut out, "P6\n{r} {r}\n255\n").expect("header write");
    let mut pixels = vec![0u8; r * r * 3];
    for iy in 0..r {
        let img_row = r - 1 - iy;
        for ix in 0..r {
            let label = grid.label_at(ix, iy);
            let color = PALETTE[((label.max(1) - 1) as usize) % PALETTE.len()];
            let o = (img_row * r + ix) * 3;
            pixels[o..o + 3].copy_from_slice(&color);
        }
    }
    for p in &grid.overlay {
        if let Some((ix, iy)) = grid.cell_of(p.x, p.y) {
            let img_row = r - 1 - iy;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let col = ix as i64 + dx;
                    let row = img_row as i64 + dy;
                    if col >= 0 && col < r as i64 && row >= 0 && row < r as i64 {
                        let o = (row as usize * r + col as usize) * 3;
                        pixels[o..o + 3].copy_from_slice(&[0, 0, 0]);
                    }
                }
            }
        }
    }
    out.extend_from_slice(&pixels);
    Ok(out)
}
