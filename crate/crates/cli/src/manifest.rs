//! Run manifest: one JSON file naming the inputs of a full pipeline run.
//!
//! ```json
//! {
//!   "curves": {"1": "curves/open_s1.csv", "...": "..."},
//!   "curve_dir": "curves",
//!   "anchor": "start",
//!   "trials": ["trials/t0.jsonl", "trials/t1.jsonl", "trials/t2.jsonl"],
//!   "exclusion": [4.0, 6.0],
//!   "end_time": 14.0,
//!   "out_dir": "out",
//!   "gamma": null,
//!   "c": 1.0
//! }
//! ```
//!
//! `curves` maps state labels "1".."8" to CSV paths; alternatively
//! `curve_dir` is scanned for files with an `_s<k>.csv` suffix. Individual
//! command-line flags override manifest fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use proprio_core::geometry::{read_curve_csv, RibbonCurve, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorSpec {
    /// Anchor at the first digitized point.
    #[default]
    Start,
    /// Anchor at the middle point (ribbon anchored at its center).
    Center,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub curves: Option<BTreeMap<String, PathBuf>>,
    #[serde(default)]
    pub curve_dir: Option<PathBuf>,
    #[serde(default)]
    pub anchor: Option<AnchorSpec>,
    #[serde(default)]
    pub trials: Vec<PathBuf>,
    #[serde(default)]
    pub exclusion: Option<(f64, f64)>,
    #[serde(default)]
    pub end_time: Option<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Ok(manifest.rebase(base))
    }

    /// Interprets relative paths against the manifest's directory.
    fn rebase(mut self, base: &Path) -> Self {
        let fix = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        self.curves = self
            .curves
            .map(|m| m.into_iter().map(|(k, v)| (k, fix(v))).collect());
        self.curve_dir = self.curve_dir.map(fix);
        self.trials = self.trials.into_iter().map(fix).collect();
        self.out_dir = self.out_dir.map(fix);
        self
    }

    /// Resolves the eight per-state curve files, from the explicit map or by
    /// scanning `curve_dir` for `_s<k>.csv` suffixes.
    pub fn curve_paths(&self) -> Result<[PathBuf; 8]> {
        let mut paths: [Option<PathBuf>; 8] = Default::default();
        if let Some(map) = &self.curves {
            for (key, path) in map {
                let state: usize = key
                    .parse()
                    .map_err(|_| anyhow!("curve key '{key}' is not a state index"))?;
                if !(1..=8).contains(&state) {
                    bail!("curve state {state} outside 1..=8");
                }
                paths[state - 1] = Some(path.clone());
            }
        } else if let Some(dir) = &self.curve_dir {
            for entry in fs::read_dir(dir)
                .with_context(|| format!("scanning curve directory {}", dir.display()))?
            {
                let path = entry?.path();
                if let Some(state) = state_from_suffix(&path) {
                    paths[state - 1] = Some(path);
                }
            }
        } else {
            bail!("manifest names neither `curves` nor `curve_dir`");
        }
        let mut out = Vec::with_capacity(8);
        for (i, p) in paths.into_iter().enumerate() {
            match p {
                Some(p) => out.push(p),
                None => bail!("curve file for state {} missing", i + 1),
            }
        }
        Ok(out.try_into().expect("eight entries"))
    }

    /// Loads and labels the eight state curves.
    pub fn load_curves(&self) -> Result<Vec<RibbonCurve>> {
        let anchor = self.anchor.unwrap_or_default();
        let mut curves = Vec::with_capacity(8);
        for (i, path) in self.curve_paths()?.iter().enumerate() {
            let state = i as u8 + 1;
            // Anchor index 0 placeholder; recomputed for Center below.
            let curve = read_curve_csv(path, state, 0, Unit::Mm)
                .with_context(|| format!("curve file {}", path.display()))?;
            let curve = match anchor {
                AnchorSpec::Start => curve,
                AnchorSpec::Center => {
                    let mid = curve.points().len() / 2;
                    RibbonCurve::new(curve.points().to_vec(), state, mid, curve.unit())
                        .expect("validated curve stays valid")
                }
            };
            curves.push(curve);
        }
        Ok(curves)
    }
}

/// Extracts `k` from an `_s<k>.csv` filename suffix.
pub fn state_from_suffix(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_suffix(".csv")?;
    let idx = stem.rfind("_s")?;
    let state: usize = stem[idx + 2..].parse().ok()?;
    (1..=8).contains(&state).then_some(state)
}
