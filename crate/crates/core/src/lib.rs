//! Optical proprioception toolkit for electro-ribbon actuators.
//!
//! The crate covers the full software path from digitized ribbon geometry to
//! streaming bending-state estimates:
//!
//! 1. **geometry** – ribbon curves, discrete curvature, arc-length resampling.
//! 2. **dsp** – second-order Butterworth low-pass design and zero-phase
//!    filtering of curvature profiles.
//! 3. **placement** – scoring of candidate sensor regions across the eight
//!    loading states and tensile-side selection.
//! 4. **signal** – optical trial recordings, ambient correction, offset
//!    removal, trial averaging, state extraction, first-state normalization.
//! 5. **svm** – from-scratch soft-margin SVM with RBF kernel: SMO dual
//!    solver, one-vs-one multiclass aggregation, JSON model files.
//! 6. **mapgrid** – decision-region rasterization and CSV/PPM export.
//! 7. **stream** – streaming classification of two-channel frames into state
//!    events plus the manifold-adherence report.
//! 8. **synth** – deterministic synthetic-trial generator used as the test
//!    oracle for calibration, classification, and invariance checks.
//!
//! `pipeline` ties the calibration chain together for the CLI and for
//! integration tests.
//!
//! With the default `parallel` feature the window scoring, pairwise machine
//! training, and grid rasterization inner loops run on rayon; disabling the
//! feature swaps in sequential equivalents with identical results.

pub mod dsp;
mod exec;
pub mod geometry;
pub mod mapgrid;
pub mod pipeline;
pub mod placement;
pub mod signal;
pub mod stream;
pub mod svm;
pub mod synth;

pub use dsp::{BiquadCoefficients, DspError, LowPassSpec};
pub use geometry::{CurvatureProfile, DerivativeScheme, GeometryError, RibbonCurve, Unit};
pub use mapgrid::{DecisionGrid, GridBounds, MapError, MapFormat};
pub use placement::{PlacementError, SensorRegion, Side, StateCurveSet, SurfaceChoice};
pub use signal::{
    Channel, ChannelSeries, ConditionAverage, CorrectedTrial, RawFrame, SignalError, StateAnchor,
    StateDataset, StateSample, TrialRecording,
};
pub use stream::{
    ClassificationEvent, CorrectedFrame, ManifoldReport, StreamError, StreamRun, TrajectorySample,
};
pub use svm::{
    BinarySvm, FeatureStandardizer, KernelParams, MulticlassSvm, SvmError, TrainConfig,
};
pub use synth::{BucklingSpec, TrajectorySpec};
