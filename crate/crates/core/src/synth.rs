//! Deterministic synthetic-trial generator.
//!
//! Trials trace a piecewise-linear path through eight anchor feature pairs,
//! starting from a rest hold at anchor 1 (the pre-motion plateau the
//! calibration baseline and the streaming reference window rely on). A speed
//! factor compresses or stretches the whole timeline, emulating the
//! voltage-dependent timing shift; optional per-channel Gaussian noise and a
//! raised-cosine buckling bump complete the signal model.
//!
//! Randomness comes from ChaCha8 seeded with the spec's `seed`, turned into
//! normal deviates by the Box–Muller transform (cosine branch only): with
//! `u1, u2` uniform on (0, 1], `z = sqrt(−2·ln u1)·cos(2π·u2)`. One deviate
//! is drawn per channel per sample, channel 1 first. Identical specs produce
//! bit-identical trials on any platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{Channel, RawFrame, TrialRecording};

/// Synthetic ADC full scale: feature 1.0 maps to 1000 counts, keeping the
/// integer quantization error at or below 0.1%.
pub const FULL_SCALE: f64 = crate::signal::FULL_SCALE_COUNTS;

/// Constant ambient level baked into every synthetic frame.
pub const AMBIENT_COUNTS: u32 = 10;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need exactly 8 anchors, got {0}")]
    WrongAnchorCount(usize),
    #[error("anchors[0] must be (1, 1), got ({0}, {1})")]
    BadFirstAnchor(f64, f64),
    #[error("need exactly 7 segment durations, got {0}")]
    WrongDurationCount(usize),
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("rest fraction {0} outside [0, 1)")]
    BadRestFraction(f64),
    #[error("buckling interval [{0}, {1}] is empty or reversed")]
    BadBuckling(f64, f64),
    #[error("trial count must be at least 1")]
    NoTrials,
}

/// Raised-cosine disturbance injected into both channels, expressed in
/// nominal (speed-1) trajectory time like the segment durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucklingSpec {
    pub start_s: f64,
    pub end_s: f64,
    pub amplitude: f64,
}

/// Full description of one synthetic condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    /// Eight feature anchors; the first is pinned at (1, 1).
    #[serde(default = "default_anchors")]
    pub anchors: Vec<[f64; 2]>,
    /// Nominal durations of the seven inter-anchor segments, seconds.
    #[serde(default = "default_durations")]
    pub segment_durations: Vec<f64>,
    /// Fraction of the first segment spent holding anchor 1 before the ramp
    /// begins. Keeps every anchor at its nominal segment-boundary time while
    /// giving the trial a genuine pre-motion plateau.
    #[serde(default = "default_rest_fraction")]
    pub rest_fraction: f64,
    /// Timeline multiplier: 2.0 runs the same trajectory in half the time.
    #[serde(default = "default_speed")]
    pub speed_factor: f64,
    /// Per-channel Gaussian noise in normalized feature units.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub buckling: Option<BucklingSpec>,
    #[serde(default = "default_load")]
    pub load_g: f64,
    #[serde(default = "default_voltage", rename = "voltage_kV")]
    pub voltage_kv: f64,
}

fn default_anchors() -> Vec<[f64; 2]> {
    vec![
        [1.00, 1.00],
        [0.93, 0.89],
        [0.84, 0.77],
        [0.74, 0.66],
        [0.63, 0.55],
        [0.51, 0.46],
        [0.38, 0.40],
        [0.25, 0.35],
    ]
}

fn default_durations() -> Vec<f64> {
    vec![2.0; 7]
}

fn default_rest_fraction() -> f64 {
    0.5
}

fn default_speed() -> f64 {
    1.0
}

fn default_sample_rate() -> f64 {
    50.0
}

fn default_load() -> f64 {
    12.3
}

fn default_voltage() -> f64 {
    4.0
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            anchors: default_anchors(),
            segment_durations: default_durations(),
            rest_fraction: default_rest_fraction(),
            speed_factor: default_speed(),
            noise_sigma: 0.0,
            sample_rate: default_sample_rate(),
            seed: 0,
            buckling: None,
            load_g: default_load(),
            voltage_kv: default_voltage(),
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.anchors.len() != 8 {
            return Err(SynthError::WrongAnchorCount(self.anchors.len()));
        }
        if self.anchors[0] != [1.0, 1.0] {
            return Err(SynthError::BadFirstAnchor(
                self.anchors[0][0],
                self.anchors[0][1],
            ));
        }
        if self.segment_durations.len() != 7 {
            return Err(SynthError::WrongDurationCount(self.segment_durations.len()));
        }
        for (field, value) in [
            ("speed_factor", self.speed_factor),
            ("sample_rate", self.sample_rate),
        ] {
            if !(value > 0.0) {
                return Err(SynthError::NonPositive { field, value });
            }
        }
        for &d in &self.segment_durations {
            if !(d > 0.0) {
                return Err(SynthError::NonPositive {
                    field: "segment_durations",
                    value: d,
                });
            }
        }
        if !(0.0..1.0).contains(&self.rest_fraction) {
            return Err(SynthError::BadRestFraction(self.rest_fraction));
        }
        if let Some(b) = &self.buckling {
            if !(b.end_s > b.start_s) {
                return Err(SynthError::BadBuckling(b.start_s, b.end_s));
            }
        }
        Ok(())
    }

    /// Total nominal trajectory time (speed 1).
    pub fn nominal_duration(&self) -> f64 {
        self.segment_durations.iter().sum()
    }

    /// Emitted trial duration.
    pub fn duration(&self) -> f64 {
        self.nominal_duration() / self.speed_factor
    }

    /// Nominal times at which the trajectory passes each anchor.
    pub fn anchor_times_nominal(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut times = vec![0.0];
        for d in &self.segment_durations {
            acc += d;
            times.push(acc);
        }
        times
    }

    /// Noise-free feature pair at nominal trajectory time `tau`.
    pub fn features_at(&self, tau: f64) -> [f64; 2] {
        let times = self.anchor_times_nominal();
        let total = *times.last().unwrap();
        let tau = tau.clamp(0.0, total);
        // Locate the segment.
        let mut seg = 0;
        while seg + 1 < times.len() - 1 && times[seg + 1] <= tau {
            seg += 1;
        }
        let (a, b) = (self.anchors[seg], self.anchors[seg + 1]);
        let (t0, t1) = (times[seg], times[seg + 1]);
        let mut u = (tau - t0) / (t1 - t0);
        if seg == 0 {
            // Rest hold at anchor 1 for the first rest_fraction of segment 1.
            u = if u <= self.rest_fraction {
                0.0
            } else {
                (u - self.rest_fraction) / (1.0 - self.rest_fraction)
            };
        }
        [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
    }

    fn buckling_at(&self, tau: f64) -> f64 {
        match &self.buckling {
            Some(b) if tau >= b.start_s && tau <= b.end_s => {
                let u = (tau - b.start_s) / (b.end_s - b.start_s);
                b.amplitude * 0.5 * (1.0 - (std::f64::consts::TAU * u).cos())
            }
            _ => 0.0,
        }
    }
}

/// Box–Muller normal deviates from ChaCha8, cosine branch only.
struct Gaussian {
    rng: ChaCha8Rng,
}

impl Gaussian {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform on (0, 1]: (next_u64 >> 11 + 1) · 2⁻⁵³.
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn next(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Generates one trial: both channels sampled at every instant k/sample_rate,
/// emitted as alternating frames (channel 1 first) with constant ambient.
pub fn generate_trial(spec: &TrajectorySpec) -> Result<TrialRecording, SynthError> {
    spec.validate()?;
    let mut gauss = Gaussian::new(spec.seed);
    let duration = spec.duration();
    let n_samples = (duration * spec.sample_rate).floor() as usize + 1;
    let mut frames = Vec::with_capacity(2 * n_samples);
    for k in 0..n_samples {
        let t = k as f64 / spec.sample_rate;
        let tau = t * spec.speed_factor;
        let base = spec.features_at(tau);
        let bump = spec.buckling_at(tau);
        for ch in Channel::BOTH {
            let noise = if spec.noise_sigma > 0.0 {
                spec.noise_sigma * gauss.next()
            } else {
                0.0
            };
            let feature = base[ch.index()] + bump + noise;
            let counts = (feature * FULL_SCALE).round() as i64;
            let active = (AMBIENT_COUNTS as i64 + counts).max(0) as u32;
            frames.push(RawFrame {
                t,
                channel: ch,
                active,
                ambient: AMBIENT_COUNTS,
            });
        }
    }
    Ok(
        TrialRecording::new(frames, spec.load_g, spec.voltage_kv, trial_id(spec.seed))
            .expect("generated frames satisfy recording invariants"),
    )
}

fn trial_id(seed: u64) -> String {
    format!("synth-{seed:08x}")
}

/// `n` trials sharing one spec, seeded `seed_base`, `seed_base + 1`, …
pub fn generate_condition(
    spec: &TrajectorySpec,
    n: usize,
    seed_base: u64,
) -> Result<Vec<TrialRecording>, SynthError> {
    if n == 0 {
        return Err(SynthError::NoTrials);
    }
    (0..n)
        .map(|i| {
            let mut s = spec.clone();
            s.seed = seed_base + i as u64;
            generate_trial(&s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{self, CorrectedTrial};
    use approx::assert_abs_diff_eq;

    #[test]
    fn noiseless_trial_reproduces_anchors_exactly() {
        let spec = TrajectorySpec::default();
        let trial = generate_trial(&spec).unwrap();
        let corrected = CorrectedTrial::from_recording(&trial);
        let reference = [FULL_SCALE, FULL_SCALE];
        for (k, &tau) in spec.anchor_times_nominal().iter().enumerate() {
            let t = tau / spec.speed_factor;
            for ch in Channel::BOTH {
                let v = corrected.channel(ch).sample_at(t);
                let normalized = v / reference[ch.index()];
                assert_abs_diff_eq!(
                    normalized,
                    spec.anchors[k][ch.index()],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let spec = TrajectorySpec {
            noise_sigma: 0.03,
            seed: 42,
            ..TrajectorySpec::default()
        };
        let a = generate_trial(&spec).unwrap();
        let b = generate_trial(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn speed_warps_timestamps_not_features() {
        let slow = TrajectorySpec::default();
        let fast = TrajectorySpec {
            speed_factor: 2.0,
            ..TrajectorySpec::default()
        };
        let t_slow = generate_trial(&slow).unwrap();
        let t_fast = generate_trial(&fast).unwrap();
        assert_abs_diff_eq!(
            t_fast.frames().last().unwrap().t,
            t_slow.frames().last().unwrap().t / 2.0,
            epsilon = 1.0 / slow.sample_rate
        );
        // Sample k of the fast trial sits at the same trajectory progress as
        // sample 2k of the slow one.
        let fast_frames = t_fast.frames();
        let slow_frames = t_slow.frames();
        for k in 0..fast_frames.len() / 2 {
            for c in 0..2 {
                let f = &fast_frames[2 * k + c];
                let s = &slow_frames[4 * k + c];
                assert_eq!(f.active, s.active, "sample {k} channel {c}");
                assert_abs_diff_eq!(f.t, s.t / 2.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn trial_duration_follows_speed_factor() {
        let spec = TrajectorySpec {
            speed_factor: 0.75,
            ..TrajectorySpec::default()
        };
        let trial = generate_trial(&spec).unwrap();
        let expect = spec.nominal_duration() / 0.75;
        let got = trial.frames().last().unwrap().t;
        assert!((got - expect).abs() <= 1.0 / spec.sample_rate);
    }

    #[test]
    fn condition_trials_share_content_when_noiseless() {
        let trials = generate_condition(&TrajectorySpec::default(), 3, 100).unwrap();
        assert_eq!(trials.len(), 3);
        assert_eq!(trials[0].frames(), trials[1].frames());
        assert_eq!(trials[1].frames(), trials[2].frames());
        assert_ne!(trials[0].trial_id, trials[1].trial_id);
    }

    #[test]
    fn condition_trials_differ_under_noise() {
        let spec = TrajectorySpec {
            noise_sigma: 0.02,
            ..TrajectorySpec::default()
        };
        let trials = generate_condition(&spec, 3, 7).unwrap();
        assert_ne!(trials[0].frames(), trials[1].frames());
        assert_ne!(trials[0].frames(), trials[2].frames());
        assert_ne!(trials[1].frames(), trials[2].frames());
    }

    #[test]
    fn buckling_bump_is_confined_to_its_interval() {
        let spec = TrajectorySpec {
            buckling: Some(BucklingSpec {
                start_s: 4.0,
                end_s: 6.0,
                amplitude: 0.2,
            }),
            ..TrajectorySpec::default()
        };
        let clean = generate_trial(&TrajectorySpec::default()).unwrap();
        let bumped = generate_trial(&spec).unwrap();
        for (a, b) in clean.frames().iter().zip(bumped.frames()) {
            let tau = a.t * spec.speed_factor;
            if tau < 4.0 - 1e-9 || tau > 6.0 + 1e-9 {
                assert_eq!(a.active, b.active, "t = {}", a.t);
            }
        }
        let mid = bumped
            .frames()
            .iter()
            .find(|f| (f.t * spec.speed_factor - 5.0).abs() < 1e-9)
            .unwrap();
        let mid_clean = clean
            .frames()
            .iter()
            .find(|f| (f.t - mid.t).abs() < 1e-9 && f.channel == mid.channel)
            .unwrap();
        assert_eq!(
            mid.active as i64 - mid_clean.active as i64,
            (0.2 * FULL_SCALE).round() as i64
        );
    }

    #[test]
    fn output_roundtrips_through_json_lines() {
        let spec = TrajectorySpec {
            noise_sigma: 0.01,
            seed: 9,
            ..TrajectorySpec::default()
        };
        let trial = generate_trial(&spec).unwrap();
        let mut buf = Vec::new();
        signal::write_trial(&mut buf, &trial).unwrap();
        let back = signal::read_trial(buf.as_slice()).unwrap();
        assert_eq!(trial, back);
    }

    #[test]
    fn averaged_noisy_trials_track_the_clean_trajectory() {
        let sigma = 0.02;
        let spec = TrajectorySpec {
            noise_sigma: sigma,
            ..TrajectorySpec::default()
        };
        let trials = generate_condition(&spec, 3, 500).unwrap();
        let corrected: Vec<CorrectedTrial> =
            trials.iter().map(CorrectedTrial::from_recording).collect();
        let avg = signal::average_trials(&corrected).unwrap();
        let clean = generate_trial(&TrajectorySpec::default()).unwrap();
        let clean = CorrectedTrial::from_recording(&clean);
        let bound = 4.0 * sigma * FULL_SCALE / (3.0f64).sqrt() + 1.0;
        for ch in Channel::BOTH {
            let mut ok = 0usize;
            for (k, &t) in avg.t.iter().enumerate() {
                let diff = (avg.mean[ch.index()][k] - clean.channel(ch).sample_at(t)).abs();
                if diff < bound {
                    ok += 1;
                }
            }
            let frac = ok as f64 / avg.t.len() as f64;
            assert!(frac >= 0.99, "only {frac} of samples inside the 4σ/√3 band");
        }
    }

    #[test]
    fn averaged_noise_std_sits_in_the_expected_band() {
        let spec = TrajectorySpec {
            noise_sigma: 0.01,
            ..TrajectorySpec::default()
        };
        let trials = generate_condition(&spec, 3, 1234).unwrap();
        let corrected: Vec<CorrectedTrial> =
            trials.iter().map(CorrectedTrial::from_recording).collect();
        let avg = signal::average_trials(&corrected).unwrap();

        // Independent recomputation of the pointwise sample std at a few
        // grid points, straight from the interpolated trials.
        for &k in &[10usize, 100, 300, 500] {
            let t = avg.t[k];
            let vals: Vec<f64> = corrected
                .iter()
                .map(|tr| tr.channel(Channel::S1).sample_at(t))
                .collect();
            let m = vals.iter().sum::<f64>() / 3.0;
            let expect = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 2.0).sqrt();
            assert_abs_diff_eq!(avg.std[0][k], expect, epsilon = 1e-9);
        }

        // Noise σ of 0.01 in feature units is 10 counts; the three-sample
        // std should mostly land inside [2, 50] counts.
        let in_band = avg.std[0]
            .iter()
            .filter(|&&s| (2.0..=50.0).contains(&s))
            .count();
        let frac = in_band as f64 / avg.std[0].len() as f64;
        assert!(frac >= 0.9, "std band fraction {frac}");
    }

    #[test]
    fn spec_json_defaults_fill_in() {
        let spec: TrajectorySpec = serde_json::from_str(r#"{"seed": 7, "noise_sigma": 0.01}"#)
            .unwrap();
        assert_eq!(spec.seed, 7);
        assert_eq!(spec.anchors.len(), 8);
        assert_eq!(spec.segment_durations, vec![2.0; 7]);
        assert_eq!(spec.load_g, 12.3);
        spec.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = TrajectorySpec::default();
        spec.anchors[0] = [0.9, 1.0];
        assert!(matches!(
            spec.validate(),
            Err(SynthError::BadFirstAnchor(..))
        ));
        let spec = TrajectorySpec {
            speed_factor: 0.0,
            ..TrajectorySpec::default()
        };
        assert!(matches!(spec.validate(), Err(SynthError::NonPositive { .. })));
    }
}
