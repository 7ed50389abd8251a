//! Optical trial recordings and the calibration preprocessing chain.
//!
//! A trial is a time-ordered stream of [`RawFrame`]s: for each sensor channel
//! the receiver is read once with the emitter on (`active`) and once with it
//! off (`ambient`); ambient subtraction happens per frame. On top of that sit
//! offset removal against the pre-motion baseline, trial averaging on a
//! common time grid, extraction of the eight state anchors, and first-state
//! normalization.
//!
//! Wire format (JSON lines): one metadata object, then one object per frame.
//!
//! ```text
//! {"meta":{"load_g":12.3,"voltage_kV":4.0,"trial_id":"t0"}}
//! {"t":0.0,"ch":1,"active":1010,"ambient":10}
//! {"t":0.01,"ch":2,"active":1008,"ambient":10}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default pre-motion baseline window, seconds from the first sample.
pub const BASELINE_WINDOW_S: f64 = 0.5;

/// Full ADC scale convention: feature 1.0 corresponds to 1000 counts.
pub const FULL_SCALE_COUNTS: f64 = 1000.0;

/// Normalization floor as a fraction of full ADC scale.
pub const NORMALIZATION_FLOOR_FRACTION: f64 = 1e-6;

/// Division guard for first-state and streaming reference values.
pub fn normalization_floor() -> f64 {
    NORMALIZATION_FLOOR_FRACTION * FULL_SCALE_COUNTS
}

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("frame {index}: {reason}")]
    BadFrame { index: usize, reason: String },
    #[error("frames not time-ordered at index {index}")]
    UnsortedFrames { index: usize },
    #[error("channel {0} has no frames")]
    MissingChannel(u8),
    #[error("trial has no frames")]
    EmptyTrial,
    #[error("series spans {duration} s, shorter than the {window} s baseline window")]
    SeriesTooShort { duration: f64, window: f64 },
    #[error("need at least {need} recordings, got {got}")]
    TooFewTrials { got: usize, need: usize },
    #[error("condition mismatch: ({0} g, {1} kV) vs ({2} g, {3} kV)")]
    ConditionMismatch(f64, f64, f64, f64),
    #[error("exclusion interval [{0}, {1}] not inside [0, {2}]")]
    InvalidExclusion(f64, f64, f64),
    #[error("exclusion interval covers more than half of [0, {0}]")]
    ExclusionTooWide(f64),
    #[error("series does not cover [0, {0}]")]
    CoverageGap(f64),
    #[error("exclusion shifts collapse states {0} and {1} onto one time")]
    StateTimesCollide(usize, usize),
    #[error("state-1 reference on channel {channel} is {value:.3e}, below floor {floor:.3e}")]
    NearZeroReference { channel: u8, value: f64, floor: f64 },
    #[error("state label {0} outside 1..=8")]
    BadStateLabel(u8),
    #[error("trial {0} state-1 features are not (1, 1)")]
    UnnormalizedTrial(String),
    #[error("need at least two states, got {0}")]
    TooFewStates(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing metadata line")]
    MissingMeta,
}

/// Sensor channel identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    S1,
    S2,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::S1, Channel::S2];

    pub fn index(self) -> usize {
        match self {
            Channel::S1 => 0,
            Channel::S2 => 1,
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Channel::S1 => 1,
            Channel::S2 => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Channel::S1),
            2 => Some(Channel::S2),
            _ => None,
        }
    }
}

/// One receiver reading pair: emitter on (`active`) and the nearest-in-time
/// emitter-off reading (`ambient`), both in ADC counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFrame {
    pub t: f64,
    pub channel: Channel,
    pub active: u32,
    pub ambient: u32,
}

impl RawFrame {
    fn validate(&self) -> Result<(), String> {
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(format!("time {} not finite and non-negative", self.t));
        }
        Ok(())
    }
}

/// Ambient-corrected intensity: max(active − ambient, 0), flagged when the
/// clamp fired (transient external light can push ambient above active).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedSample {
    pub t: f64,
    pub value: f64,
    pub clamped: bool,
}

pub fn ambient_correct(frame: &RawFrame) -> CorrectedSample {
    let diff = frame.active as i64 - frame.ambient as i64;
    CorrectedSample {
        t: frame.t,
        value: diff.max(0) as f64,
        clamped: diff < 0,
    }
}

/// One loading trial: time-ordered frames for both channels plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    frames: Vec<RawFrame>,
    pub load_g: f64,
    pub voltage_kv: f64,
    pub trial_id: String,
}

impl TrialRecording {
    pub fn new(
        frames: Vec<RawFrame>,
        load_g: f64,
        voltage_kv: f64,
        trial_id: String,
    ) -> Result<Self, SignalError> {
        if frames.is_empty() {
            return Err(SignalError::EmptyTrial);
        }
        for (i, f) in frames.iter().enumerate() {
            f.validate()
                .map_err(|reason| SignalError::BadFrame { index: i, reason })?;
            if i > 0 && f.t < frames[i - 1].t {
                return Err(SignalError::UnsortedFrames { index: i });
            }
        }
        for ch in Channel::BOTH {
            if !frames.iter().any(|f| f.channel == ch) {
                return Err(SignalError::MissingChannel(ch.id()));
            }
        }
        Ok(Self {
            frames,
            load_g,
            voltage_kv,
            trial_id,
        })
    }

    pub fn frames(&self) -> &[RawFrame] {
        &self.frames
    }
}

/// Time-aligned sample series for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSeries {
    t: Vec<f64>,
    v: Vec<f64>,
}

impl ChannelSeries {
    pub fn new(t: Vec<f64>, v: Vec<f64>) -> Self {
        assert_eq!(t.len(), v.len());
        assert!(!t.is_empty(), "empty channel series");
        Self { t, v }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn first_t(&self) -> f64 {
        self.t[0]
    }

    pub fn last_t(&self) -> f64 {
        *self.t.last().unwrap()
    }

    /// Linear interpolation at `t`, clamped to the series extent.
    pub fn sample_at(&self, t: f64) -> f64 {
        if t <= self.t[0] {
            return self.v[0];
        }
        if t >= self.last_t() {
            return *self.v.last().unwrap();
        }
        let hi = self.t.partition_point(|&x| x < t);
        let lo = hi - 1;
        let span = self.t[hi] - self.t[lo];
        if span <= 0.0 {
            return self.v[lo];
        }
        let w = (t - self.t[lo]) / span;
        self.v[lo] + w * (self.v[hi] - self.v[lo])
    }

    /// Median spacing between consecutive samples.
    pub fn median_dt(&self) -> f64 {
        median_gap(&self.t).unwrap_or(0.0)
    }

    /// Mean of the samples in `[first_t, first_t + window_s)`.
    fn baseline_mean(&self, window_s: f64) -> Result<f64, SignalError> {
        let duration = self.last_t() - self.first_t();
        if duration < window_s {
            return Err(SignalError::SeriesTooShort {
                duration,
                window: window_s,
            });
        }
        let cutoff = self.first_t() + window_s;
        let mut sum = 0.0;
        let mut n = 0usize;
        for (t, v) in self.t.iter().zip(&self.v) {
            if *t < cutoff {
                sum += v;
                n += 1;
            } else {
                break;
            }
        }
        if n == 0 {
            return Err(SignalError::SeriesTooShort {
                duration: 0.0,
                window: window_s,
            });
        }
        Ok(sum / n as f64)
    }
}

fn median_gap(t: &[f64]) -> Option<f64> {
    if t.len() < 2 {
        return None;
    }
    let mut gaps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    Some(gaps[gaps.len() / 2])
}

/// Subtracts the mean of the pre-motion baseline window from every sample.
pub fn remove_offset(
    series: &ChannelSeries,
    window_s: f64,
) -> Result<ChannelSeries, SignalError> {
    let baseline = series.baseline_mean(window_s)?;
    Ok(ChannelSeries::new(
        series.t.clone(),
        series.v.iter().map(|v| v - baseline).collect(),
    ))
}

/// A trial after per-frame ambient correction, split by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedTrial {
    pub trial_id: String,
    pub load_g: f64,
    pub voltage_kv: f64,
    channels: [ChannelSeries; 2],
    /// Number of samples where ambient exceeded active.
    pub clamped: usize,
}

impl CorrectedTrial {
    pub fn from_recording(rec: &TrialRecording) -> Self {
        let mut t = [Vec::new(), Vec::new()];
        let mut v = [Vec::new(), Vec::new()];
        let mut clamped = 0;
        for frame in rec.frames() {
            let s = ambient_correct(frame);
            let i = frame.channel.index();
            t[i].push(s.t);
            v[i].push(s.value);
            clamped += s.clamped as usize;
        }
        let [t1, t2] = t;
        let [v1, v2] = v;
        Self {
            trial_id: rec.trial_id.clone(),
            load_g: rec.load_g,
            voltage_kv: rec.voltage_kv,
            channels: [ChannelSeries::new(t1, v1), ChannelSeries::new(t2, v2)],
            clamped,
        }
    }

    pub fn channel(&self, ch: Channel) -> &ChannelSeries {
        &self.channels[ch.index()]
    }

    /// Offset-removed copy (both channels, shared baseline window).
    pub fn remove_offset(&self, window_s: f64) -> Result<CorrectedTrial, SignalError> {
        Ok(CorrectedTrial {
            trial_id: self.trial_id.clone(),
            load_g: self.load_g,
            voltage_kv: self.voltage_kv,
            channels: [
                remove_offset(&self.channels[0], window_s)?,
                remove_offset(&self.channels[1], window_s)?,
            ],
            clamped: self.clamped,
        })
    }
}

/// Pointwise mean and sample standard deviation for one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionAverage {
    pub t: Vec<f64>,
    pub mean: [Vec<f64>; 2],
    pub std: [Vec<f64>; 2],
    pub load_g: f64,
    pub voltage_kv: f64,
    pub n_trials: usize,
}

impl ConditionAverage {
    pub fn mean_series(&self, ch: Channel) -> ChannelSeries {
        ChannelSeries::new(self.t.clone(), self.mean[ch.index()].clone())
    }
}

/// Averages trials of one nominal condition on a common uniform time grid
/// (median inter-sample interval, linear interpolation).
pub fn average_trials(trials: &[CorrectedTrial]) -> Result<ConditionAverage, SignalError> {
    if trials.len() < 2 {
        return Err(SignalError::TooFewTrials {
            got: trials.len(),
            need: 2,
        });
    }
    let first = &trials[0];
    for t in &trials[1..] {
        if t.load_g != first.load_g || t.voltage_kv != first.voltage_kv {
            return Err(SignalError::ConditionMismatch(
                first.load_g,
                first.voltage_kv,
                t.load_g,
                t.voltage_kv,
            ));
        }
    }

    let mut gaps = Vec::new();
    let mut t_start = f64::NEG_INFINITY;
    let mut t_end = f64::INFINITY;
    for trial in trials {
        for ch in Channel::BOTH {
            let s = trial.channel(ch);
            for w in s.times().windows(2) {
                gaps.push(w[1] - w[0]);
            }
            t_start = t_start.max(s.first_t());
            t_end = t_end.min(s.last_t());
        }
    }
    gaps.sort_by(f64::total_cmp);
    let dt = gaps[gaps.len() / 2];
    let steps = ((t_end - t_start) / dt).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| t_start + k as f64 * dt).collect();

    let mut mean = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
    let mut std = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
    let n = trials.len() as f64;
    for ch in Channel::BOTH {
        let c = ch.index();
        for (k, &tk) in grid.iter().enumerate() {
            let samples: Vec<f64> = trials
                .iter()
                .map(|tr| tr.channel(ch).sample_at(tk))
                .collect();
            let m = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            mean[c][k] = m;
            std[c][k] = var.sqrt();
        }
    }
    Ok(ConditionAverage {
        t: grid,
        mean,
        std,
        load_g: first.load_g,
        voltage_kv: first.voltage_kv,
        n_trials: trials.len(),
    })
}

/// One extracted state: time anchor plus the two-channel feature pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateAnchor {
    pub t: f64,
    pub features: [f64; 2],
}

/// Picks the state anchors: states `1..n−1` equally spaced over the
/// pre-contraction span, the last state pinned at `end_time`.
///
/// A state time strictly inside the exclusion interval moves to the nearer
/// boundary (ties to the earlier one).
pub fn extract_states(
    s1: &ChannelSeries,
    s2: &ChannelSeries,
    n_states: usize,
    exclusion: Option<(f64, f64)>,
    end_time: f64,
) -> Result<Vec<StateAnchor>, SignalError> {
    if n_states < 2 {
        return Err(SignalError::TooFewStates(n_states));
    }
    for s in [s1, s2] {
        let slack = 2.0 * s.median_dt();
        if s.first_t() > slack || s.last_t() < end_time - slack {
            return Err(SignalError::CoverageGap(end_time));
        }
    }
    if let Some((lo, hi)) = exclusion {
        if !(0.0..=end_time).contains(&lo) || !(0.0..=end_time).contains(&hi) || lo > hi {
            return Err(SignalError::InvalidExclusion(lo, hi, end_time));
        }
        if hi - lo > 0.5 * end_time {
            return Err(SignalError::ExclusionTooWide(end_time));
        }
    }

    let mut times: Vec<f64> = (0..n_states)
        .map(|k| {
            if k == n_states - 1 {
                end_time
            } else {
                end_time * k as f64 / (n_states - 1) as f64
            }
        })
        .collect();
    if let Some((lo, hi)) = exclusion {
        for t in &mut times {
            if *t > lo && *t < hi {
                *t = if *t - lo <= hi - *t { lo } else { hi };
            }
        }
    }
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            return Err(SignalError::StateTimesCollide(i, i + 1));
        }
    }

    Ok(times
        .into_iter()
        .map(|t| StateAnchor {
            t,
            features: [s1.sample_at(t), s2.sample_at(t)],
        })
        .collect())
}

/// Divides every state's features by the state-1 value, channel by channel.
/// State 1 maps to (1, 1) exactly.
pub fn normalize_to_first_state(
    features: &[[f64; 2]],
    floor: f64,
) -> Result<Vec<[f64; 2]>, SignalError> {
    let first = features
        .first()
        .ok_or(SignalError::TooFewStates(0))?;
    for (c, &v) in first.iter().enumerate() {
        if v.abs() <= floor {
            return Err(SignalError::NearZeroReference {
                channel: c as u8 + 1,
                value: v,
                floor,
            });
        }
    }
    Ok(features
        .iter()
        .enumerate()
        .map(|(k, f)| {
            if k == 0 {
                [1.0, 1.0]
            } else {
                [f[0] / first[0], f[1] / first[1]]
            }
        })
        .collect())
}

/// One labeled training sample: normalized feature pair, state, source trial.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub features: [f64; 2],
    pub state: u8,
    pub trial_id: String,
}

/// Labeled normalized feature vectors for the eight bending states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateDataset {
    samples: Vec<StateSample>,
}

impl StateDataset {
    pub fn new(samples: Vec<StateSample>) -> Result<Self, SignalError> {
        for s in &samples {
            if !(1..=8).contains(&s.state) {
                return Err(SignalError::BadStateLabel(s.state));
            }
        }
        for s in &samples {
            if s.state == 1 && s.features != [1.0, 1.0] {
                return Err(SignalError::UnnormalizedTrial(s.trial_id.clone()));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[StateSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted unique state labels present.
    pub fn classes(&self) -> Vec<u8> {
        let mut c: Vec<u8> = self.samples.iter().map(|s| s.state).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: MetaFields,
}

#[derive(Serialize, Deserialize)]
struct MetaFields {
    load_g: f64,
    #[serde(rename = "voltage_kV")]
    voltage_kv: f64,
    trial_id: String,
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    t: f64,
    ch: u8,
    active: u32,
    ambient: u32,
}

/// Reads one trial from the JSON-lines format.
pub fn read_trial<R: BufRead>(reader: R) -> Result<TrialRecording, SignalError> {
    let mut lines = reader.lines();
    let meta: MetaLine = loop {
        let line = lines.next().ok_or(SignalError::MissingMeta)??;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(&line).map_err(|e| SignalError::Parse {
            line: 1,
            message: format!("metadata: {e}"),
        })?;
    };
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: FrameLine = serde_json::from_str(&line).map_err(|e| SignalError::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        let channel = Channel::from_id(f.ch).ok_or_else(|| SignalError::Parse {
            line: i + 2,
            message: format!("channel {} not 1 or 2", f.ch),
        })?;
        frames.push(RawFrame {
            t: f.t,
            channel,
            active: f.active,
            ambient: f.ambient,
        });
    }
    TrialRecording::new(
        frames,
        meta.meta.load_g,
        meta.meta.voltage_kv,
        meta.meta.trial_id,
    )
}

/// Writes one trial in the JSON-lines format.
pub fn write_trial<W: Write>(mut writer: W, trial: &TrialRecording) -> Result<(), SignalError> {
    let meta = MetaLine {
        meta: MetaFields {
            load_g: trial.load_g,
            voltage_kv: trial.voltage_kv,
            trial_id: trial.trial_id.clone(),
        },
    };
    writeln!(writer, "{}", serde_json::to_string(&meta).expect("meta json"))?;
    for f in trial.frames() {
        let line = FrameLine {
            t: f.t,
            ch: f.channel.id(),
            active: f.active,
            ambient: f.ambient,
        };
        writeln!(writer, "{}", serde_json::to_string(&line).expect("frame json"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn frame(t: f64, ch: Channel, active: u32, ambient: u32) -> RawFrame {
        RawFrame {
            t,
            channel: ch,
            active,
            ambient,
        }
    }

    fn ramp_series(n: usize, dt: f64, start: f64, slope: f64) -> ChannelSeries {
        let t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let v: Vec<f64> = t.iter().map(|t| start + slope * t).collect();
        ChannelSeries::new(t, v)
    }

    #[test]
    fn ambient_correct_subtracts() {
        let s = ambient_correct(&frame(0.0, Channel::S1, 512, 12));
        assert_eq!(s.value, 500.0);
        assert!(!s.clamped);
    }

    #[test]
    fn ambient_correct_zero_case() {
        let s = ambient_correct(&frame(0.0, Channel::S1, 10, 10));
        assert_eq!(s.value, 0.0);
        assert!(!s.clamped);
    }

    #[test]
    fn ambient_correct_clamps_negative() {
        let s = ambient_correct(&frame(0.0, Channel::S1, 5, 9));
        assert_eq!(s.value, 0.0);
        assert!(s.clamped);
    }

    #[test]
    fn remove_offset_zeroes_constant_series() {
        let series = ramp_series(100, 0.02, 42.0, 0.0);
        let out = remove_offset(&series, 0.5).unwrap();
        for &v in out.values() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn remove_offset_shifts_by_baseline_mean() {
        // Flat 100 for the first second, then a ramp.
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.01).collect();
        let v: Vec<f64> = t
            .iter()
            .map(|&t| if t < 1.0 { 100.0 } else { 100.0 + (t - 1.0) * 50.0 })
            .collect();
        let series = ChannelSeries::new(t, v.clone());
        let out = remove_offset(&series, 0.5).unwrap();
        for (orig, shifted) in v.iter().zip(out.values()) {
            assert_abs_diff_eq!(shifted, &(orig - 100.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn remove_offset_is_offset_invariant() {
        let series = ramp_series(300, 0.01, 10.0, 7.0);
        let shifted = ChannelSeries::new(
            series.times().to_vec(),
            series.values().iter().map(|v| v + 123.0).collect(),
        );
        let a = remove_offset(&series, 0.5).unwrap();
        let b = remove_offset(&shifted, 0.5).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn remove_offset_rejects_short_series() {
        let series = ramp_series(10, 0.01, 1.0, 0.0);
        match remove_offset(&series, 0.5) {
            Err(SignalError::SeriesTooShort { .. }) => {}
            other => panic!("expected SeriesTooShort, got {other:?}"),
        }
    }

    fn trial_from_values(id: &str, values: &[f64]) -> CorrectedTrial {
        let mut frames = Vec::new();
        for (k, &v) in values.iter().enumerate() {
            let t = k as f64 * 0.02;
            frames.push(frame(t, Channel::S1, v as u32 + 10, 10));
            frames.push(frame(t + 0.01, Channel::S2, v as u32 + 10, 10));
        }
        let rec = TrialRecording::new(frames, 12.3, 4.0, id.into()).unwrap();
        CorrectedTrial::from_recording(&rec)
    }

    #[test]
    fn averaging_identical_trials_has_zero_std() {
        let values: Vec<f64> = (0..100).map(|k| 100.0 + k as f64).collect();
        let a = trial_from_values("a", &values);
        let b = trial_from_values("b", &values);
        let avg = average_trials(&[a.clone(), b]).unwrap();
        for c in 0..2 {
            for (k, &tk) in avg.t.iter().enumerate() {
                assert_abs_diff_eq!(avg.std[c][k], 0.0, epsilon = 1e-9);
                assert_abs_diff_eq!(
                    avg.mean[c][k],
                    a.channel(Channel::BOTH[c]).sample_at(tk),
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn averaging_offset_trials_two_sample_stats() {
        let base: Vec<f64> = (0..100).map(|k| 100.0 + k as f64).collect();
        let plus2: Vec<f64> = base.iter().map(|v| v + 2.0).collect();
        let avg = average_trials(&[trial_from_values("a", &base), trial_from_values("b", &plus2)])
            .unwrap();
        let a = trial_from_values("a", &base);
        for (k, &tk) in avg.t.iter().enumerate() {
            let expect = a.channel(Channel::S1).sample_at(tk) + 1.0;
            assert_abs_diff_eq!(avg.mean[0][k], expect, epsilon = 1e-9);
            assert_abs_diff_eq!(avg.std[0][k], std::f64::consts::SQRT_2, epsilon = 1e-9);
        }
    }

    #[test]
    fn averaging_rejects_condition_mismatch() {
        let values: Vec<f64> = (0..60).map(|k| k as f64).collect();
        let a = trial_from_values("a", &values);
        let mut b = trial_from_values("b", &values);
        b.voltage_kv = 5.0;
        match average_trials(&[a, b]) {
            Err(SignalError::ConditionMismatch(..)) => {}
            other => panic!("expected ConditionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn averaging_mean_stays_in_envelope() {
        let a: Vec<f64> = (0..100).map(|k| 100.0 + (k as f64 * 0.3).sin() * 20.0).collect();
        let b: Vec<f64> = (0..100).map(|k| 110.0 + (k as f64 * 0.2).cos() * 15.0).collect();
        let c: Vec<f64> = (0..100).map(|k| 95.0 + k as f64 * 0.5).collect();
        let trials = [
            trial_from_values("a", &a),
            trial_from_values("b", &b),
            trial_from_values("c", &c),
        ];
        let avg = average_trials(&trials).unwrap();
        for ch in Channel::BOTH {
            for (k, &tk) in avg.t.iter().enumerate() {
                let vals: Vec<f64> = trials.iter().map(|t| t.channel(ch).sample_at(tk)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(avg.mean[ch.index()][k] >= lo - 1e-9);
                assert!(avg.mean[ch.index()][k] <= hi + 1e-9);
            }
        }
    }

    fn linear_two_channel(end: f64, dt: f64) -> (ChannelSeries, ChannelSeries) {
        let n = (end / dt) as usize + 1;
        let t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let v1: Vec<f64> = t.iter().map(|t| 100.0 + t).collect();
        let v2: Vec<f64> = t.iter().map(|t| 200.0 - t).collect();
        (ChannelSeries::new(t.clone(), v1), ChannelSeries::new(t, v2))
    }

    #[test]
    fn extract_states_equal_spacing() {
        let (s1, s2) = linear_two_channel(7.0, 0.01);
        let anchors = extract_states(&s1, &s2, 8, None, 7.0).unwrap();
        let times: Vec<f64> = anchors.iter().map(|a| a.t).collect();
        for (t, expect) in times.iter().zip([0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]) {
            assert_abs_diff_eq!(t, &expect, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(anchors[3].features[0], 103.0, epsilon = 1e-9);
        assert_abs_diff_eq!(anchors[3].features[1], 197.0, epsilon = 1e-9);
    }

    #[test]
    fn extract_states_shifts_into_exclusion_boundary() {
        let (s1, s2) = linear_two_channel(7.0, 0.01);
        let anchors = extract_states(&s1, &s2, 8, Some((2.5, 3.5)), 7.0).unwrap();
        // t = 3 is equidistant from both boundaries: tie goes to the earlier.
        assert_abs_diff_eq!(anchors[3].t, 2.5, epsilon = 1e-9);
        let anchors = extract_states(&s1, &s2, 8, Some((2.8, 3.1)), 7.0).unwrap();
        assert_abs_diff_eq!(anchors[3].t, 3.1, epsilon = 1e-9);
    }

    #[test]
    fn extract_states_rejects_wide_exclusion() {
        let (s1, s2) = linear_two_channel(7.0, 0.01);
        match extract_states(&s1, &s2, 8, Some((1.0, 5.0)), 7.0) {
            Err(SignalError::ExclusionTooWide(..)) => {}
            other => panic!("expected ExclusionTooWide, got {other:?}"),
        }
    }

    #[test]
    fn extract_states_times_strictly_increase() {
        let (s1, s2) = linear_two_channel(7.0, 0.01);
        let anchors = extract_states(&s1, &s2, 8, Some((1.9, 3.4)), 7.0).unwrap();
        for w in anchors.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn normalize_divides_by_first_state() {
        let features = [[200.0, 400.0], [150.0, 300.0], [100.0, 100.0]];
        let out = normalize_to_first_state(&features, 1e-3).unwrap();
        assert_eq!(out[0], [1.0, 1.0]);
        assert_abs_diff_eq!(out[2][0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[2][1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn normalize_all_equal_gives_unity() {
        let features = [[320.0, 510.0]; 8];
        let out = normalize_to_first_state(&features, 1e-3).unwrap();
        for f in out {
            assert_abs_diff_eq!(f[0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(f[1], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_guards_near_zero_reference() {
        let features = [[1e-9, 400.0], [1.0, 1.0]];
        match normalize_to_first_state(&features, 1e-6) {
            Err(SignalError::NearZeroReference { channel: 1, .. }) => {}
            other => panic!("expected NearZeroReference, got {other:?}"),
        }
    }

    #[test]
    fn channel_gain_cancels_in_normalized_features() {
        let (s1, s2) = linear_two_channel(7.0, 0.01);
        let gained = ChannelSeries::new(
            s1.times().to_vec(),
            s1.values().iter().map(|v| v * 3.7).collect(),
        );
        let base = extract_states(&s1, &s2, 8, None, 7.0).unwrap();
        let scaled = extract_states(&gained, &s2, 8, None, 7.0).unwrap();
        let fb: Vec<[f64; 2]> = base.iter().map(|a| a.features).collect();
        let fs: Vec<[f64; 2]> = scaled.iter().map(|a| a.features).collect();
        let nb = normalize_to_first_state(&fb, 1e-3).unwrap();
        let ns = normalize_to_first_state(&fs, 1e-3).unwrap();
        for (a, b) in nb.iter().zip(&ns) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-9);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn dataset_requires_normalized_state_one() {
        let samples = vec![StateSample {
            features: [0.9, 1.0],
            state: 1,
            trial_id: "t".into(),
        }];
        assert!(StateDataset::new(samples).is_err());
    }

    #[test]
    fn trial_roundtrips_through_json_lines() {
        let frames = vec![
            frame(0.0, Channel::S1, 1010, 10),
            frame(0.01, Channel::S2, 1008, 10),
            frame(0.02, Channel::S1, 950, 11),
            frame(0.03, Channel::S2, 930, 9),
        ];
        let trial = TrialRecording::new(frames, 12.3, 4.0, "t0".into()).unwrap();
        let mut buf = Vec::new();
        write_trial(&mut buf, &trial).unwrap();
        let back = read_trial(buf.as_slice()).unwrap();
        assert_eq!(trial, back);
    }

    #[test]
    fn recording_requires_both_channels() {
        let frames = vec![frame(0.0, Channel::S1, 10, 1), frame(0.1, Channel::S1, 11, 1)];
        match TrialRecording::new(frames, 12.3, 4.0, "x".into()) {
            Err(SignalError::MissingChannel(2)) => {}
            other => panic!("expected MissingChannel, got {other:?}"),
        }
    }
}
