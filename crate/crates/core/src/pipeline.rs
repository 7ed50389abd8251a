//! Calibration orchestration: from raw trial recordings to a trained model.
//!
//! The chain mirrors the acquisition protocol: ambient-correct every frame,
//! average the trials of the condition on a common time grid, pick the eight
//! state times on the averaged series (honoring the buckling exclusion), then
//! sample each trial at those times and normalize per trial by its own
//! state-1 value. The offset-removed averaged traces (mean ± std per channel)
//! are computed alongside as the calibration record.
//!
//! First-state normalization divides by the state-1 signal level, so the
//! feature path runs on ambient-corrected values; subtracting the pre-motion
//! baseline first would cancel the very reference the division needs.

use thiserror::Error;

use crate::signal::{
    self, average_trials, extract_states, normalize_to_first_state, Channel, ChannelSeries,
    ConditionAverage, CorrectedTrial, SignalError, StateAnchor, StateDataset, StateSample,
    TrialRecording,
};
use crate::svm::{train_multiclass, MulticlassSvm, SvmError, TrainConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no trial recordings supplied")]
    NoTrials,
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

/// Knobs of the calibration chain. Defaults follow the reference protocol:
/// 0.5 s baseline, eight states, γ = 1/n_features, C = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub baseline_s: f64,
    pub exclusion: Option<(f64, f64)>,
    /// Full-contraction time; detected from the averaged series when absent.
    pub end_time: Option<f64>,
    pub n_states: usize,
    pub gamma: Option<f64>,
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            baseline_s: signal::BASELINE_WINDOW_S,
            exclusion: None,
            end_time: None,
            n_states: 8,
            gamma: None,
            c: 1.0,
            tol: 1e-3,
            max_passes: 200,
        }
    }
}

/// Everything the calibration run produced.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: MulticlassSvm,
    pub dataset: StateDataset,
    /// State anchors on the averaged (ambient-corrected) series.
    pub anchors: Vec<StateAnchor>,
    /// Offset-removed mean ± std traces; absent for a single-trial run.
    pub average: Option<ConditionAverage>,
    pub end_time: f64,
    /// (correct, total) over the training samples.
    pub training_accuracy: (usize, usize),
    /// Ambient-clamp count across all trials.
    pub clamped: usize,
    /// Averaging degenerated to identity (one recording only).
    pub single_trial: bool,
}

/// Runs the full calibration chain on one condition's recordings.
pub fn calibrate(
    recordings: &[TrialRecording],
    cfg: &CalibrationConfig,
) -> Result<Calibration, PipelineError> {
    if recordings.is_empty() {
        return Err(PipelineError::NoTrials);
    }
    let corrected: Vec<CorrectedTrial> =
        recordings.iter().map(CorrectedTrial::from_recording).collect();
    let clamped = corrected.iter().map(|c| c.clamped).sum();
    let single_trial = corrected.len() == 1;

    // Mean series for state-time selection (feature path, no offset removal).
    let (mean_s1, mean_s2) = if single_trial {
        (
            corrected[0].channel(Channel::S1).clone(),
            corrected[0].channel(Channel::S2).clone(),
        )
    } else {
        let avg = average_trials(&corrected)?;
        (avg.mean_series(Channel::S1), avg.mean_series(Channel::S2))
    };

    // Offset-removed averaged traces, the calibration record.
    let average = if single_trial {
        None
    } else {
        let offset_removed: Vec<CorrectedTrial> = corrected
            .iter()
            .map(|t| t.remove_offset(cfg.baseline_s))
            .collect::<Result<_, _>>()?;
        Some(average_trials(&offset_removed)?)
    };

    let end_time = match cfg.end_time {
        Some(t) => t,
        None => detect_end_time(&mean_s1, &mean_s2, 1.0, 0.01)
            .unwrap_or_else(|| mean_s1.last_t().min(mean_s2.last_t())),
    };

    let anchors = extract_states(&mean_s1, &mean_s2, cfg.n_states, cfg.exclusion, end_time)?;

    let floor = signal::normalization_floor();
    let mut samples = Vec::with_capacity(corrected.len() * anchors.len());
    for trial in &corrected {
        let per_state: Vec<[f64; 2]> = anchors
            .iter()
            .map(|a| {
                [
                    trial.channel(Channel::S1).sample_at(a.t),
                    trial.channel(Channel::S2).sample_at(a.t),
                ]
            })
            .collect();
        let normalized = normalize_to_first_state(&per_state, floor)?;
        for (k, features) in normalized.into_iter().enumerate() {
            samples.push(StateSample {
                features,
                state: k as u8 + 1,
                trial_id: trial.trial_id.clone(),
            });
        }
    }
    let dataset = StateDataset::new(samples)?;

    let train_cfg = TrainConfig {
        gamma: cfg.gamma,
        c: cfg.c,
        tol: cfg.tol,
        max_passes: cfg.max_passes,
    };
    let model = train_multiclass(&dataset, &train_cfg)?;

    let mut correct = 0;
    for s in dataset.samples() {
        if model.predict(&s.features)? == s.state {
            correct += 1;
        }
    }

    Ok(Calibration {
        model,
        dataset,
        anchors,
        average,
        end_time,
        training_accuracy: (correct, recordings.len() * cfg.n_states),
        clamped,
        single_trial,
    })
}

/// Detects the full-contraction time: the earliest moment after the peak
/// slew at which both channels' derivative magnitudes stay below
/// `frac`·peak for `quiet_s` seconds.
pub fn detect_end_time(
    s1: &ChannelSeries,
    s2: &ChannelSeries,
    quiet_s: f64,
    frac: f64,
) -> Option<f64> {
    let grid = s1.times();
    if grid.len() < 3 {
        return None;
    }
    let deriv = |s: &ChannelSeries| -> Vec<f64> {
        grid.windows(2)
            .map(|w| {
                let dt = w[1] - w[0];
                if dt > 0.0 {
                    (s.sample_at(w[1]) - s.sample_at(w[0])).abs() / dt
                } else {
                    0.0
                }
            })
            .collect()
    };
    let d1 = deriv(s1);
    let d2 = deriv(s2);
    let mid: Vec<f64> = grid.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let peak1 = d1.iter().cloned().fold(0.0, f64::max);
    let peak2 = d2.iter().cloned().fold(0.0, f64::max);
    if peak1 == 0.0 || peak2 == 0.0 {
        return None;
    }
    let peak_t = mid
        .iter()
        .zip(d1.iter().zip(&d2))
        .max_by(|a, b| {
            let ma = (a.1 .0 / peak1).max(a.1 .1 / peak2);
            let mb = (b.1 .0 / peak1).max(b.1 .1 / peak2);
            ma.total_cmp(&mb)
        })
        .map(|(t, _)| *t)?;

    let quiet = |i: usize| d1[i] < frac * peak1 && d2[i] < frac * peak2;
    let last_t = *grid.last().unwrap();
    for start in 0..mid.len() {
        if mid[start] < peak_t || !quiet(start) {
            continue;
        }
        if mid[start] + quiet_s > last_t {
            break;
        }
        let mut end = start;
        while end < mid.len() && quiet(end) {
            end += 1;
        }
        let span = mid[end - 1] - mid[start];
        if span >= quiet_s {
            return Some(mid[start]);
        }
    }
    None
}
