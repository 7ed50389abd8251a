//! Streaming classification of corrected two-channel frames.
//!
//! Frames are paired by stream adjacency: the board alternates emitters, so a
//! sample pairs with the immediately following sample of the other channel;
//! samples followed by their own channel are dropped and counted. Pairing
//! therefore depends only on frame order, never on wall-clock timestamps, and
//! the visited-state sequence is invariant under any strictly monotone time
//! reparameterization of the input.
//!
//! Each paired sample is normalized by the per-channel first-state reference,
//! classified, and debounced: a state change is emitted only once it persists
//! for `debounce` consecutive samples. The manifold report measures how
//! tightly a classified trajectory hugs the training data in standardized
//! feature space.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::signal::{self, Channel, RawFrame, StateDataset};
use crate::svm::{FeatureStandardizer, MulticlassSvm, SvmError};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("reference on channel {channel} is {value:.3e}, below floor {floor:.3e}")]
    NearZeroReference { channel: u8, value: f64, floor: f64 },
    #[error("no channel pairs could be formed ({dropped} unpaired frames)")]
    UnpairedChannels { dropped: usize },
    #[error("stream contains no frames")]
    EmptyStream,
    #[error("channel {0} has no frames inside the reference window")]
    NoReferenceSamples(u8),
    #[error("training dataset is empty")]
    EmptyTraining,
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ambient-corrected single-channel sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedFrame {
    pub t: f64,
    pub channel: Channel,
    pub value: f64,
}

/// Applies ambient correction to a raw frame stream, keeping order. Returns
/// the corrected frames and the number of clamped samples.
pub fn correct_frames(frames: &[RawFrame]) -> (Vec<CorrectedFrame>, usize) {
    let mut clamped = 0;
    let corrected = frames
        .iter()
        .map(|f| {
            let s = signal::ambient_correct(f);
            clamped += s.clamped as usize;
            CorrectedFrame {
                t: s.t,
                channel: f.channel,
                value: s.value,
            }
        })
        .collect();
    (corrected, clamped)
}

/// One normalized two-channel point of the classified trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub features: [f64; 2],
}

/// A debounced state transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationEvent {
    pub t: f64,
    pub state: u8,
    /// Normalized features at the event sample.
    pub features: [f64; 2],
    /// Pairwise machines that voted for the state.
    pub votes: u32,
    /// Summed |decision value| over the state's machines.
    pub decision_sum: f64,
}

/// Classified stream: emitted events plus the full normalized trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRun {
    pub events: Vec<ClassificationEvent>,
    pub trajectory: Vec<TrajectorySample>,
    pub dropped_unpaired: usize,
}

#[derive(Debug, Clone, Copy)]
struct Paired {
    t: f64,
    values: [f64; 2],
}

/// Adjacency pairing: a frame pairs with the next frame when channels differ.
fn pair_adjacent(frames: &[CorrectedFrame]) -> (Vec<Paired>, usize) {
    let mut pairs = Vec::with_capacity(frames.len() / 2);
    let mut dropped = 0usize;
    let mut i = 0;
    while i < frames.len() {
        if i + 1 < frames.len() && frames[i].channel != frames[i + 1].channel {
            let (a, b) = (&frames[i], &frames[i + 1]);
            let mut values = [0.0; 2];
            values[a.channel.index()] = a.value;
            values[b.channel.index()] = b.value;
            pairs.push(Paired {
                t: (a.t + b.t) / 2.0,
                values,
            });
            i += 2;
        } else {
            dropped += 1;
            i += 1;
        }
    }
    (pairs, dropped)
}

/// Per-channel mean over the first `window_s` seconds of the stream; the
/// CLI's default first-state reference (the trial's pre-motion plateau).
pub fn estimate_reference(
    frames: &[CorrectedFrame],
    window_s: f64,
) -> Result<[f64; 2], StreamError> {
    if frames.is_empty() {
        return Err(StreamError::EmptyStream);
    }
    let t0 = frames[0].t;
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for f in frames {
        if f.t < t0 + window_s {
            sum[f.channel.index()] += f.value;
            count[f.channel.index()] += 1;
        }
    }
    for ch in Channel::BOTH {
        if count[ch.index()] == 0 {
            return Err(StreamError::NoReferenceSamples(ch.id()));
        }
    }
    Ok([sum[0] / count[0] as f64, sum[1] / count[1] as f64])
}

/// Classifies a corrected two-channel stream into debounced state events.
///
/// Timestamps are carried as labels only; the classification depends on frame
/// values and order alone. A state change is emitted at the sample that
/// completes its debounce run, so consecutive events are always at least
/// `debounce` samples apart; the very first emission is immediate. Inside the
/// optional exclusion interval emission is held back until the run reaches a
/// sample outside it (features are still logged in the trajectory).
pub fn classify_stream(
    model: &MulticlassSvm,
    frames: &[CorrectedFrame],
    reference: [f64; 2],
    debounce: usize,
    exclusion: Option<(f64, f64)>,
) -> Result<StreamRun, StreamError> {
    if frames.is_empty() {
        return Err(StreamError::EmptyStream);
    }
    let floor = signal::normalization_floor();
    for ch in Channel::BOTH {
        let v = reference[ch.index()];
        if v.abs() <= floor {
            return Err(StreamError::NearZeroReference {
                channel: ch.id(),
                value: v,
                floor,
            });
        }
    }
    let (pairs, dropped) = pair_adjacent(frames);
    if pairs.is_empty() {
        return Err(StreamError::UnpairedChannels { dropped });
    }
    let debounce = debounce.max(1);
    let excluded = |t: f64| exclusion.is_some_and(|(lo, hi)| t >= lo && t <= hi);

    let mut trajectory = Vec::with_capacity(pairs.len());
    let mut events: Vec<ClassificationEvent> = Vec::new();
    let mut last_emitted: Option<u8> = None;
    let mut run_state: Option<u8> = None;
    let mut run_len = 0usize;

    for p in &pairs {
        let features = [p.values[0] / reference[0], p.values[1] / reference[1]];
        let vote = model.predict_with_margin(&features)?;
        trajectory.push(TrajectorySample { t: p.t, features });

        if last_emitted == Some(vote.label) {
            run_state = None;
            run_len = 0;
            continue;
        }
        if run_state != Some(vote.label) {
            run_state = Some(vote.label);
            run_len = 0;
        }
        run_len += 1;
        let confirmed = run_len >= debounce || last_emitted.is_none();
        if confirmed && !excluded(p.t) {
            events.push(ClassificationEvent {
                t: p.t,
                state: vote.label,
                features,
                votes: vote.votes,
                decision_sum: vote.magnitude,
            });
            last_emitted = Some(vote.label);
            run_state = None;
            run_len = 0;
        }
    }

    Ok(StreamRun {
        events,
        trajectory,
        dropped_unpaired: dropped,
    })
}

/// Manifold-adherence summary of a classified trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldReport {
    /// Per-sample distance to the nearest training sample, standardized
    /// feature units.
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub mean_distance: f64,
    /// State labels in order of first occurrence in the event stream.
    pub visited: Vec<u8>,
}

/// Distance of every trajectory sample to its nearest training sample in
/// standardized feature space, plus the visited-state sequence.
pub fn manifold_report(
    trajectory: &[TrajectorySample],
    events: &[ClassificationEvent],
    training: &StateDataset,
    standardizer: &FeatureStandardizer,
) -> Result<ManifoldReport, StreamError> {
    if training.is_empty() {
        return Err(StreamError::EmptyTraining);
    }
    let train_std: Vec<Vec<f64>> = training
        .samples()
        .iter()
        .map(|s| standardizer.transform(&s.features))
        .collect::<Result<_, _>>()?;

    let mut distances = Vec::with_capacity(trajectory.len());
    for sample in trajectory {
        let z = standardizer.transform(&sample.features)?;
        let mut best = f64::INFINITY;
        for row in &train_std {
            let d2: f64 = z.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum();
            best = best.min(d2);
        }
        distances.push(best.sqrt());
    }
    let max_distance = distances.iter().cloned().fold(0.0, f64::max);
    let mean_distance = if distances.is_empty() {
        0.0
    } else {
        distances.iter().sum::<f64>() / distances.len() as f64
    };
    let mut visited = Vec::new();
    for e in events {
        if !visited.contains(&e.state) {
            visited.push(e.state);
        }
    }
    Ok(ManifoldReport {
        distances,
        max_distance,
        mean_distance,
        visited,
    })
}

#[derive(Serialize)]
struct EventLine {
    t: f64,
    state: u8,
    s1: f64,
    s2: f64,
}

#[derive(Serialize)]
struct ReportLine<'a> {
    report: &'a ManifoldReport,
}

/// Emits events as JSON lines followed by one final report object.
pub fn write_events<W: Write>(
    mut writer: W,
    events: &[ClassificationEvent],
    report: &ManifoldReport,
) -> Result<(), StreamError> {
    for e in events {
        let line = EventLine {
            t: e.t,
            state: e.state,
            s1: e.features[0],
            s2: e.features[1],
        };
        writeln!(writer, "{}", serde_json::to_string(&line).expect("event json"))?;
    }
    writeln!(
        writer,
        "{}",
        serde_json::to_string(&ReportLine { report }).expect("report json")
    )?;
    Ok(())
}
