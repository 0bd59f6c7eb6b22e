//! Windowing and feature extraction.
//!
//! Feature layout: for every present channel, in canonical channel order
//! (ax, ay, az, gx, gy, gz, stretch), a block of 12 values:
//!
//! | offset | value                                   |
//! |--------|-----------------------------------------|
//! | 0      | mean                                    |
//! | 1      | population standard deviation           |
//! | 2      | minimum                                 |
//! | 3      | maximum                                 |
//! | 4..12  | `2/W * |X_k|` for k = 1..=8             |
//!
//! `X` is the W-point DFT of the mean-removed channel, so a sinusoid of
//! amplitude `a` sitting exactly on bin k contributes `a` to feature k.

use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ActivityLabel, ChannelSet, Label, LabelKind, LabeledRecording, SensorSample};

pub const DEFAULT_WINDOW: usize = 128;
pub const DEFAULT_OVERLAP: f64 = 0.5;
pub const FEATURES_PER_CHANNEL: usize = 12;
pub const FFT_BINS: usize = 8;
/// Share of a window one label must cover to name the window.
pub const DOMINANCE: f64 = 0.75;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("window length {0} must be at least 8")]
    WindowTooShort(usize),
    #[error("overlap {0} must lie in [0, 1)")]
    Overlap(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cannot compute statistics of an empty set")]
    Empty,
    #[error("channel subset {requested} not available in {available}")]
    MissingChannel {
        requested: ChannelSet,
        available: ChannelSet,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSegment {
    pub samples: Vec<SensorSample>,
    pub start_ms: i64,
    /// Index of the first sample in the source recording.
    pub start_index: usize,
    pub label: Option<Label>,
}

impl WindowSegment {
    pub fn channels(&self) -> ChannelSet {
        if self.samples.first().is_some_and(|s| s.stretch.is_some()) {
            ChannelSet::ALL
        } else {
            ChannelSet::MOTION
        }
    }
}

pub fn stride(window: usize, overlap: f64) -> usize {
    ((window as f64 * (1.0 - overlap)).round() as usize).max(1)
}

fn nominal_period_ms(samples: &[SensorSample]) -> Option<i64> {
    let mut dts: Vec<i64> = samples.windows(2).map(|w| w[1].t_ms - w[0].t_ms).collect();
    if dts.is_empty() {
        return None;
    }
    let mid = dts.len() / 2;
    Some(*dts.select_nth_unstable(mid).1)
}

/// Label of a window: the dominant annotation when it covers at least 75% of
/// the samples; `Transition` when two or more labels share the window without
/// one dominating (activity data only); otherwise the majority label, if any.
pub fn window_label(labels: impl IntoIterator<Item = Option<Label>>, len: usize) -> Option<Label> {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for l in labels.into_iter().flatten() {
        *counts.entry(l).or_default() += 1;
    }
    // Ties resolve to the lowest class index (BTreeMap order).
    let (&top, &n) = counts.iter().rev().max_by_key(|(_, n)| **n)?;
    if n as f64 >= DOMINANCE * len as f64 {
        return Some(top);
    }
    if counts.len() >= 2 {
        return match top.kind() {
            LabelKind::Activity => Some(ActivityLabel::Transition.into()),
            LabelKind::Gesture => None,
        };
    }
    (2 * n > len).then_some(top)
}

/// Cuts `recording` into fixed windows of `window` samples advancing by
/// `round(window * (1 - overlap))`. Windows that straddle a timing gap larger
/// than 1.5 nominal sample periods are skipped.
pub fn segment(
    recording: &LabeledRecording,
    window: usize,
    overlap: f64,
) -> Result<Vec<WindowSegment>, PipelineError> {
    if window < 8 {
        return Err(PipelineError::WindowTooShort(window));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(PipelineError::Overlap(overlap));
    }
    let samples = &recording.samples;
    if samples.len() < window {
        return Ok(Vec::new());
    }
    let step = stride(window, overlap);
    let max_gap = nominal_period_ms(samples).map_or(i64::MAX, |p| p * 3 / 2);

    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= samples.len() {
        let slice = &samples[start..start + window];
        if slice.windows(2).all(|w| w[1].t_ms - w[0].t_ms <= max_gap) {
            let label = window_label(slice.iter().map(|s| recording.label_at(s.t_ms)), window);
            out.push(WindowSegment {
                samples: slice.to_vec(),
                start_ms: slice[0].t_ms,
                start_index: start,
                label,
            });
        }
        start += step;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub channels: ChannelSet,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Keeps only the feature blocks of `subset`.
    pub fn select(&self, subset: ChannelSet) -> Result<FeatureVector, PipelineError> {
        if !subset.is_subset(self.channels) {
            return Err(PipelineError::MissingChannel {
                requested: subset,
                available: self.channels,
            });
        }
        let mut values = Vec::with_capacity(subset.len() * FEATURES_PER_CHANNEL);
        for c in subset.iter() {
            let block = self.channels.position(c).expect("subset checked");
            let at = block * FEATURES_PER_CHANNEL;
            values.extend_from_slice(&self.values[at..at + FEATURES_PER_CHANNEL]);
        }
        Ok(FeatureVector {
            values,
            channels: subset,
        })
    }
}

/// Feature extractor with a cached FFT plan for one window length.
pub struct FeatureExtractor {
    window: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl FeatureExtractor {
    pub fn new(window: usize) -> Self {
        FeatureExtractor {
            window,
            fft: FftPlanner::new().plan_fft_forward(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn extract(&self, samples: &[SensorSample]) -> FeatureVector {
        let channels = if samples.first().is_some_and(|s| s.stretch.is_some()) {
            ChannelSet::ALL
        } else {
            ChannelSet::MOTION
        };
        let fft = if samples.len() == self.window {
            Arc::clone(&self.fft)
        } else {
            FftPlanner::new().plan_fft_forward(samples.len())
        };
        let n = samples.len() as f64;
        let mut values = Vec::with_capacity(channels.len() * FEATURES_PER_CHANNEL);
        let mut buf = vec![Complex::new(0.0, 0.0); samples.len()];
        for c in channels.iter() {
            let xs = samples.iter().map(|s| s.channel(c).unwrap_or(0.0));
            let (min, max) = xs
                .clone()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            // A flat channel has exact statistics regardless of summation error.
            let (mean, std) = if min == max {
                (min, 0.0)
            } else {
                let mean = xs.clone().sum::<f64>() / n;
                let var = xs.clone().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            };
            values.extend([mean, std, min, max]);

            for (slot, x) in buf.iter_mut().zip(xs) {
                *slot = Complex::new(x - mean, 0.0);
            }
            fft.process(&mut buf);
            for k in 1..=FFT_BINS {
                let mag = buf.get(k).map_or(0.0, |z| z.norm());
                values.push(2.0 * mag / n);
            }
        }
        FeatureVector { values, channels }
    }
}

pub fn extract_features(window: &WindowSegment) -> FeatureVector {
    FeatureExtractor::new(window.samples.len()).extract(&window.samples)
}

/// Per-dimension z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(vectors: &[FeatureVector]) -> Result<FeatureStats, PipelineError> {
        let first = vectors.first().ok_or(PipelineError::Empty)?;
        let dim = first.dim();
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in vectors {
            check_dim(dim, v.dim())?;
            for (m, x) in mean.iter_mut().zip(&v.values) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for v in vectors {
            for ((s, x), m) in var.iter_mut().zip(&v.values).zip(&mean) {
                *s += (x - m).powi(2);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(FeatureStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes `values` in place. Dimensions whose spread is below the
    /// floor carry no information and map to 0.
    pub fn apply(&self, values: &mut [f64]) -> Result<(), PipelineError> {
        check_dim(self.dim(), values.len())?;
        for ((x, m), s) in values.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = if *s < STD_FLOOR { 0.0 } else { (*x - m) / s };
        }
        Ok(())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), PipelineError> {
    if expected == got {
        Ok(())
    } else {
        Err(PipelineError::Dimension { expected, got })
    }
}

/// Z-scores `vectors` with `stats`, or with statistics fitted to `vectors`
/// when none are given. Returns the statistics for reuse at inference.
pub fn normalize_features(
    vectors: &[FeatureVector],
    stats: Option<&FeatureStats>,
) -> Result<(Vec<FeatureVector>, FeatureStats), PipelineError> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => FeatureStats::fit(vectors)?,
    };
    let normalized = vectors
        .iter()
        .map(|v| {
            let mut out = v.clone();
            stats.apply(&mut out.values)?;
            Ok(out)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok((normalized, stats))
}
