//! Seeded per-class signal generator used as the reproducible training and
//! acceptance corpus.
//!
//! Each class is a stationary signal: a gravity orientation, a periodic
//! acceleration component along `axis` (the gravity direction when unset),
//! a periodic gyro component on x, and an optional stretch waveform, plus
//! Gaussian noise. Every value is rounded to six fractional digits so that
//! generated recordings survive the CSV round trip bit-exactly.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::types::{
    ActivityLabel, Annotation, GestureLabel, Label, LabeledRecording, SensorSample, ACCEL_RANGE_G,
    GYRO_RANGE_DPS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignal {
    pub label: Label,
    /// Direction of gravity in the sensor frame; normalized on use.
    pub gravity: [f64; 3],
    pub freq_hz: f64,
    pub amplitude_g: f64,
    #[serde(default)]
    pub axis: Option<[f64; 3]>,
    #[serde(default)]
    pub gyro_dps: f64,
    pub noise_g: f64,
    #[serde(default)]
    pub gyro_noise_dps: f64,
    #[serde(default)]
    pub stretch_mean: f64,
    #[serde(default)]
    pub stretch_amplitude: f64,
    #[serde(default)]
    pub stretch_noise: f64,
}

impl ClassSignal {
    fn unit(v: [f64; 3]) -> [f64; 3] {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            [0.0; 3]
        } else {
            [v[0] / n, v[1] / n, v[2] / n]
        }
    }

    fn signature(&self) -> (u64, u64, [u64; 3]) {
        let g = Self::unit(self.gravity);
        (
            self.freq_hz.to_bits(),
            self.amplitude_g.to_bits(),
            g.map(|x| ((x * 1e9).round() as i64) as u64),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticActivityModel {
    pub seed: u64,
    pub with_stretch: bool,
    pub classes: Vec<ClassSignal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub label: Label,
    pub duration_ms: u64,
}

impl ScheduleEntry {
    pub fn new(label: impl Into<Label>, duration_ms: u64) -> Self {
        ScheduleEntry {
            label: label.into(),
            duration_ms,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn class(
    label: impl Into<Label>,
    gravity: [f64; 3],
    freq_hz: f64,
    amplitude_g: f64,
    gyro_dps: f64,
    noise_g: f64,
    stretch_mean: f64,
    stretch_amplitude: f64,
) -> ClassSignal {
    ClassSignal {
        label: label.into(),
        gravity,
        freq_hz,
        amplitude_g,
        axis: None,
        gyro_dps,
        noise_g,
        gyro_noise_dps: noise_g * 100.0,
        stretch_mean,
        stretch_amplitude,
        stretch_noise: 0.01,
    }
}

impl SyntheticActivityModel {
    /// Seven-class ankle + knee-sleeve model.
    pub fn har_default(seed: u64) -> Self {
        use ActivityLabel::*;
        SyntheticActivityModel {
            seed,
            with_stretch: true,
            classes: vec![
                class(Drive, [0.7, 0.0, 0.714], 12.0, 0.06, 4.0, 0.008, 0.6, 0.02),
                class(Jump, [1.0, 0.0, 0.0], 1.2, 0.9, 60.0, 0.03, 0.5, 0.35),
                class(LieDown, [0.0, 0.0, 1.0], 0.0, 0.0, 0.0, 0.005, 0.2, 0.0),
                class(Sit, [0.5, 0.0, 0.866], 0.0, 0.0, 0.0, 0.005, 0.75, 0.0),
                class(Stand, [1.0, 0.0, 0.0], 0.0, 0.0, 0.0, 0.005, 0.15, 0.0),
                class(Walk, [1.0, 0.0, 0.0], 2.0, 0.35, 120.0, 0.03, 0.4, 0.25),
                class(Transition, [0.707, 0.707, 0.0], 0.5, 0.25, 90.0, 0.02, 0.45, 0.3),
            ],
        }
    }

    /// Four-class wrist gesture model (no stretch channel).
    pub fn gesture_default(seed: u64) -> Self {
        use GestureLabel::*;
        let mut classes = vec![
            class(Up, [0.0, 0.0, 1.0], 1.5, 0.5, 80.0, 0.03, 0.0, 0.0),
            class(Down, [0.0, 0.3, 0.954], 1.0, 0.45, 60.0, 0.03, 0.0, 0.0),
            class(Left, [0.3, 0.0, 0.954], 2.0, 0.4, 100.0, 0.03, 0.0, 0.0),
            class(Right, [-0.3, 0.0, 0.954], 2.5, 0.35, 120.0, 0.03, 0.0, 0.0),
        ];
        let axes = [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
        for (c, axis) in classes.iter_mut().zip(axes) {
            c.axis = Some(axis);
            c.stretch_noise = 0.0;
        }
        SyntheticActivityModel {
            seed,
            with_stretch: false,
            classes,
        }
    }

    /// Corpus where Sit and Stand share every motion parameter and differ
    /// only in knee stretch, while Walk/LieDown share stretch with them.
    pub fn ablation(seed: u64) -> Self {
        use ActivityLabel::*;
        let mut walk = class(Walk, [1.0, 0.0, 0.0], 2.0, 0.35, 120.0, 0.03, 0.75, 0.0);
        walk.stretch_noise = 0.03;
        let mut model = SyntheticActivityModel {
            seed,
            with_stretch: true,
            classes: vec![
                class(Sit, [1.0, 0.0, 0.0], 0.0, 0.0, 0.0, 0.02, 0.75, 0.0),
                class(Stand, [1.0, 0.0, 0.0], 0.0, 0.0, 0.0, 0.02, 0.15, 0.0),
                walk,
                class(LieDown, [0.0, 0.0, 1.0], 0.0, 0.0, 0.0, 0.02, 0.15, 0.0),
            ],
        };
        for c in &mut model.classes {
            c.stretch_noise = c.stretch_noise.max(0.03);
        }
        model
    }

    /// Default schedule for the HAR corpus: every activity separated by a
    /// short transition, repeated `cycles` times.
    pub fn har_schedule(cycles: usize) -> Vec<ScheduleEntry> {
        use ActivityLabel::*;
        let block = [
            (Walk, 40_000),
            (Sit, 30_000),
            (Stand, 30_000),
            (Jump, 15_000),
            (LieDown, 30_000),
            (Drive, 25_000),
        ];
        let mut out = Vec::new();
        for _ in 0..cycles {
            for (label, ms) in block {
                out.push(ScheduleEntry::new(label, ms));
                out.push(ScheduleEntry::new(Transition, 4_000));
            }
        }
        out
    }

    pub fn gesture_schedule(cycles: usize) -> Vec<ScheduleEntry> {
        let mut out = Vec::new();
        for _ in 0..cycles {
            for g in GestureLabel::ALL {
                out.push(ScheduleEntry::new(g, 12_000));
            }
        }
        out
    }

    pub fn ablation_schedule(cycles: usize) -> Vec<ScheduleEntry> {
        use ActivityLabel::*;
        let mut out = Vec::new();
        for _ in 0..cycles {
            for label in [Sit, Walk, Stand, LieDown] {
                out.push(ScheduleEntry::new(label, 20_000));
            }
        }
        out
    }

    pub fn class_for(&self, label: Label) -> Option<&ClassSignal> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Checks that every class has a distinct (frequency, amplitude,
    /// orientation) triple, so classes are separable from motion alone.
    pub fn check_separable(&self) -> Result<(), DatagenError> {
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                if a.signature() == b.signature() {
                    return Err(DatagenError::InvalidModel(format!(
                        "{} and {} share frequency, amplitude and orientation",
                        a.label, b.label
                    )));
                }
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), DatagenError> {
        for c in &self.classes {
            let ok = [c.freq_hz, c.amplitude_g, c.noise_g, c.gyro_noise_dps, c.stretch_noise]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0)
                && c.gravity.iter().any(|g| *g != 0.0);
            if !ok {
                return Err(DatagenError::InvalidModel(format!(
                    "{}: parameters must be finite, nonnegative, with nonzero gravity",
                    c.label
                )));
            }
        }
        let kinds: Vec<_> = self.classes.iter().map(|c| c.label.kind()).collect();
        if kinds.windows(2).any(|w| w[0] != w[1]) {
            return Err(DatagenError::InvalidModel("mixed label kinds".into()));
        }
        Ok(())
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Generates a recording following `schedule` at `rate_hz`. The output is a
/// pure function of `(model, schedule, rate_hz)`.
pub fn generate_synthetic(
    model: &SyntheticActivityModel,
    schedule: &[ScheduleEntry],
    rate_hz: u32,
) -> Result<LabeledRecording, DatagenError> {
    if rate_hz == 0 || rate_hz > 1000 {
        return Err(DatagenError::InvalidSchedule(
            "rate_hz must be in 1..=1000 for millisecond timestamps".into(),
        ));
    }
    if let Some(e) = schedule.iter().find(|e| e.duration_ms == 0) {
        return Err(DatagenError::InvalidSchedule(format!(
            "{} has zero duration",
            e.label
        )));
    }
    model.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let rate = f64::from(rate_hz);
    let mut samples = Vec::new();
    let mut annotations: Vec<Annotation> = Vec::new();
    let mut index: u64 = 0;

    for entry in schedule {
        let signal = model.class_for(entry.label).ok_or_else(|| {
            DatagenError::InvalidSchedule(format!("no signal model for {}", entry.label))
        })?;
        let count = ((entry.duration_ms as f64) * rate / 1000.0).round().max(1.0) as u64;
        let phase = rng.gen_range(0.0..TAU);
        let accel_noise = Normal::new(0.0, signal.noise_g).expect("validated sigma");
        let gyro_noise = Normal::new(0.0, signal.gyro_noise_dps).expect("validated sigma");
        let stretch_noise = Normal::new(0.0, signal.stretch_noise).expect("validated sigma");
        let g = ClassSignal::unit(signal.gravity);
        let axis = ClassSignal::unit(signal.axis.unwrap_or(signal.gravity));

        let first_t = (index as f64 * 1000.0 / rate).round() as i64;
        for k in 0..count {
            let t_ms = ((index + k) as f64 * 1000.0 / rate).round() as i64;
            let local_s = k as f64 / rate;
            let wave = (TAU * signal.freq_hz * local_s + phase).sin();
            let mut accel = [0.0; 3];
            for (i, a) in accel.iter_mut().enumerate() {
                let v = g[i] + signal.amplitude_g * wave * axis[i] + accel_noise.sample(&mut rng);
                *a = round6(v.clamp(-ACCEL_RANGE_G, ACCEL_RANGE_G));
            }
            let mut gyro = [0.0; 3];
            for (i, w) in gyro.iter_mut().enumerate() {
                let drive = if i == 0 { signal.gyro_dps * wave } else { 0.0 };
                let v = drive + gyro_noise.sample(&mut rng);
                *w = round6(v.clamp(-GYRO_RANGE_DPS, GYRO_RANGE_DPS));
            }
            let stretch = model.with_stretch.then(|| {
                let v = signal.stretch_mean
                    + signal.stretch_amplitude * wave
                    + stretch_noise.sample(&mut rng);
                round6(v.clamp(0.0, 1.0))
            });
            samples.push(SensorSample {
                t_ms,
                accel,
                gyro,
                stretch,
            });
        }
        index += count;
        let last_t = samples.last().expect("count >= 1").t_ms;
        match annotations.last_mut() {
            Some(prev) if prev.label == entry.label => prev.end_ms = last_t,
            _ => annotations.push(Annotation {
                start_ms: first_t,
                end_ms: last_t,
                label: entry.label,
            }),
        }
    }

    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("generator".to_string(), "synthetic".to_string());
    metadata.insert("seed".to_string(), model.seed.to_string());
    metadata.insert("rate_hz".to_string(), rate_hz.to_string());
    Ok(LabeledRecording {
        samples,
        annotations,
        subject_id: format!("synthetic-{}", model.seed),
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{read_dataset, write_dataset};
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn walk_recording(noise: f64) -> LabeledRecording {
        let mut model = SyntheticActivityModel::har_default(3);
        for c in &mut model.classes {
            c.noise_g = noise;
        }
        generate_synthetic(&model, &[ScheduleEntry::new(ActivityLabel::Walk, 10_000)], 100).unwrap()
    }

    /// Frequency of the largest nonzero FFT bin of the mean-removed |accel|.
    fn dominant_frequency(rec: &LabeledRecording, rate: f64) -> f64 {
        let mags: Vec<f64> = rec.samples.iter().map(SensorSample::accel_magnitude).collect();
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        let mut buf: Vec<Complex<f64>> = mags.iter().map(|m| Complex::new(m - mean, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let n = buf.len();
        let (bin, _) = buf[1..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        (bin + 1) as f64 * rate / n as f64
    }

    #[test]
    fn walk_peak_at_two_hertz() {
        let rec = walk_recording(0.03);
        assert_eq!(rec.samples.len(), 1000);
        let f = dominant_frequency(&rec, 100.0);
        assert!((f - 2.0).abs() <= 0.1, "peak at {f} Hz");
    }

    #[test]
    fn static_noiseless_class_is_constant_gravity() {
        let mut model = SyntheticActivityModel::har_default(1);
        for c in &mut model.classes {
            c.noise_g = 0.0;
            c.gyro_noise_dps = 0.0;
            c.stretch_noise = 0.0;
        }
        let rec =
            generate_synthetic(&model, &[ScheduleEntry::new(ActivityLabel::LieDown, 2_000)], 100)
                .unwrap();
        assert!(rec
            .samples
            .iter()
            .all(|s| s.accel == [0.0, 0.0, 1.0] && s.gyro == [0.0; 3]));
    }

    #[test]
    fn same_seed_same_recording() {
        let model = SyntheticActivityModel::har_default(11);
        let sched = SyntheticActivityModel::har_schedule(1);
        let a = generate_synthetic(&model, &sched, 100).unwrap();
        let b = generate_synthetic(&model, &sched, 100).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticActivityModel::har_default(12), &sched, 100).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn default_models_are_separable_and_ablation_is_not() {
        SyntheticActivityModel::har_default(0).check_separable().unwrap();
        SyntheticActivityModel::gesture_default(0).check_separable().unwrap();
        assert!(SyntheticActivityModel::ablation(0).check_separable().is_err());
    }

    #[test]
    fn schedule_errors() {
        let model = SyntheticActivityModel::gesture_default(0);
        let zero = [ScheduleEntry::new(GestureLabel::Up, 0)];
        assert!(generate_synthetic(&model, &zero, 100).is_err());
        let missing = [ScheduleEntry::new(ActivityLabel::Walk, 100)];
        assert!(generate_synthetic(&model, &missing, 100).is_err());
        let ok = [ScheduleEntry::new(GestureLabel::Up, 100)];
        assert!(generate_synthetic(&model, &ok, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for model in [
            SyntheticActivityModel::har_default(5),
            SyntheticActivityModel::gesture_default(5),
        ] {
            let sched: Vec<_> = model
                .classes
                .iter()
                .map(|c| ScheduleEntry::new(c.label, 1_700))
                .collect();
            let rec = generate_synthetic(&model, &sched, 100).unwrap();
            let path = dir.path().join("rt.csv");
            write_dataset(&rec, &path).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(back.samples, rec.samples);
            assert_eq!(back.annotations, rec.annotations);
        }
    }

    #[test]
    fn thousand_sample_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = walk_recording(0.03);
        let path = dir.path().join("walk.csv");
        write_dataset(&rec, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.samples, rec.samples);
        assert_eq!(back.annotations, rec.annotations);
    }
}
