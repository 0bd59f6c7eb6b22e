use std::collections::BTreeMap;

use super::{sub_seed, SimError};
use crate::classifier::{
    fit_and_evaluate, labeled_features, quantize, to_examples, MlpModel, QuantizedModel, MODEL_MAGIC, QUANT_MAGIC,
};
use crate::config::{ConfigDocument, DeviceSpec};
use crate::datagen::{generate_synthetic, read_dataset, ScheduleEntry, SyntheticActivityModel};
use crate::firmware::motion_detector;
use crate::netproto::{raw_sample_bytes, Key};
use crate::pipeline::window_label;
use crate::types::{App, ChannelSet, Label, LabeledRecording, SensorSample};

/// Distinctive raw sample planted in recordings to audit radio traffic.
pub fn canary_sample(t_ms: i64, with_stretch: bool) -> SensorSample {
    SensorSample {
        t_ms,
        accel: [0.4242, -0.1337, 1.0101],
        gyro: [-12.34, 56.78, -90.12],
        stretch: with_stretch.then_some(0.4321),
    }
}

pub const CANARY_EVERY: usize = 1000;

/// A recording replayed in an endless loop.
#[derive(Debug, Clone)]
pub struct Playback {
    pub recording: LabeledRecording,
    t0: i64,
    /// Offsets of samples from the first one.
    offsets: Vec<i64>,
    period_ms: i64,
    /// Loop length: last offset plus one nominal period.
    duration_ms: i64,
    /// Offsets where the wake-on-motion rule fires.
    motion: Vec<i64>,
}

impl Playback {
    pub fn new(recording: LabeledRecording, threshold_g: f64) -> Result<Self, SimError> {
        let s = &recording.samples;
        if s.len() < 2 {
            return Err(SimError::Setup("recording needs at least two samples".into()));
        }
        let t0 = s[0].t_ms;
        let offsets: Vec<i64> = s.iter().map(|x| x.t_ms - t0).collect();
        let period_ms = (offsets[1] - offsets[0]).max(1);
        let duration_ms = offsets[offsets.len() - 1] + period_ms;
        let motion = (1..s.len())
            .filter(|&i| motion_detector(&s[i - 1..=i], threshold_g))
            .map(|i| offsets[i])
            .collect();
        Ok(Playback { recording, t0, offsets, period_ms, duration_ms, motion })
    }

    pub fn period_ms(&self) -> i64 {
        self.period_ms
    }

    /// First time `>= t` at which motion is detected.
    pub fn next_motion(&self, t: i64) -> Option<i64> {
        let first = *self.motion.first()?;
        let base = t.div_euclid(self.duration_ms) * self.duration_ms;
        let rel = t - base;
        let i = self.motion.partition_point(|&m| m < rel);
        Some(match self.motion.get(i) {
            Some(&m) => base + m,
            None => base + self.duration_ms + first,
        })
    }

    /// The `w` samples preceding time `t`, wrapping around the loop.
    pub fn window_ending(&self, t: i64, w: usize) -> Vec<SensorSample> {
        let n = self.offsets.len() as i64;
        let k = t.div_euclid(self.duration_ms);
        let rel = t - k * self.duration_ms;
        let end = k * n + self.offsets.partition_point(|&o| o < rel) as i64;
        (end - w as i64..end)
            .map(|g| self.recording.samples[g.rem_euclid(n) as usize])
            .collect()
    }

    pub fn truth(&self, window: &[SensorSample]) -> Option<Label> {
        window_label(window.iter().map(|s| self.recording.label_at(s.t_ms)), window.len())
    }

    pub fn start_ms(&self) -> i64 {
        self.t0
    }
}

#[derive(Debug, Clone)]
pub struct DeviceSetup {
    pub spec: DeviceSpec,
    pub channels: ChannelSet,
    pub playback: Playback,
    /// The int8 model the node runs, dequantized for inference.
    pub model: MlpModel,
    pub model_bytes: usize,
    /// int16 encoding of the planted canary sample, if any.
    pub canary: Option<Vec<u8>>,
}

/// Everything a run needs that does not depend on the simulation seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ConfigDocument,
    pub key: Key,
    pub devices: Vec<DeviceSetup>,
}

fn load_model(path: &std::path::Path) -> Result<QuantizedModel, SimError> {
    let bytes = std::fs::read(path).map_err(|e| SimError::Setup(format!("{}: {e}", path.display())))?;
    let parsed = match bytes.get(..4) {
        Some(m) if m == MODEL_MAGIC => MlpModel::from_bytes(&bytes).map(|m| quantize(&m)),
        Some(m) if m == QUANT_MAGIC => QuantizedModel::from_bytes(&bytes),
        _ => return Err(SimError::Setup(format!("{}: not a model file", path.display()))),
    };
    parsed.map_err(|e| SimError::Setup(format!("{}: {e}", path.display())))
}

/// Trains the default model for `app` on the configured synthetic corpus.
pub fn train_default_model(config: &ConfigDocument, app: App) -> Result<MlpModel, SimError> {
    let syn = &config.synthetic_models;
    let rec = generate_synthetic(&syn.model(app, syn.seed), &syn.schedule(app), syn.rate_hz)?;
    let feats = labeled_features(&rec, config.pipeline.window, config.pipeline.overlap, app.label_kind())?;
    let channels = config.pipeline.channels_for(app);
    let selected = feats
        .into_iter()
        .map(|(f, c)| Ok((f.select(channels)?, c)))
        .collect::<Result<Vec<_>, crate::pipeline::PipelineError>>()?;
    let (outcome, _) = fit_and_evaluate(&to_examples(&selected), app.label_kind(), &config.train)?;
    Ok(outcome.model)
}

impl Scenario {
    pub fn from_config(config: &ConfigDocument) -> Result<Scenario, SimError> {
        config.validate()?;
        let key = config.protocol.key()?;
        let mut trained: BTreeMap<u8, QuantizedModel> = BTreeMap::new();
        let mut devices = Vec::new();
        for spec in &config.scenario.devices {
            let app = spec.app;
            let channels = config.pipeline.channels_for(app);
            let quant = match &spec.model {
                Some(path) => load_model(path)?,
                None => match trained.get(&app.id()) {
                    Some(q) => q.clone(),
                    None => {
                        let q = quantize(&train_default_model(config, app)?);
                        trained.insert(app.id(), q.clone());
                        q
                    }
                },
            };
            let expected = config.layer_sizes(app);
            if quant.sizes[0] != expected[0] || quant.sizes[2] != expected[2] {
                return Err(SimError::Setup(format!(
                    "device {}: model sizes {:?} do not fit features/classes {:?}",
                    spec.id, quant.sizes, expected
                )));
            }

            let mut recording = match (&spec.recording, &spec.schedule) {
                (Some(path), _) => read_dataset(path)?,
                (None, schedule) => {
                    let syn = &config.synthetic_models;
                    let seed = sub_seed(syn.seed, &format!("recording:{}", spec.id));
                    let default_schedule: Vec<ScheduleEntry> = match app {
                        App::Har => SyntheticActivityModel::har_schedule(1),
                        App::Gesture => SyntheticActivityModel::gesture_schedule(1),
                    };
                    let schedule = schedule.clone().unwrap_or(default_schedule);
                    generate_synthetic(&syn.model(app, seed), &schedule, syn.rate_hz)?
                }
            };
            if !channels.is_subset(recording.channels()) {
                return Err(SimError::Setup(format!(
                    "device {}: recording has {} but the model needs {}",
                    spec.id,
                    recording.channels(),
                    channels
                )));
            }
            if recording.label_kind().is_some_and(|k| k != app.label_kind()) {
                return Err(SimError::Setup(format!("device {}: recording labels do not match app", spec.id)));
            }

            let canary = if config.scenario.canary {
                let with_stretch = recording.has_stretch();
                let mut pattern = None;
                for i in (CANARY_EVERY / 2..recording.samples.len()).step_by(CANARY_EVERY) {
                    let c = canary_sample(recording.samples[i].t_ms, with_stretch);
                    pattern = Some(raw_sample_bytes(&c));
                    recording.samples[i] = c;
                }
                pattern
            } else {
                None
            };

            let playback = Playback::new(recording, config.scenario.motion_threshold_g)?;
            devices.push(DeviceSetup {
                spec: spec.clone(),
                channels,
                playback,
                model: quant.dequantize(),
                model_bytes: quant.flash_bytes(),
                canary,
            });
        }
        Ok(Scenario { config: config.clone(), key, devices })
    }
}
