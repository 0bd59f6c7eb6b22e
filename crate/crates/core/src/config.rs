//! The JSON configuration document shared by every CLI command.
//!
//! Every section is optional and falls back to the defaults below; unknown
//! keys are errors. `docs/reference_config.json` is the serialized default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{quantized_flash_bytes, TrainConfig};
use crate::datagen::{ScheduleEntry, SyntheticActivityModel};
use crate::firmware::{memory_footprint, EnergyConfig, MemoryLedger, DEFAULT_MOTION_THRESHOLD_G, HOUR_MS};
use crate::netproto::{parse_key_hex, ChannelModel, Key, RetryPolicy, SyncConfig};
use crate::pipeline::{stride, FEATURES_PER_CHANNEL};
use crate::types::{App, ChannelSet, DeviceProfile, Label};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window: usize,
    pub overlap: f64,
    /// Feature channels; `None` uses every channel the app's sensors carry.
    pub channels: Option<ChannelSet>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { window: 128, overlap: 0.5, channels: None }
    }
}

impl PipelineConfig {
    pub fn channels_for(&self, app: App) -> ChannelSet {
        self.channels.unwrap_or_else(|| app.channels())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub rate_hz: u32,
    /// App generated by `datagen`.
    pub app: App,
    pub har_cycles: usize,
    pub gesture_cycles: usize,
    /// Replace the built-in signal models.
    pub har_model: Option<SyntheticActivityModel>,
    pub gesture_model: Option<SyntheticActivityModel>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            rate_hz: 100,
            app: App::Har,
            // About 3000 windows of 128 samples at 50% overlap.
            har_cycles: 10,
            gesture_cycles: 15,
            har_model: None,
            gesture_model: None,
        }
    }
}

impl SyntheticConfig {
    pub fn model(&self, app: App, seed: u64) -> SyntheticActivityModel {
        let custom = match app {
            App::Har => &self.har_model,
            App::Gesture => &self.gesture_model,
        };
        match custom {
            Some(m) => SyntheticActivityModel { seed, ..m.clone() },
            None => match app {
                App::Har => SyntheticActivityModel::har_default(seed),
                App::Gesture => SyntheticActivityModel::gesture_default(seed),
            },
        }
    }

    pub fn schedule(&self, app: App) -> Vec<ScheduleEntry> {
        match app {
            App::Har => SyntheticActivityModel::har_schedule(self.har_cycles),
            App::Gesture => SyntheticActivityModel::gesture_schedule(self.gesture_cycles),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Pre-shared AES-128 key, 32 hex digits, used by every session.
    pub key_hex: String,
    pub retry: RetryPolicy,
    pub sync: SyncConfig,
    /// Classifier outputs that raise an ALERT.
    pub alert_labels: Vec<Label>,
    pub alert_cooldown_ms: i64,
    /// Classify on the node and send only results. When off, raw sample
    /// blocks are sent instead.
    pub local_processing: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            key_hex: "000102030405060708090a0b0c0d0e0f".into(),
            retry: RetryPolicy::default(),
            sync: SyncConfig::default(),
            alert_labels: vec![Label::Activity(crate::types::ActivityLabel::Jump)],
            alert_cooldown_ms: 60_000,
            local_processing: true,
        }
    }
}

impl ProtocolConfig {
    pub fn key(&self) -> Result<Key, ConfigError> {
        parse_key_hex(&self.key_hex).map_err(|e| ConfigError::Invalid(vec![format!("protocol.key_hex: {e}")]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: u16,
    pub app: App,
    /// Device clock minus host clock.
    pub clock_skew_ms: i64,
    /// Dataset CSV replayed in a loop; otherwise a synthetic recording.
    pub recording: Option<PathBuf>,
    /// Synthetic schedule replayed in a loop; defaults to the app's corpus
    /// schedule with one cycle.
    pub schedule: Option<Vec<ScheduleEntry>>,
    /// OHM1 or OHQ1 model file; otherwise one is trained at start-up.
    pub model: Option<PathBuf>,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec { id: 1, app: App::Har, clock_skew_ms: 0, recording: None, schedule: None, model: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration_ms: i64,
    pub devices: Vec<DeviceSpec>,
    /// Energy is settled at this period; must divide an hour.
    pub account_interval_ms: i64,
    /// Awake time without motion before going back to sleep.
    pub idle_timeout_ms: i64,
    pub motion_threshold_g: f64,
    pub processing_ms: i64,
    /// Plant a recognizable raw sample in every recording and audit the
    /// radio traffic for it.
    pub canary: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            duration_ms: HOUR_MS,
            devices: vec![
                DeviceSpec { id: 1, app: App::Har, clock_skew_ms: 250, ..Default::default() },
                DeviceSpec { id: 2, app: App::Gesture, clock_skew_ms: -120, ..Default::default() },
            ],
            account_interval_ms: 60_000,
            idle_timeout_ms: 5_000,
            motion_threshold_g: DEFAULT_MOTION_THRESHOLD_G,
            processing_ms: 5,
            canary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub storage_rate_hz: u64,
    pub storage_channels: u64,
    pub bytes_per_scalar: u64,
    pub storage_seconds: u64,
    /// App whose memory footprint is reported.
    pub app: App,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            storage_rate_hz: 250,
            storage_channels: 3,
            bytes_per_scalar: 2,
            storage_seconds: 3600,
            app: App::Har,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDocument {
    pub device_profile: DeviceProfile,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub synthetic_models: SyntheticConfig,
    pub energy: EnergyConfig,
    pub channel: ChannelModel,
    pub protocol: ProtocolConfig,
    pub scenario: ScenarioConfig,
    pub budget: BudgetConfig,
}

impl ConfigDocument {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let doc: ConfigDocument = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Layer sizes of the model an app runs under this config.
    pub fn layer_sizes(&self, app: App) -> [usize; 3] {
        let d = self.pipeline.channels_for(app).len() * FEATURES_PER_CHANNEL;
        [d, self.train.hidden, app.label_kind().class_count()]
    }

    pub fn memory_ledger(&self, app: App) -> Result<MemoryLedger, crate::firmware::FirmwareError> {
        let sizes = self.layer_sizes(app);
        memory_footprint(
            self.pipeline.window,
            self.pipeline.channels_for(app).len(),
            sizes,
            quantized_flash_bytes(sizes),
            &self.device_profile,
        )
    }

    /// Every constraint violation in the document.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.device_profile.validate() {
            v.push(format!("device_profile: {e}"));
        }
        let p = &self.pipeline;
        if p.window < 8 {
            v.push("pipeline.window must be >= 8".into());
        }
        if !(0.0..1.0).contains(&p.overlap) {
            v.push("pipeline.overlap must be in [0, 1)".into());
        }
        if let Some(ch) = p.channels {
            if ch.is_empty() {
                v.push("pipeline.channels must not be empty".into());
            }
        }
        if let Err(e) = self.train.validate() {
            v.push(format!("train: {e}"));
        }
        let s = &self.synthetic_models;
        if s.rate_hz == 0 || s.rate_hz > 1000 {
            v.push("synthetic_models.rate_hz must be in 1..=1000".into());
        }
        if s.har_cycles == 0 || s.gesture_cycles == 0 {
            v.push("synthetic_models cycles must be > 0".into());
        }
        v.extend(self.energy.violations());
        v.extend(self.channel.violations());

        let pr = &self.protocol;
        if parse_key_hex(&pr.key_hex).is_err() {
            v.push("protocol.key_hex must be 32 hex digits".into());
        }
        if pr.retry.max_attempts == 0 || pr.retry.interval_ms <= 0 {
            v.push("protocol.retry needs max_attempts > 0 and interval_ms > 0".into());
        }
        if pr.sync.interval_ms <= 0 || pr.sync.timeout_ms <= 0 {
            v.push("protocol.sync intervals must be > 0".into());
        }
        if pr.alert_cooldown_ms < 0 {
            v.push("protocol.alert_cooldown_ms must be >= 0".into());
        }

        let sc = &self.scenario;
        if sc.duration_ms <= 0 {
            v.push("scenario.duration_ms must be > 0".into());
        }
        if sc.account_interval_ms <= 0 || HOUR_MS % sc.account_interval_ms != 0 {
            v.push("scenario.account_interval_ms must divide 3600000".into());
        }
        if sc.idle_timeout_ms < 0 || sc.processing_ms < 0 {
            v.push("scenario timeouts must be >= 0".into());
        }
        if !(sc.motion_threshold_g >= 0.0) {
            v.push("scenario.motion_threshold_g must be >= 0".into());
        }
        if sc.devices.is_empty() {
            v.push("scenario.devices must not be empty".into());
        }
        let mut ids: Vec<u16> = sc.devices.iter().map(|d| d.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            v.push("scenario.devices ids must be unique".into());
        }
        for d in &sc.devices {
            if d.recording.is_some() && d.schedule.is_some() {
                v.push(format!("scenario.devices[{}]: recording and schedule are exclusive", d.id));
            }
            if let Some(sched) = &d.schedule {
                if sched.is_empty() || sched.iter().any(|e| e.duration_ms == 0) {
                    v.push(format!("scenario.devices[{}].schedule needs non-empty entries", d.id));
                }
                if sched.iter().any(|e| e.label.kind() != d.app.label_kind()) {
                    v.push(format!("scenario.devices[{}].schedule labels must match app", d.id));
                }
            }
        }

        let mut apps: Vec<App> = Vec::new();
        for app in sc.devices.iter().map(|d| d.app).chain([self.budget.app]) {
            if !apps.contains(&app) {
                apps.push(app);
            }
        }
        for app in apps {
            if p.window >= 8 && !p.channels_for(app).is_empty() {
                if let Err(e) = self.memory_ledger(app) {
                    v.push(format!("memory ({app:?}): {e}"));
                }
            }
        }
        if p.window >= 8 && (0.0..1.0).contains(&p.overlap) && stride(p.window, p.overlap) == 0 {
            v.push("pipeline window/overlap give a zero stride".into());
        }
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}
