//! Shared domain types: sensor samples, label sets, channel layout and the
//! hardware profile of the reference wearable node.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Full-scale accelerometer range in g.
pub const ACCEL_RANGE_G: f64 = 16.0;
/// Full-scale gyroscope range in degrees per second.
pub const GYRO_RANGE_DPS: f64 = 2000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("class index {index} out of range for {kind} labels")]
    ClassIndex { kind: LabelKind, index: usize },
    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("annotation {index}: {reason}")]
    InvalidAnnotation { index: usize, reason: String },
    #[error("device profile: {0}")]
    InvalidProfile(String),
}

/// One timestamped multichannel motion reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub t_ms: i64,
    /// Acceleration in g.
    pub accel: [f64; 3],
    /// Angular rate in degrees per second.
    pub gyro: [f64; 3],
    /// Normalized knee-sleeve extension in `[0, 1]`; absent for gesture data.
    pub stretch: Option<f64>,
}

impl SensorSample {
    pub fn accel_magnitude(&self) -> f64 {
        self.accel.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Value of one channel, or `None` when the channel is not recorded.
    pub fn channel(&self, channel: Channel) -> Option<f64> {
        match channel {
            Channel::Ax => Some(self.accel[0]),
            Channel::Ay => Some(self.accel[1]),
            Channel::Az => Some(self.accel[2]),
            Channel::Gx => Some(self.gyro[0]),
            Channel::Gy => Some(self.gyro[1]),
            Channel::Gz => Some(self.gyro[2]),
            Channel::Stretch => self.stretch,
        }
    }

    fn check_ranges(&self) -> Result<(), String> {
        let finite = self.accel.iter().chain(self.gyro.iter()).all(|v| v.is_finite())
            && self.stretch.is_none_or(f64::is_finite);
        if !finite {
            return Err("non-finite channel value".into());
        }
        if self.accel.iter().any(|a| a.abs() > ACCEL_RANGE_G) {
            return Err(format!("accel outside +/-{ACCEL_RANGE_G} g"));
        }
        if self.gyro.iter().any(|g| g.abs() > GYRO_RANGE_DPS) {
            return Err(format!("gyro outside +/-{GYRO_RANGE_DPS} dps"));
        }
        if let Some(s) = self.stretch {
            if !(0.0..=1.0).contains(&s) {
                return Err("stretch outside [0, 1]".into());
            }
        }
        Ok(())
    }
}

/// Sensor channels in their fixed feature-block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Ax,
    Ay,
    Az,
    Gx,
    Gy,
    Gz,
    Stretch,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::Ax,
        Channel::Ay,
        Channel::Az,
        Channel::Gx,
        Channel::Gy,
        Channel::Gz,
        Channel::Stretch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Ax => "ax",
            Channel::Ay => "ay",
            Channel::Az => "az",
            Channel::Gx => "gx",
            Channel::Gy => "gy",
            Channel::Gz => "gz",
            Channel::Stretch => "stretch",
        }
    }
}

impl FromStr for Channel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ModelError::UnknownLabel(s.to_string()))
    }
}

/// A set of channels, iterated in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const MOTION: ChannelSet = ChannelSet(0b0011_1111);
    pub const ACCEL: ChannelSet = ChannelSet(0b0000_0111);
    pub const ALL: ChannelSet = ChannelSet(0b0111_1111);

    pub fn empty() -> Self {
        ChannelSet(0)
    }

    pub fn from_channels<I: IntoIterator<Item = Channel>>(channels: I) -> Self {
        ChannelSet(channels.into_iter().fold(0, |acc, c| acc | 1 << c.index()))
    }

    pub fn contains(self, channel: Channel) -> bool {
        self.0 & (1 << channel.index()) != 0
    }

    pub fn is_subset(self, other: ChannelSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Channel> {
        Channel::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    /// Position of `channel` among the members of this set.
    pub fn position(self, channel: Channel) -> Option<usize> {
        self.iter().position(|c| c == channel)
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Channel::name).collect();
        write!(f, "{}", names.join("+"))
    }
}

impl serde::Serialize for ChannelSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> serde::Deserialize<'de> for ChannelSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let list = Vec::<Channel>::deserialize(d)?;
        Ok(ChannelSet::from_channels(list))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Activity,
    Gesture,
}

impl LabelKind {
    pub fn class_count(self) -> usize {
        match self {
            LabelKind::Activity => ActivityLabel::ALL.len(),
            LabelKind::Gesture => GestureLabel::ALL.len(),
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        (0..self.class_count())
            .map(|i| Label::decode(self, i).expect("index in range").name())
            .collect()
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Activity => "activity",
            LabelKind::Gesture => "gesture",
        })
    }
}

/// Activity classes scored by the HAR application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityLabel {
    Drive,
    Jump,
    LieDown,
    Sit,
    Stand,
    Walk,
    Transition,
}

impl ActivityLabel {
    pub const ALL: [ActivityLabel; 7] = [
        ActivityLabel::Drive,
        ActivityLabel::Jump,
        ActivityLabel::LieDown,
        ActivityLabel::Sit,
        ActivityLabel::Stand,
        ActivityLabel::Walk,
        ActivityLabel::Transition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivityLabel::Drive => "Drive",
            ActivityLabel::Jump => "Jump",
            ActivityLabel::LieDown => "LieDown",
            ActivityLabel::Sit => "Sit",
            ActivityLabel::Stand => "Stand",
            ActivityLabel::Walk => "Walk",
            ActivityLabel::Transition => "Transition",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureLabel {
    Up,
    Down,
    Left,
    Right,
}

impl GestureLabel {
    pub const ALL: [GestureLabel; 4] = [
        GestureLabel::Up,
        GestureLabel::Down,
        GestureLabel::Left,
        GestureLabel::Right,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GestureLabel::Up => "Up",
            GestureLabel::Down => "Down",
            GestureLabel::Left => "Left",
            GestureLabel::Right => "Right",
        }
    }
}

/// A class label from either application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Activity(ActivityLabel),
    Gesture(GestureLabel),
}

impl Label {
    pub fn kind(self) -> LabelKind {
        match self {
            Label::Activity(_) => LabelKind::Activity,
            Label::Gesture(_) => LabelKind::Gesture,
        }
    }

    /// Stable class index (declaration order within the label set).
    pub fn encode(self) -> usize {
        match self {
            Label::Activity(a) => a as usize,
            Label::Gesture(g) => g as usize,
        }
    }

    pub fn decode(kind: LabelKind, index: usize) -> Result<Label, ModelError> {
        let out = match kind {
            LabelKind::Activity => ActivityLabel::ALL.get(index).copied().map(Label::Activity),
            LabelKind::Gesture => GestureLabel::ALL.get(index).copied().map(Label::Gesture),
        };
        out.ok_or(ModelError::ClassIndex { kind, index })
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Activity(a) => a.name(),
            Label::Gesture(g) => g.name(),
        }
    }
}

impl From<ActivityLabel> for Label {
    fn from(a: ActivityLabel) -> Self {
        Label::Activity(a)
    }
}

impl From<GestureLabel> for Label {
    fn from(g: GestureLabel) -> Self {
        Label::Gesture(g)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(a) = ActivityLabel::ALL.into_iter().find(|a| a.name() == s) {
            return Ok(Label::Activity(a));
        }
        GestureLabel::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .map(Label::Gesture)
            .ok_or_else(|| ModelError::UnknownLabel(s.to_string()))
    }
}

/// Which on-device application a node runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum App {
    Har,
    Gesture,
}

impl App {
    /// Wire identifier used in data payloads.
    pub fn id(self) -> u8 {
        match self {
            App::Har => 1,
            App::Gesture => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<App> {
        match id {
            1 => Some(App::Har),
            2 => Some(App::Gesture),
            _ => None,
        }
    }

    pub fn label_kind(self) -> LabelKind {
        match self {
            App::Har => LabelKind::Activity,
            App::Gesture => LabelKind::Gesture,
        }
    }

    /// Channels the application reads.
    pub fn channels(self) -> ChannelSet {
        match self {
            App::Har => ChannelSet::ALL,
            App::Gesture => ChannelSet::MOTION,
        }
    }
}

impl FromStr for App {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "har" => Ok(App::Har),
            "gesture" => Ok(App::Gesture),
            other => Err(ModelError::UnknownLabel(other.to_string())),
        }
    }
}

/// Hardware budget of the wearable node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceProfile {
    pub cpu_mhz: u32,
    pub sram_bytes: usize,
    pub flash_bytes: usize,
    pub p_active_har_mw: f64,
    pub p_active_gesture_mw: f64,
    pub p_sleep_mw: f64,
    pub p_tx_mw: f64,
    pub sample_rate_hz: u32,
}

impl Default for DeviceProfile {
    fn default() -> Self {
        DeviceProfile {
            cpu_mhz: 47,
            sram_bytes: 20 * 1024,
            flash_bytes: 128 * 1024,
            p_active_har_mw: 12.5,
            p_active_gesture_mw: 10.0,
            p_sleep_mw: 0.3,
            p_tx_mw: 15.0,
            sample_rate_hz: 100,
        }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), ModelError> {
        let powers = [
            ("p_active_har_mw", self.p_active_har_mw),
            ("p_active_gesture_mw", self.p_active_gesture_mw),
            ("p_sleep_mw", self.p_sleep_mw),
            ("p_tx_mw", self.p_tx_mw),
        ];
        for (name, p) in powers {
            if !(p.is_finite() && p > 0.0) {
                return Err(ModelError::InvalidProfile(format!("{name} must be > 0")));
            }
        }
        if self.sample_rate_hz == 0 || self.cpu_mhz == 0 {
            return Err(ModelError::InvalidProfile("rates must be > 0".into()));
        }
        Ok(())
    }

    pub fn active_power_mw(&self, app: App) -> f64 {
        match app {
            App::Har => self.p_active_har_mw,
            App::Gesture => self.p_active_gesture_mw,
        }
    }

    pub fn sample_period_ms(&self) -> f64 {
        1000.0 / f64::from(self.sample_rate_hz)
    }
}

/// Closed interval `[start_ms, end_ms]` of samples carrying one label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub start_ms: i64,
    pub end_ms: i64,
    pub label: Label,
}

impl Annotation {
    pub fn contains(&self, t_ms: i64) -> bool {
        (self.start_ms..=self.end_ms).contains(&t_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledRecording {
    pub samples: Vec<SensorSample>,
    pub annotations: Vec<Annotation>,
    pub subject_id: String,
    pub metadata: BTreeMap<String, String>,
}

impl LabeledRecording {
    pub fn has_stretch(&self) -> bool {
        self.samples.first().is_some_and(|s| s.stretch.is_some())
    }

    pub fn channels(&self) -> ChannelSet {
        if self.has_stretch() {
            ChannelSet::ALL
        } else {
            ChannelSet::MOTION
        }
    }

    pub fn label_kind(&self) -> Option<LabelKind> {
        self.annotations.first().map(|a| a.label.kind())
    }

    /// Label covering `t_ms`, if any. Annotations must be sorted.
    pub fn label_at(&self, t_ms: i64) -> Option<Label> {
        let idx = self.annotations.partition_point(|a| a.end_ms < t_ms);
        self.annotations
            .get(idx)
            .filter(|a| a.contains(t_ms))
            .map(|a| a.label)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, pair) in self.samples.windows(2).enumerate() {
            if pair[1].t_ms <= pair[0].t_ms {
                return Err(ModelError::InvalidSample {
                    index: i + 1,
                    reason: "timestamp not strictly increasing".into(),
                });
            }
        }
        let stretch = self.has_stretch();
        for (i, s) in self.samples.iter().enumerate() {
            s.check_ranges()
                .map_err(|reason| ModelError::InvalidSample { index: i, reason })?;
            if s.stretch.is_some() != stretch {
                return Err(ModelError::InvalidSample {
                    index: i,
                    reason: "inconsistent stretch channel availability".into(),
                });
            }
        }
        let span = match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => Some((a.t_ms, b.t_ms)),
            _ => None,
        };
        let kind = self.label_kind();
        for (i, a) in self.annotations.iter().enumerate() {
            let bad = |reason: &str| ModelError::InvalidAnnotation {
                index: i,
                reason: reason.to_string(),
            };
            if a.end_ms < a.start_ms {
                return Err(bad("end before start"));
            }
            match span {
                Some((lo, hi)) if a.start_ms >= lo && a.end_ms <= hi => {}
                _ => return Err(bad("outside the sample time range")),
            }
            if Some(a.label.kind()) != kind {
                return Err(bad("mixes activity and gesture labels"));
            }
            if i > 0 && a.start_ms <= self.annotations[i - 1].end_ms {
                return Err(bad("overlaps the previous annotation"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activity_encoding_follows_declaration_order() {
        assert_eq!(Label::from(ActivityLabel::Drive).encode(), 0);
        assert_eq!(Label::from(ActivityLabel::Transition).encode(), 6);
        let walk = Label::from(ActivityLabel::Walk);
        assert_eq!(Label::decode(LabelKind::Activity, walk.encode()).unwrap(), walk);
    }

    #[test]
    fn every_label_round_trips() {
        for kind in [LabelKind::Activity, LabelKind::Gesture] {
            for i in 0..kind.class_count() {
                let label = Label::decode(kind, i).unwrap();
                assert_eq!(label.encode(), i);
                assert_eq!(label.kind(), kind);
                assert_eq!(label.name().parse::<Label>().unwrap(), label);
            }
            assert!(Label::decode(kind, kind.class_count()).is_err());
        }
        assert_eq!(LabelKind::Activity.class_count(), 7);
        assert_eq!(LabelKind::Gesture.class_count(), 4);
    }

    #[test]
    fn default_profile_matches_reference_part() {
        let p = DeviceProfile::default();
        assert_eq!(p.cpu_mhz, 47);
        assert_eq!(p.sram_bytes, 20480);
        assert_eq!(p.flash_bytes, 131072);
        assert_eq!(p.p_active_har_mw, 12.5);
        assert_eq!(p.p_active_gesture_mw, 10.0);
        p.validate().unwrap();
    }

    #[test]
    fn profile_rejects_nonpositive_power() {
        let p = DeviceProfile {
            p_sleep_mw: 0.0,
            ..DeviceProfile::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn channel_set_iterates_in_canonical_order() {
        let set = ChannelSet::from_channels([Channel::Stretch, Channel::Ax]);
        assert_eq!(set.iter().collect::<Vec<_>>(), vec![Channel::Ax, Channel::Stretch]);
        assert_eq!(set.position(Channel::Stretch), Some(1));
        assert!(ChannelSet::ACCEL.is_subset(ChannelSet::MOTION));
        assert!(!ChannelSet::ALL.is_subset(ChannelSet::MOTION));
        assert_eq!(set.to_string(), "ax+stretch");
    }

    fn sample(t_ms: i64) -> SensorSample {
        SensorSample {
            t_ms,
            accel: [0.0, 0.0, 1.0],
            gyro: [0.0; 3],
            stretch: None,
        }
    }

    #[test]
    fn recording_validation_catches_overlap_and_order() {
        let mut rec = LabeledRecording {
            samples: (0..10).map(|i| sample(i * 10)).collect(),
            annotations: vec![
                Annotation { start_ms: 0, end_ms: 40, label: ActivityLabel::Walk.into() },
                Annotation { start_ms: 50, end_ms: 90, label: ActivityLabel::Sit.into() },
            ],
            ..Default::default()
        };
        rec.validate().unwrap();
        assert_eq!(rec.label_at(45), None);
        assert_eq!(rec.label_at(50), Some(ActivityLabel::Sit.into()));

        rec.annotations[1].start_ms = 40;
        assert!(matches!(rec.validate(), Err(ModelError::InvalidAnnotation { index: 1, .. })));

        rec.annotations.pop();
        rec.samples[3].t_ms = 5;
        assert!(matches!(rec.validate(), Err(ModelError::InvalidSample { index: 3, .. })));
    }

    #[test]
    fn sample_range_limits_enforced() {
        let mut rec = LabeledRecording {
            samples: vec![sample(0)],
            ..Default::default()
        };
        rec.samples[0].gyro[1] = 2500.0;
        assert!(rec.validate().is_err());
        rec.samples[0].gyro[1] = 0.0;
        rec.samples[0].accel[0] = -16.5;
        assert!(rec.validate().is_err());
    }
}
