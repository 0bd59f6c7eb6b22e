//! Desk-scale model of a wearable health-monitoring node and its host.
//!
//! The crate covers the whole path from raw motion data to host-side
//! observations: dataset I/O and synthetic corpora ([`datagen`]), windowing
//! and features ([`pipeline`]), a small MLP classifier ([`classifier`]), the
//! energy-aware firmware model ([`firmware`]), the encrypted device-host
//! protocol ([`netproto`]) and a deterministic discrete-event simulator
//! ([`sim`]) that ties them together.

pub mod classifier;
pub mod config;
pub mod datagen;
pub mod firmware;
pub mod netproto;
pub mod pipeline;
pub mod sim;
pub mod types;

pub use types::{
    ActivityLabel, Annotation, App, Channel, ChannelSet, DeviceProfile, GestureLabel, Label,
    LabelKind, LabeledRecording, SensorSample,
};
