//! Shared fixtures for the criterion benches.

use openhealth::classifier::{quantize, MlpModel};
use openhealth::config::ConfigDocument;
use openhealth::datagen::{generate_synthetic, SyntheticActivityModel};
use openhealth::LabeledRecording;

/// One cycle of the synthetic HAR schedule at 100 Hz.
pub fn har_recording() -> LabeledRecording {
    let model = SyntheticActivityModel::har_default(3);
    generate_synthetic(&model, &SyntheticActivityModel::har_schedule(1), 100).expect("valid schedule")
}

/// Randomly initialized default-shape HAR model and its int8 round trip.
pub fn har_models() -> (MlpModel, MlpModel) {
    let sizes = ConfigDocument::default().layer_sizes(openhealth::App::Har);
    let float = MlpModel::init(sizes, 5);
    let dequant = quantize(&float).dequantize();
    (float, dequant)
}

/// Default scenario shortened to `minutes`.
pub fn short_scenario(minutes: i64) -> ConfigDocument {
    let mut cfg = ConfigDocument::default();
    cfg.scenario.duration_ms = minutes * 60_000;
    cfg
}
