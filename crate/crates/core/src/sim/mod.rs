//! Deterministic discrete-event simulation of wearable nodes talking to a
//! host over lossy links, plus trace replay and metrics.

mod engine;
mod metrics;
mod replay;
mod scenario;
mod trace;

use thiserror::Error;

pub use engine::{run_scenario, SimOutput, DAY_MS};
pub use metrics::{metrics_from_trace, DayBattery, DeviceMetrics, Metrics};
pub use replay::{replay, CheckResult, ReplayCheck, ReplayReport};
pub use scenario::{canary_sample, train_default_model, DeviceSetup, Playback, Scenario, CANARY_EVERY};
pub use trace::{parse_trace, TraceHeader, TraceRecord, TraceWriter, TRACE_MAGIC, TRACE_VERSION};

use crate::classifier::ClassifierError;
use crate::config::ConfigError;
use crate::datagen::DatagenError;
use crate::netproto::NetError;
use crate::pipeline::PipelineError;
use crate::types::ModelError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario setup: {0}")]
    Setup(String),
    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
    #[error("trace version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for a named entity, so adding one entity never shifts
/// another's random stream.
pub fn sub_seed(seed: u64, entity: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in entity.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_differ() {
        assert_eq!(sub_seed(1, "link:up:1"), sub_seed(1, "link:up:1"));
        assert_ne!(sub_seed(1, "link:up:1"), sub_seed(1, "link:up:2"));
        assert_ne!(sub_seed(1, "link:up:1"), sub_seed(2, "link:up:1"));
    }
}
