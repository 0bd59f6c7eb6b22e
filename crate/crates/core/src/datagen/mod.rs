//! Dataset files, the synthetic signal generator, and raw-storage arithmetic.

mod io;
mod synthetic;

use thiserror::Error;

use crate::types::ModelError;

pub use io::{read_dataset, write_dataset, DATASET_HEADER};
pub use synthetic::{generate_synthetic, ClassSignal, ScheduleEntry, SyntheticActivityModel};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("{path}: header must be `{expected}`")]
    Header { path: String, expected: &'static str },
    #[error("{path}:{line}: {reason}")]
    Row {
        path: String,
        line: u64,
        reason: String,
    },
    #[error("invalid recording: {0}")]
    InvalidRecording(#[from] ModelError),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("synthetic model: {0}")]
    InvalidModel(String),
    #[error("storage budget arguments must all be > 0")]
    NonPositiveArgument,
    #[error("storage budget overflows u64")]
    Overflow,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Raw bytes produced by streaming `channels` scalars of `bytes_per_scalar`
/// bytes at `rate_hz` for `duration_s` seconds.
pub fn storage_budget(
    rate_hz: u64,
    channels: u64,
    bytes_per_scalar: u64,
    duration_s: u64,
) -> Result<u64, DatagenError> {
    if [rate_hz, channels, bytes_per_scalar, duration_s].contains(&0) {
        return Err(DatagenError::NonPositiveArgument);
    }
    rate_hz
        .checked_mul(channels)
        .and_then(|v| v.checked_mul(bytes_per_scalar))
        .and_then(|v| v.checked_mul(duration_s))
        .ok_or(DatagenError::Overflow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_hour_of_accelerometer_data() {
        // 250 Hz * 3 axes * int16 * 3600 s
        assert_eq!(storage_budget(250, 3, 2, 3600).unwrap(), 5_400_000);
        assert_eq!(storage_budget(100, 3, 2, 3600).unwrap(), 2_160_000);
        assert_eq!(storage_budget(1, 1, 1, 1).unwrap(), 1);
    }

    #[test]
    fn zero_and_overflow_rejected() {
        assert!(matches!(storage_budget(0, 3, 2, 3600), Err(DatagenError::NonPositiveArgument)));
        assert!(matches!(storage_budget(u64::MAX, 3, 2, 1), Err(DatagenError::Overflow)));
    }

    proptest! {
        #[test]
        fn storage_budget_is_monotone(r in 1u64..5000, c in 1u64..16, b in 1u64..8, d in 1u64..100_000, which in 0usize..4) {
            let mut args = [r, c, b, d];
            let base = storage_budget(args[0], args[1], args[2], args[3]).unwrap();
            args[which] += 1;
            let bumped = storage_budget(args[0], args[1], args[2], args[3]).unwrap();
            prop_assert!(bumped >= base);
        }
    }
}
