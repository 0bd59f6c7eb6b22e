use serde::Serialize;

use super::FirmwareError;
use crate::types::DeviceProfile;

pub const STACK_RESERVE_BYTES: usize = 4096;
/// Firmware code and constant data, including normalization statistics.
pub const CODE_RESERVE_BYTES: usize = 32 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryLedger {
    /// int16 ring buffer holding one window of every channel.
    pub sample_buffer_bytes: usize,
    /// f64 feature scratch.
    pub feature_bytes: usize,
    /// f64 hidden and output activations.
    pub activation_bytes: usize,
    pub stack_bytes: usize,
    pub sram_used_bytes: usize,
    pub model_bytes: usize,
    pub code_reserve_bytes: usize,
    pub flash_used_bytes: usize,
    pub sram_limit_bytes: usize,
    pub flash_limit_bytes: usize,
}

impl MemoryLedger {
    pub fn sram_headroom(&self) -> usize {
        self.sram_limit_bytes - self.sram_used_bytes
    }

    pub fn flash_headroom(&self) -> usize {
        self.flash_limit_bytes - self.flash_used_bytes
    }
}

/// Static memory use of a node running `window`-sample windows over
/// `channels` channels with an MLP of `sizes = [D, H, C]` whose int8 blob
/// takes `model_bytes` of flash.
pub fn memory_footprint(
    window: usize,
    channels: usize,
    sizes: [usize; 3],
    model_bytes: usize,
    profile: &DeviceProfile,
) -> Result<MemoryLedger, FirmwareError> {
    let [d, h, c] = sizes;
    let sample_buffer_bytes = window * channels * 2;
    let feature_bytes = 8 * d;
    let activation_bytes = 8 * (h + c);
    let sram_used_bytes = sample_buffer_bytes + feature_bytes + activation_bytes + STACK_RESERVE_BYTES;
    let flash_used_bytes = model_bytes + CODE_RESERVE_BYTES;
    if sram_used_bytes > profile.sram_bytes {
        return Err(FirmwareError::Budget {
            budget: "sram",
            used: sram_used_bytes,
            limit: profile.sram_bytes,
        });
    }
    if flash_used_bytes > profile.flash_bytes {
        return Err(FirmwareError::Budget {
            budget: "flash",
            used: flash_used_bytes,
            limit: profile.flash_bytes,
        });
    }
    Ok(MemoryLedger {
        sample_buffer_bytes,
        feature_bytes,
        activation_bytes,
        stack_bytes: STACK_RESERVE_BYTES,
        sram_used_bytes,
        model_bytes,
        code_reserve_bytes: CODE_RESERVE_BYTES,
        flash_used_bytes,
        sram_limit_bytes: profile.sram_bytes,
        flash_limit_bytes: profile.flash_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::quantized_flash_bytes;

    #[test]
    fn default_har_configuration() {
        let sizes = [84, 16, 7];
        let m = memory_footprint(128, 7, sizes, quantized_flash_bytes(sizes), &DeviceProfile::default()).unwrap();
        assert_eq!(m.sample_buffer_bytes, 1792);
        assert_eq!(m.feature_bytes, 672);
        assert_eq!(m.activation_bytes, 184);
        assert_eq!(m.sram_used_bytes, 6744);
        assert_eq!(m.flash_used_bytes, 1511 + 32768);
        assert_eq!(m.sram_headroom(), 20480 - 6744);
    }

    #[test]
    fn oversized_window_names_sram() {
        let err = memory_footprint(4096, 7, [84, 16, 7], 1511, &DeviceProfile::default()).unwrap_err();
        assert_eq!(err, FirmwareError::Budget { budget: "sram", used: 57344 + 672 + 184 + 4096, limit: 20480 });
        assert!(err.to_string().starts_with("sram budget exceeded"));
    }

    #[test]
    fn oversized_model_names_flash() {
        let err = memory_footprint(128, 7, [84, 16, 7], 100_000, &DeviceProfile::default()).unwrap_err();
        assert!(matches!(err, FirmwareError::Budget { budget: "flash", .. }));
    }

    #[test]
    fn zero_parameter_model_is_reserve_only() {
        let m = memory_footprint(128, 7, [0, 0, 0], 0, &DeviceProfile::default()).unwrap();
        assert_eq!(m.flash_used_bytes, CODE_RESERVE_BYTES);
    }
}
