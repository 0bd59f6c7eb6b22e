//! Per-tensor affine int8 quantization.

use super::MlpModel;
use crate::pipeline::FeatureStats;
use crate::types::LabelKind;

/// Bytes of scale (f32) and zero point (i32) stored per tensor.
pub const TENSOR_OVERHEAD_BYTES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub scale: f32,
    pub zero_point: i32,
    pub data: Vec<i8>,
}

impl QuantTensor {
    /// Maps `[min(lo, 0), max(hi, 0)]` onto `[-128, 127]`; zero is exactly
    /// representable. An all-zero tensor gets scale 1.
    pub fn quantize(values: &[f64]) -> QuantTensor {
        let lo = values.iter().copied().fold(0.0f64, f64::min);
        let hi = values.iter().copied().fold(0.0f64, f64::max);
        let (scale, zero_point) = if hi > lo {
            let scale = ((hi - lo) / 255.0) as f32;
            let zp = (-128.0 - lo / f64::from(scale)).round().clamp(-128.0, 127.0) as i32;
            (scale, zp)
        } else {
            (1.0, 0)
        };
        let s = f64::from(scale);
        let data = values
            .iter()
            .map(|v| ((v / s).round() + f64::from(zero_point)).clamp(-128.0, 127.0) as i8)
            .collect();
        QuantTensor { scale, zero_point, data }
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let s = f64::from(self.scale);
        self.data
            .iter()
            .map(|&q| (i32::from(q) - self.zero_point) as f64 * s)
            .collect()
    }
}

/// int8 parameters for w1, b1, w2, b2 (in that order). Normalization
/// statistics travel with the blob as f32 constants.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub sizes: [usize; 3],
    pub kind: Option<LabelKind>,
    pub tensors: [QuantTensor; 4],
    pub norm: Option<FeatureStats>,
}

impl QuantizedModel {
    /// Flash taken by the parameters: one byte each plus per-tensor scale
    /// and zero point. Normalization constants are counted with the other
    /// code constants in the firmware memory ledger.
    pub fn flash_bytes(&self) -> usize {
        self.tensors
            .iter()
            .map(|t| t.data.len() + TENSOR_OVERHEAD_BYTES)
            .sum()
    }

    pub fn dequantize(&self) -> MlpModel {
        let [w1, b1, w2, b2] = &self.tensors;
        MlpModel {
            sizes: self.sizes,
            w1: w1.dequantize(),
            b1: b1.dequantize(),
            w2: w2.dequantize(),
            b2: b2.dequantize(),
            norm: self.norm.clone(),
            kind: self.kind,
        }
    }
}

/// Flash bytes of an int8 model with layer sizes `[d, h, c]`.
pub fn quantized_flash_bytes(sizes: [usize; 3]) -> usize {
    let [d, h, c] = sizes;
    h * d + h + c * h + c + 4 * TENSOR_OVERHEAD_BYTES
}

pub fn quantize(model: &MlpModel) -> QuantizedModel {
    QuantizedModel {
        sizes: model.sizes,
        kind: model.kind,
        tensors: [
            QuantTensor::quantize(&model.w1),
            QuantTensor::quantize(&model.b1),
            QuantTensor::quantize(&model.w2),
            QuantTensor::quantize(&model.b2),
        ],
        norm: model.norm.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_har_model_fits_in_two_kib() {
        // 84*16 + 16 + 16*7 + 7 = 1479 parameters, plus 4 * 8 bytes of scales.
        let q = quantize(&MlpModel::init([84, 16, 7], 0));
        assert_eq!(q.tensors.iter().map(|t| t.data.len()).sum::<usize>(), 1479);
        assert_eq!(q.flash_bytes(), 1479 + 32);
        assert_eq!(q.flash_bytes(), quantized_flash_bytes([84, 16, 7]));
        assert!(q.flash_bytes() < 2048);
    }

    #[test]
    fn zero_model_round_trips_to_zero() {
        let z = MlpModel::zeros([5, 4, 3]);
        let q = quantize(&z);
        assert_eq!(q.dequantize(), z);
    }

    proptest! {
        #[test]
        fn dequantization_error_within_one_step(values in prop::collection::vec(-5.0f64..5.0, 1..200)) {
            let t = QuantTensor::quantize(&values);
            let back = t.dequantize();
            let step = f64::from(t.scale);
            for (a, b) in values.iter().zip(&back) {
                // Interior values are within half a step; the range ends may clip by one.
                prop_assert!((a - b).abs() <= step * (1.0 + 1e-6), "{} vs {}", a, b);
            }
        }
    }
}
