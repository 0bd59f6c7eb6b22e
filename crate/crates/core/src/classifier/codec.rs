//! Binary model formats. All integers and floats are little-endian.
//!
//! `OHM1` (float model):
//!
//! ```text
//! "OHM1" | kind u8 | D u32 | H u32 | C u32
//!        | w1 f64[H*D] | b1 f64[H] | w2 f64[C*H] | b2 f64[C]
//!        | has_norm u8 | (mean f64[D] | std f64[D])?
//! ```
//!
//! `OHQ1` (int8 model) has the same header, then for each of w1, b1, w2, b2:
//! `scale f32 | zero_point i32 | q i8[len]`, then `has_norm u8 |
//! (mean f32[D] | std f32[D])?`.
//!
//! `kind` is 0 for unlabeled models, 1 for activity, 2 for gesture.

use super::quant::{QuantTensor, QuantizedModel};
use super::{ClassifierError, MlpModel};
use crate::pipeline::FeatureStats;
use crate::types::LabelKind;

pub const MODEL_MAGIC: &[u8; 4] = b"OHM1";
pub const QUANT_MAGIC: &[u8; 4] = b"OHQ1";

fn kind_byte(kind: Option<LabelKind>) -> u8 {
    match kind {
        None => 0,
        Some(LabelKind::Activity) => 1,
        Some(LabelKind::Gesture) => 2,
    }
}

fn byte_kind(b: u8) -> Result<Option<LabelKind>, ClassifierError> {
    match b {
        0 => Ok(None),
        1 => Ok(Some(LabelKind::Activity)),
        2 => Ok(Some(LabelKind::Gesture)),
        other => Err(ClassifierError::Codec(format!("unknown label kind {other}"))),
    }
}

fn put_header(out: &mut Vec<u8>, magic: &[u8; 4], kind: Option<LabelKind>, sizes: [usize; 3]) {
    out.extend_from_slice(magic);
    out.push(kind_byte(kind));
    for s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ClassifierError::Codec("truncated model blob".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ClassifierError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self) -> Result<i32, ClassifierError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32, ClassifierError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ClassifierError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(too_large)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, ClassifierError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(too_large)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(Option<LabelKind>, [usize; 3]), ClassifierError> {
        if self.take(4)? != magic {
            return Err(ClassifierError::Codec(format!(
                "bad magic, expected {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let kind = byte_kind(self.u8()?)?;
        let sizes = [self.u32()? as usize, self.u32()? as usize, self.u32()? as usize];
        if sizes.iter().any(|&s| s == 0 || s > 1 << 16) {
            return Err(ClassifierError::Codec(format!("implausible layer sizes {sizes:?}")));
        }
        Ok((kind, sizes))
    }

    fn finish(&self) -> Result<(), ClassifierError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(ClassifierError::Codec("trailing bytes after model".into()))
        }
    }
}

fn too_large() -> ClassifierError {
    ClassifierError::Codec("length overflow".into())
}

impl MlpModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.param_count());
        put_header(&mut out, MODEL_MAGIC, self.kind, self.sizes);
        for v in self.params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.norm {
            Some(stats) => {
                out.push(1);
                for v in stats.mean.iter().chain(&stats.std) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MlpModel, ClassifierError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let (kind, sizes) = r.header(MODEL_MAGIC)?;
        let [d, h, c] = sizes;
        let w1 = r.f64s(h * d)?;
        let b1 = r.f64s(h)?;
        let w2 = r.f64s(c * h)?;
        let b2 = r.f64s(c)?;
        let norm = match r.u8()? {
            0 => None,
            1 => Some(FeatureStats {
                mean: r.f64s(d)?,
                std: r.f64s(d)?,
            }),
            other => return Err(ClassifierError::Codec(format!("bad norm flag {other}"))),
        };
        r.finish()?;
        let model = MlpModel { sizes, w1, b1, w2, b2, norm, kind };
        model.validate()?;
        Ok(model)
    }
}

impl QuantizedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_header(&mut out, QUANT_MAGIC, self.kind, self.sizes);
        for t in &self.tensors {
            out.extend_from_slice(&t.scale.to_le_bytes());
            out.extend_from_slice(&t.zero_point.to_le_bytes());
            out.extend(t.data.iter().map(|q| *q as u8));
        }
        match &self.norm {
            Some(stats) => {
                out.push(1);
                for v in stats.mean.iter().chain(&stats.std) {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<QuantizedModel, ClassifierError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let (kind, sizes) = r.header(QUANT_MAGIC)?;
        let [d, h, c] = sizes;
        let mut tensors = Vec::with_capacity(4);
        for len in [h * d, h, c * h, c] {
            let scale = r.f32()?;
            let zero_point = r.i32()?;
            let data = r.take(len)?.iter().map(|b| *b as i8).collect();
            tensors.push(QuantTensor { scale, zero_point, data });
        }
        let norm = match r.u8()? {
            0 => None,
            1 => Some(FeatureStats {
                mean: r.f32s(d)?,
                std: r.f32s(d)?,
            }),
            other => return Err(ClassifierError::Codec(format!("bad norm flag {other}"))),
        };
        r.finish()?;
        let tensors: [QuantTensor; 4] = tensors.try_into().expect("four tensors");
        Ok(QuantizedModel { sizes, kind, tensors, norm })
    }
}
