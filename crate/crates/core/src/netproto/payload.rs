//! Plaintext payload layouts (big-endian, like the frame header).

use super::NetError;
use crate::types::{App, Label, SensorSample, ACCEL_RANGE_G, GYRO_RANGE_DPS};

pub const DATA_PAYLOAD_LEN: usize = 12;
pub const CONFIDENCE_SCALE: f64 = 10_000.0;

/// Classifier output for one window: the only thing a node sends when it
/// processes locally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPayload {
    pub timestamp_ms: u64,
    pub label_index: u8,
    /// Fixed point, 10000 = 1.0.
    pub confidence: u16,
    pub app_id: u8,
}

impl DataPayload {
    pub fn new(timestamp_ms: u64, app: App, label: Label, confidence: f64) -> Result<Self, NetError> {
        if label.kind() != app.label_kind() {
            return Err(NetError::Payload(format!("label {label} does not belong to app {}", app.id())));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(NetError::Payload(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(DataPayload {
            timestamp_ms,
            label_index: label.encode() as u8,
            confidence: (confidence * CONFIDENCE_SCALE).round() as u16,
            app_id: app.id(),
        })
    }

    pub fn to_bytes(self) -> [u8; DATA_PAYLOAD_LEN] {
        let mut b = [0u8; DATA_PAYLOAD_LEN];
        b[0..8].copy_from_slice(&self.timestamp_ms.to_be_bytes());
        b[8] = self.label_index;
        b[9..11].copy_from_slice(&self.confidence.to_be_bytes());
        b[11] = self.app_id;
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, NetError> {
        if b.len() != DATA_PAYLOAD_LEN {
            return Err(NetError::Payload(format!("data payload is {} bytes", b.len())));
        }
        let p = DataPayload {
            timestamp_ms: u64::from_be_bytes(b[0..8].try_into().expect("8 bytes")),
            label_index: b[8],
            confidence: u16::from_be_bytes([b[9], b[10]]),
            app_id: b[11],
        };
        p.label()?;
        if p.confidence > CONFIDENCE_SCALE as u16 {
            return Err(NetError::Payload(format!("confidence {} > 10000", p.confidence)));
        }
        Ok(p)
    }

    pub fn app(&self) -> Result<App, NetError> {
        App::from_id(self.app_id).ok_or_else(|| NetError::Payload(format!("unknown app id {}", self.app_id)))
    }

    pub fn label(&self) -> Result<Label, NetError> {
        let app = self.app()?;
        Label::decode(app.label_kind(), self.label_index as usize).map_err(|e| NetError::Payload(e.to_string()))
    }

    pub fn confidence_f64(&self) -> f64 {
        f64::from(self.confidence) / CONFIDENCE_SCALE
    }
}

/// TIME_SYNC payloads. Tag byte, then big-endian i64 milliseconds (the
/// offset report carries f64 bits).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyncPayload {
    Request { t1: i64 },
    Response { t1: i64, t2: i64, t3: i64 },
    /// Device's estimate of host clock minus device clock.
    Report { offset_ms: f64 },
}

impl SyncPayload {
    pub fn to_bytes(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25);
        match self {
            SyncPayload::Request { t1 } => {
                out.push(0);
                out.extend_from_slice(&t1.to_be_bytes());
            }
            SyncPayload::Response { t1, t2, t3 } => {
                out.push(1);
                for t in [t1, t2, t3] {
                    out.extend_from_slice(&t.to_be_bytes());
                }
            }
            SyncPayload::Report { offset_ms } => {
                out.push(2);
                out.extend_from_slice(&offset_ms.to_bits().to_be_bytes());
            }
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, NetError> {
        let word = |i: usize| i64::from_be_bytes(b[1 + 8 * i..9 + 8 * i].try_into().expect("8 bytes"));
        match (b.first(), b.len()) {
            (Some(0), 9) => Ok(SyncPayload::Request { t1: word(0) }),
            (Some(1), 25) => Ok(SyncPayload::Response { t1: word(0), t2: word(1), t3: word(2) }),
            (Some(2), 9) => Ok(SyncPayload::Report { offset_ms: f64::from_bits(word(0) as u64) }),
            _ => Err(NetError::Payload("malformed TIME_SYNC payload".into())),
        }
    }
}

pub fn ack_payload(seq: u32) -> [u8; 4] {
    seq.to_be_bytes()
}

pub fn parse_ack(b: &[u8]) -> Result<u32, NetError> {
    let arr: [u8; 4] = b
        .try_into()
        .map_err(|_| NetError::Payload("ACK payload must be 4 bytes".into()))?;
    Ok(u32::from_be_bytes(arr))
}

/// int16 full-scale encoding of one sample: accel over +-16 g, gyro over
/// +-2000 dps, stretch over [0, 1], little-endian as a sensor would emit.
pub fn raw_sample_bytes(s: &SensorSample) -> Vec<u8> {
    let q = |v: f64, range: f64| ((v / range).clamp(-1.0, 1.0) * 32767.0).round() as i16;
    let mut out = Vec::with_capacity(14);
    for a in s.accel {
        out.extend_from_slice(&q(a, ACCEL_RANGE_G).to_le_bytes());
    }
    for g in s.gyro {
        out.extend_from_slice(&q(g, GYRO_RANGE_DPS).to_le_bytes());
    }
    if let Some(st) = s.stretch {
        out.extend_from_slice(&q(st, 1.0).to_le_bytes());
    }
    out
}

/// Raw-mode DATA payload: the app id, then every sample's int16 encoding.
/// Always an odd length, so never confused with a [`DataPayload`].
pub fn raw_block(app: App, samples: &[SensorSample]) -> Vec<u8> {
    let mut out = vec![app.id()];
    for s in samples {
        out.extend(raw_sample_bytes(s));
    }
    out
}
