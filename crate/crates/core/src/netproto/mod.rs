//! Device-host protocol: AES-GCM frames with replay protection, payloads,
//! a lossy link model, clock sync, the host gateway and alert delivery.

mod alert;
mod channel;
mod frame;
mod host;
mod payload;
mod sync;

use thiserror::Error;

pub use alert::{send_alert, AlertTracker, DeliveryRecord, RetryPolicy, TimerOutcome};
pub use channel::{ChannelModel, Link, Transmission};
pub use frame::{
    decode_frame, encode_frame, open_frame, peek_header, DecodedFrame, FrameHeader, FrameType, Key,
    RejectCode, ReplayWindow, HEADER_LEN, HOST_SEQ_BASE, MAX_PAYLOAD, PROTOCOL_VERSION, TAG_LEN,
};
pub use host::{DeviceEndpoint, HostEvent, HostGateway, HostReply, HostStep, Notification, Observation};
pub use payload::{
    ack_payload, parse_ack, raw_block, raw_sample_bytes, DataPayload, SyncPayload, CONFIDENCE_SCALE,
    DATA_PAYLOAD_LEN,
};
pub use sync::{estimate_offset, round_trip_ms, SyncConfig, SyncOutcome, SyncState};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("payload of {0} bytes exceeds the 1024-byte limit")]
    PayloadTooLong(usize),
    #[error("AEAD failure")]
    Crypto,
    #[error("payload: {0}")]
    Payload(String),
    #[error("device {0} ran out of sequence numbers")]
    SequenceExhausted(u16),
    #[error("key must be 32 hex digits")]
    BadKey,
}

pub fn parse_key_hex(s: &str) -> Result<Key, NetError> {
    let bytes = hex::decode(s.trim()).map_err(|_| NetError::BadKey)?;
    bytes.try_into().map_err(|_| NetError::BadKey)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_hex() {
        assert_eq!(parse_key_hex("000102030405060708090a0b0c0d0e0f").unwrap()[15], 15);
        assert!(parse_key_hex("0001").is_err());
        assert!(parse_key_hex("zz0102030405060708090a0b0c0d0e0f").is_err());
    }
}
