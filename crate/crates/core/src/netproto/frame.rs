//! Wire frame, big-endian header:
//!
//! ```text
//! version u8 | type u8 | device_id u16 | seq u32 | payload_len u16 | ciphertext | tag[16]
//! ```
//!
//! Payloads are sealed with AES-128-GCM. The nonce is `device_id || seq ||
//! 0x000000000000` and the 10 header bytes are the associated data.

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes128Gcm, Nonce};
use serde::{Deserialize, Serialize};

use super::NetError;

pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const TAG_LEN: usize = 16;
pub const MAX_PAYLOAD: usize = 1024;
/// Sequence numbers from the host side of a session start here, so host
/// and device nonces never collide under the shared session key.
pub const HOST_SEQ_BASE: u32 = 0x8000_0000;

pub type Key = [u8; 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameType {
    Hello = 1,
    TimeSync = 2,
    Data = 3,
    Alert = 4,
    Ack = 5,
    Config = 6,
}

impl FrameType {
    pub const ALL: [FrameType; 6] = [
        FrameType::Hello,
        FrameType::TimeSync,
        FrameType::Data,
        FrameType::Alert,
        FrameType::Ack,
        FrameType::Config,
    ];

    pub fn from_byte(b: u8) -> Option<FrameType> {
        FrameType::ALL.into_iter().find(|t| *t as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameType::Hello => "HELLO",
            FrameType::TimeSync => "TIME_SYNC",
            FrameType::Data => "DATA",
            FrameType::Alert => "ALERT",
            FrameType::Ack => "ACK",
            FrameType::Config => "CONFIG",
        }
    }
}

impl fmt::Display for FrameType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Why a received frame was dropped. Each reason has its own code in logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectCode {
    Truncated,
    LengthMismatch,
    UnknownVersion,
    AuthFailure,
    UnknownFrameType,
    ReplayRejected,
    UnknownDevice,
    BadPayload,
}

impl RejectCode {
    pub fn name(self) -> &'static str {
        match self {
            RejectCode::Truncated => "Truncated",
            RejectCode::LengthMismatch => "LengthMismatch",
            RejectCode::UnknownVersion => "UnknownVersion",
            RejectCode::AuthFailure => "AuthFailure",
            RejectCode::UnknownFrameType => "UnknownFrameType",
            RejectCode::ReplayRejected => "ReplayRejected",
            RejectCode::UnknownDevice => "UnknownDevice",
            RejectCode::BadPayload => "BadPayload",
        }
    }
}

impl fmt::Display for RejectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub version: u8,
    pub frame_type: u8,
    pub device_id: u16,
    pub seq: u32,
    pub payload_len: u16,
}

impl FrameHeader {
    fn to_bytes(self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = self.version;
        h[1] = self.frame_type;
        h[2..4].copy_from_slice(&self.device_id.to_be_bytes());
        h[4..8].copy_from_slice(&self.seq.to_be_bytes());
        h[8..10].copy_from_slice(&self.payload_len.to_be_bytes());
        h
    }
}

/// Parses and sanity-checks the cleartext header without authenticating
/// it. Used to pick the session key.
pub fn peek_header(bytes: &[u8]) -> Result<FrameHeader, RejectCode> {
    if bytes.len() < HEADER_LEN + TAG_LEN {
        return Err(RejectCode::Truncated);
    }
    let header = FrameHeader {
        version: bytes[0],
        frame_type: bytes[1],
        device_id: u16::from_be_bytes([bytes[2], bytes[3]]),
        seq: u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes")),
        payload_len: u16::from_be_bytes([bytes[8], bytes[9]]),
    };
    if header.version != PROTOCOL_VERSION {
        return Err(RejectCode::UnknownVersion);
    }
    if bytes.len() != HEADER_LEN + header.payload_len as usize + TAG_LEN {
        return Err(RejectCode::LengthMismatch);
    }
    Ok(header)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedFrame {
    pub frame_type: FrameType,
    pub device_id: u16,
    pub seq: u32,
    pub payload: Vec<u8>,
}

fn nonce(device_id: u16, seq: u32) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[0..2].copy_from_slice(&device_id.to_be_bytes());
    n[2..6].copy_from_slice(&seq.to_be_bytes());
    n
}

pub fn encode_frame(
    frame_type: FrameType,
    device_id: u16,
    seq: u32,
    payload: &[u8],
    key: &Key,
) -> Result<Vec<u8>, NetError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(NetError::PayloadTooLong(payload.len()));
    }
    let header = FrameHeader {
        version: PROTOCOL_VERSION,
        frame_type: frame_type as u8,
        device_id,
        seq,
        payload_len: payload.len() as u16,
    }
    .to_bytes();
    let cipher = Aes128Gcm::new(key.into());
    let sealed = cipher
        .encrypt(Nonce::from_slice(&nonce(device_id, seq)), Payload { msg: payload, aad: &header })
        .map_err(|_| NetError::Crypto)?;
    let mut out = Vec::with_capacity(HEADER_LEN + sealed.len());
    out.extend_from_slice(&header);
    out.extend_from_slice(&sealed);
    Ok(out)
}

/// Authenticates and decrypts a frame without consulting any replay state.
pub fn open_frame(bytes: &[u8], key: &Key) -> Result<DecodedFrame, RejectCode> {
    let header = peek_header(bytes)?;
    let cipher = Aes128Gcm::new(key.into());
    let payload = cipher
        .decrypt(
            Nonce::from_slice(&nonce(header.device_id, header.seq)),
            Payload { msg: &bytes[HEADER_LEN..], aad: &bytes[..HEADER_LEN] },
        )
        .map_err(|_| RejectCode::AuthFailure)?;
    let frame_type = FrameType::from_byte(header.frame_type).ok_or(RejectCode::UnknownFrameType)?;
    Ok(DecodedFrame {
        frame_type,
        device_id: header.device_id,
        seq: header.seq,
        payload,
    })
}

/// Highest sequence number accepted in one direction of one session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayWindow {
    highest: Option<u32>,
}

impl ReplayWindow {
    pub fn highest(&self) -> Option<u32> {
        self.highest
    }

    pub fn is_fresh(&self, seq: u32) -> bool {
        self.highest.is_none_or(|h| seq > h)
    }

    /// Records `seq` if it is fresh.
    pub fn accept(&mut self, seq: u32) -> Result<(), RejectCode> {
        if self.is_fresh(seq) {
            self.highest = Some(seq);
            Ok(())
        } else {
            Err(RejectCode::ReplayRejected)
        }
    }
}

/// Authenticated decode plus the replay rule. Only authentic, fresh frames
/// advance the window.
pub fn decode_frame(bytes: &[u8], key: &Key, window: &mut ReplayWindow) -> Result<DecodedFrame, RejectCode> {
    let frame = open_frame(bytes, key)?;
    window.accept(frame.seq)?;
    Ok(frame)
}
