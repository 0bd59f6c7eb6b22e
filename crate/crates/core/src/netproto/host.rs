use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use super::frame::{open_frame, peek_header, FrameType, Key, RejectCode, ReplayWindow, HOST_SEQ_BASE};
use super::payload::{ack_payload, DataPayload, SyncPayload};
use super::{encode_frame, NetError};
use crate::types::{App, Label};

/// Node end of a session: numbers outgoing frames and screens incoming ones.
#[derive(Debug, Clone)]
pub struct DeviceEndpoint {
    pub device_id: u16,
    key: Key,
    next_seq: u32,
    rx: ReplayWindow,
}

impl DeviceEndpoint {
    pub fn new(device_id: u16, key: Key) -> Self {
        DeviceEndpoint { device_id, key, next_seq: 1, rx: ReplayWindow::default() }
    }

    /// Encrypts `payload` under the next sequence number.
    pub fn seal(&mut self, frame_type: FrameType, payload: &[u8]) -> Result<(u32, Vec<u8>), NetError> {
        let seq = self.next_seq;
        if seq >= HOST_SEQ_BASE {
            return Err(NetError::SequenceExhausted(self.device_id));
        }
        let bytes = encode_frame(frame_type, self.device_id, seq, payload, &self.key)?;
        self.next_seq += 1;
        Ok((seq, bytes))
    }

    pub fn open(&mut self, bytes: &[u8]) -> Result<super::DecodedFrame, RejectCode> {
        let frame = open_frame(bytes, &self.key)?;
        if frame.device_id != self.device_id || frame.seq < HOST_SEQ_BASE {
            return Err(RejectCode::UnknownDevice);
        }
        self.rx.accept(frame.seq)?;
        Ok(frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub device_id: u16,
    pub seq: u32,
    pub device_t_ms: u64,
    pub corrected_t_ms: i64,
    pub app: App,
    pub label: Label,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub device_id: u16,
    pub seq: u32,
    pub host_t_ms: i64,
    pub corrected_t_ms: i64,
    pub label: Label,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HostEvent {
    Hello { device_id: u16 },
    Stored(Observation),
    RawBlock { device_id: u16, seq: u32, len: usize },
    Alert(Notification),
    /// Retransmitted alert that was already delivered: ACKed again, no new
    /// notification.
    AlertReAcked { device_id: u16, seq: u32 },
    SyncResponded { device_id: u16, t1: i64 },
    OffsetUpdated { device_id: u16, offset_ms: f64 },
    Ignored { device_id: u16, frame_type: FrameType },
    Rejected { device_id: Option<u16>, seq: Option<u32>, code: RejectCode },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostReply {
    pub device_id: u16,
    pub frame_type: FrameType,
    pub seq: u32,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostStep {
    pub event: HostEvent,
    pub replies: Vec<HostReply>,
}

#[derive(Debug, Clone)]
struct Session {
    key: Key,
    rx: ReplayWindow,
    next_seq: u32,
    offset_ms: f64,
    delivered_alerts: BTreeSet<u32>,
}

/// Host side of every registered session.
#[derive(Debug, Clone, Default)]
pub struct HostGateway {
    sessions: BTreeMap<u16, Session>,
    observations: BTreeMap<u16, Vec<Observation>>,
    notifications: Vec<Notification>,
    rejections: Vec<(i64, Option<u16>, RejectCode)>,
}

impl HostGateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, device_id: u16, key: Key) {
        self.sessions.insert(
            device_id,
            Session {
                key,
                rx: ReplayWindow::default(),
                next_seq: HOST_SEQ_BASE,
                offset_ms: 0.0,
                delivered_alerts: BTreeSet::new(),
            },
        );
        self.observations.entry(device_id).or_default();
    }

    /// Host clock minus device clock as last reported by the device.
    pub fn offset_ms(&self, device_id: u16) -> Option<f64> {
        self.sessions.get(&device_id).map(|s| s.offset_ms)
    }

    pub fn set_offset_ms(&mut self, device_id: u16, offset_ms: f64) {
        if let Some(s) = self.sessions.get_mut(&device_id) {
            s.offset_ms = offset_ms;
        }
    }

    pub fn observations(&self, device_id: u16) -> &[Observation] {
        self.observations.get(&device_id).map_or(&[], Vec::as_slice)
    }

    pub fn notifications(&self) -> &[Notification] {
        &self.notifications
    }

    pub fn rejections(&self) -> &[(i64, Option<u16>, RejectCode)] {
        &self.rejections
    }

    fn reply(&mut self, device_id: u16, frame_type: FrameType, payload: &[u8]) -> HostReply {
        let s = self.sessions.get_mut(&device_id).expect("registered session");
        let seq = s.next_seq;
        s.next_seq += 1;
        let bytes = encode_frame(frame_type, device_id, seq, payload, &s.key).expect("short host payload");
        HostReply { device_id, frame_type, seq, bytes }
    }

    fn reject(&mut self, t: i64, device_id: Option<u16>, seq: Option<u32>, code: RejectCode) -> HostStep {
        self.rejections.push((t, device_id, code));
        HostStep { event: HostEvent::Rejected { device_id, seq, code }, replies: Vec::new() }
    }

    /// Handles one received frame at host time `host_t_ms`.
    pub fn receive(&mut self, bytes: &[u8], host_t_ms: i64) -> HostStep {
        let header = match peek_header(bytes) {
            Ok(h) => h,
            Err(code) => return self.reject(host_t_ms, None, None, code),
        };
        let id = header.device_id;
        let Some(session) = self.sessions.get_mut(&id) else {
            return self.reject(host_t_ms, Some(id), Some(header.seq), RejectCode::UnknownDevice);
        };
        let frame = match open_frame(bytes, &session.key) {
            Ok(f) => f,
            Err(code) => return self.reject(host_t_ms, Some(id), Some(header.seq), code),
        };
        if frame.seq >= HOST_SEQ_BASE {
            // Host-direction sequence space: a reflected host frame.
            return self.reject(host_t_ms, Some(id), Some(frame.seq), RejectCode::ReplayRejected);
        }
        if let Err(code) = session.rx.accept(frame.seq) {
            if frame.frame_type == FrameType::Alert && session.delivered_alerts.contains(&frame.seq) {
                let ack = self.reply(id, FrameType::Ack, &ack_payload(frame.seq));
                return HostStep {
                    event: HostEvent::AlertReAcked { device_id: id, seq: frame.seq },
                    replies: vec![ack],
                };
            }
            return self.reject(host_t_ms, Some(id), Some(frame.seq), code);
        }
        let offset = session.offset_ms;
        let corrected = |t: u64| (t as f64 + offset).round() as i64;

        match frame.frame_type {
            FrameType::Hello => HostStep { event: HostEvent::Hello { device_id: id }, replies: Vec::new() },
            FrameType::Data if frame.payload.len() == super::DATA_PAYLOAD_LEN => {
                let Ok(p) = DataPayload::from_bytes(&frame.payload) else {
                    return self.reject(host_t_ms, Some(id), Some(frame.seq), RejectCode::BadPayload);
                };
                let obs = Observation {
                    device_id: id,
                    seq: frame.seq,
                    device_t_ms: p.timestamp_ms,
                    corrected_t_ms: corrected(p.timestamp_ms),
                    app: p.app().expect("validated"),
                    label: p.label().expect("validated"),
                    confidence: p.confidence_f64(),
                };
                self.observations.entry(id).or_default().push(obs.clone());
                HostStep { event: HostEvent::Stored(obs), replies: Vec::new() }
            }
            FrameType::Data => HostStep {
                event: HostEvent::RawBlock { device_id: id, seq: frame.seq, len: frame.payload.len() },
                replies: Vec::new(),
            },
            FrameType::Alert => {
                let Ok(p) = DataPayload::from_bytes(&frame.payload) else {
                    return self.reject(host_t_ms, Some(id), Some(frame.seq), RejectCode::BadPayload);
                };
                session.delivered_alerts.insert(frame.seq);
                let n = Notification {
                    device_id: id,
                    seq: frame.seq,
                    host_t_ms,
                    corrected_t_ms: corrected(p.timestamp_ms),
                    label: p.label().expect("validated"),
                    confidence: p.confidence_f64(),
                };
                self.notifications.push(n.clone());
                let ack = self.reply(id, FrameType::Ack, &ack_payload(frame.seq));
                HostStep { event: HostEvent::Alert(n), replies: vec![ack] }
            }
            FrameType::TimeSync => match SyncPayload::from_bytes(&frame.payload) {
                Ok(SyncPayload::Request { t1 }) => {
                    let resp = SyncPayload::Response { t1, t2: host_t_ms, t3: host_t_ms };
                    let reply = self.reply(id, FrameType::TimeSync, &resp.to_bytes());
                    HostStep { event: HostEvent::SyncResponded { device_id: id, t1 }, replies: vec![reply] }
                }
                Ok(SyncPayload::Report { offset_ms }) if offset_ms.is_finite() => {
                    session.offset_ms = offset_ms;
                    HostStep { event: HostEvent::OffsetUpdated { device_id: id, offset_ms }, replies: Vec::new() }
                }
                _ => self.reject(host_t_ms, Some(id), Some(frame.seq), RejectCode::BadPayload),
            },
            other => HostStep {
                event: HostEvent::Ignored { device_id: id, frame_type: other },
                replies: Vec::new(),
            },
        }
    }

    /// Processes a batch of `(host_t_ms, frame)` arrivals in order.
    pub fn host_gateway_step(&mut self, frames: &[(i64, Vec<u8>)]) -> Vec<HostStep> {
        frames.iter().map(|(t, b)| self.receive(b, *t)).collect()
    }

    /// CSV `device_id,corrected_t_ms,app_id,label,confidence`, devices in
    /// id order, each device's rows ordered by corrected time.
    pub fn write_observation_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "device_id,corrected_t_ms,app_id,label,confidence")?;
        for obs in self.observations.values() {
            let mut rows: Vec<&Observation> = obs.iter().collect();
            rows.sort_by_key(|o| o.corrected_t_ms);
            for o in rows {
                writeln!(
                    out,
                    "{},{},{},{},{:.4}",
                    o.device_id,
                    o.corrected_t_ms,
                    o.app.id(),
                    o.label,
                    o.confidence
                )?;
            }
        }
        Ok(())
    }

    pub fn save_observation_log(&self, path: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_observation_log(&mut buf)?;
        std::fs::write(path, buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netproto::parse_ack;
    use crate::types::{ActivityLabel, GestureLabel};

    const K1: Key = [1; 16];
    const K2: Key = [2; 16];

    fn data(dev: &mut DeviceEndpoint, t: u64, label: ActivityLabel) -> Vec<u8> {
        let p = DataPayload::new(t, App::Har, label.into(), 0.9).unwrap();
        dev.seal(FrameType::Data, &p.to_bytes()).unwrap().1
    }

    #[test]
    fn interleaved_devices_keep_separate_logs() {
        let mut host = HostGateway::new();
        host.register(1, K1);
        host.register(2, K2);
        let mut a = DeviceEndpoint::new(1, K1);
        let mut b = DeviceEndpoint::new(2, K2);
        let frames = vec![
            (10, data(&mut a, 100, ActivityLabel::Walk)),
            (11, data(&mut b, 105, ActivityLabel::Sit)),
            (12, data(&mut a, 200, ActivityLabel::Walk)),
            (13, data(&mut b, 205, ActivityLabel::Stand)),
        ];
        host.host_gateway_step(&frames);
        let ta: Vec<u64> = host.observations(1).iter().map(|o| o.device_t_ms).collect();
        let tb: Vec<u64> = host.observations(2).iter().map(|o| o.device_t_ms).collect();
        assert_eq!(ta, vec![100, 200]);
        assert_eq!(tb, vec![105, 205]);
    }

    #[test]
    fn replayed_data_stored_once() {
        let mut host = HostGateway::new();
        host.register(1, K1);
        let mut a = DeviceEndpoint::new(1, K1);
        let f = data(&mut a, 100, ActivityLabel::Walk);
        host.receive(&f, 10);
        let step = host.receive(&f, 20);
        assert!(matches!(step.event, HostEvent::Rejected { code: RejectCode::ReplayRejected, .. }));
        assert_eq!(host.observations(1).len(), 1);
    }

    #[test]
    fn unknown_device_dropped_with_reason() {
        let mut host = HostGateway::new();
        host.register(1, K1);
        let mut stranger = DeviceEndpoint::new(9, K1);
        let step = host.receive(&data(&mut stranger, 1, ActivityLabel::Sit), 5);
        assert!(matches!(step.event, HostEvent::Rejected { device_id: Some(9), code: RejectCode::UnknownDevice, .. }));
        assert_eq!(host.rejections().len(), 1);
    }

    #[test]
    fn offset_correction_applied() {
        let mut plain = HostGateway::new();
        let mut shifted = HostGateway::new();
        for h in [&mut plain, &mut shifted] {
            h.register(1, K1);
        }
        // Device runs 500 ms ahead, so host minus device is -500.
        shifted.set_offset_ms(1, -500.0);
        let mut a = DeviceEndpoint::new(1, K1);
        let mut b = DeviceEndpoint::new(1, K1);
        for t in [1000, 2000, 3000] {
            plain.receive(&data(&mut a, t, ActivityLabel::Walk), 0);
            shifted.receive(&data(&mut b, t, ActivityLabel::Walk), 0);
        }
        for (p, s) in plain.observations(1).iter().zip(shifted.observations(1)) {
            assert_eq!(s.corrected_t_ms, p.corrected_t_ms - 500);
        }
    }

    #[test]
    fn alert_is_notified_once_and_reacked() {
        let mut host = HostGateway::new();
        host.register(1, K1);
        let mut dev = DeviceEndpoint::new(1, K1);
        let p = DataPayload::new(7, App::Har, ActivityLabel::Jump.into(), 1.0).unwrap();
        let (seq, f) = dev.seal(FrameType::Alert, &p.to_bytes()).unwrap();
        let first = host.receive(&f, 10);
        assert!(matches!(first.event, HostEvent::Alert(_)));
        let ack = dev.open(&first.replies[0].bytes).unwrap();
        assert_eq!(ack.frame_type, FrameType::Ack);
        assert_eq!(parse_ack(&ack.payload).unwrap(), seq);
        let again = host.receive(&f, 30);
        assert_eq!(again.event, HostEvent::AlertReAcked { device_id: 1, seq });
        assert_eq!(again.replies.len(), 1);
        assert_eq!(host.notifications().len(), 1);
    }

    #[test]
    fn sync_request_gets_response_and_report_sets_offset() {
        let mut host = HostGateway::new();
        host.register(1, K1);
        let mut dev = DeviceEndpoint::new(1, K1);
        let (_, req) = dev.seal(FrameType::TimeSync, &SyncPayload::Request { t1: 42 }.to_bytes()).unwrap();
        let step = host.receive(&req, 600);
        let resp = dev.open(&step.replies[0].bytes).unwrap();
        assert_eq!(
            SyncPayload::from_bytes(&resp.payload).unwrap(),
            SyncPayload::Response { t1: 42, t2: 600, t3: 600 }
        );
        let (_, rep) = dev.seal(FrameType::TimeSync, &SyncPayload::Report { offset_ms: 12.5 }.to_bytes()).unwrap();
        host.receive(&rep, 700);
        assert_eq!(host.offset_ms(1), Some(12.5));
    }

    #[test]
    fn device_rejects_own_direction_and_replays() {
        let mut host = HostGateway::new();
        host.register(1, K1);
        let mut dev = DeviceEndpoint::new(1, K1);
        let (_, own) = dev.seal(FrameType::Hello, &[1]).unwrap();
        assert_eq!(dev.open(&own), Err(RejectCode::UnknownDevice));
        let p = DataPayload::new(7, App::Gesture, GestureLabel::Up.into(), 1.0).unwrap();
        let (_, f) = dev.seal(FrameType::Alert, &p.to_bytes()).unwrap();
        let ack = host.receive(&f, 1).replies.remove(0);
        assert!(dev.open(&ack.bytes).is_ok());
        assert_eq!(dev.open(&ack.bytes), Err(RejectCode::ReplayRejected));
    }

    #[test]
    fn observation_log_format() {
        let mut host = HostGateway::new();
        host.register(3, K1);
        let mut a = DeviceEndpoint::new(3, K1);
        host.receive(&data(&mut a, 1500, ActivityLabel::LieDown), 0);
        let mut buf = Vec::new();
        host.write_observation_log(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "device_id,corrected_t_ms,app_id,label,confidence\n3,1500,1,LieDown,0.9000\n"
        );
    }
}
