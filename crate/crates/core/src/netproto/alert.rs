use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::channel::{Link, Transmission};
use super::frame::FrameType;
use super::host::{DeviceEndpoint, HostGateway};
use super::payload::{parse_ack, DataPayload};
use super::NetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub interval_ms: i64,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { interval_ms: 200, max_attempts: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryRecord {
    pub seq: u32,
    pub delivered: bool,
    pub attempts: u32,
    /// From the first transmission to the matching ACK.
    pub latency_ms: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimerOutcome {
    Retransmit(Vec<u8>),
    /// All attempts used without an ACK.
    Undelivered(DeliveryRecord),
    /// Already finished; stale timer.
    Idle,
}

/// Retransmits one sealed ALERT frame, byte for byte, until it is ACKed or
/// the attempts run out.
#[derive(Debug, Clone)]
pub struct AlertTracker {
    pub seq: u32,
    frame: Vec<u8>,
    attempts: u32,
    first_sent_ms: i64,
    policy: RetryPolicy,
    done: bool,
}

impl AlertTracker {
    /// Call right after the first transmission at `now_ms`.
    pub fn new(seq: u32, frame: Vec<u8>, now_ms: i64, policy: RetryPolicy) -> Self {
        AlertTracker { seq, frame, attempts: 1, first_sent_ms: now_ms, policy, done: false }
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn frame(&self) -> &[u8] {
        &self.frame
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn next_timer_ms(&self, sent_ms: i64) -> i64 {
        sent_ms + self.policy.interval_ms
    }

    pub fn on_ack(&mut self, acked_seq: u32, now_ms: i64) -> Option<DeliveryRecord> {
        if self.done || acked_seq != self.seq {
            return None;
        }
        self.done = true;
        Some(DeliveryRecord {
            seq: self.seq,
            delivered: true,
            attempts: self.attempts,
            latency_ms: Some(now_ms - self.first_sent_ms),
        })
    }

    pub fn on_timer(&mut self) -> TimerOutcome {
        if self.done {
            return TimerOutcome::Idle;
        }
        if self.attempts >= self.policy.max_attempts {
            self.done = true;
            return TimerOutcome::Undelivered(DeliveryRecord {
                seq: self.seq,
                delivered: false,
                attempts: self.attempts,
                latency_ms: None,
            });
        }
        self.attempts += 1;
        TimerOutcome::Retransmit(self.frame.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Send,
    HostRx(Vec<u8>),
    DeviceRx(Vec<u8>),
    Timer(u32),
}

/// Delivers one alert over an up/down link pair to `host` and reports the
/// outcome. Runs its own small event loop starting at `now_ms`.
pub fn send_alert(
    device: &mut DeviceEndpoint,
    host: &mut HostGateway,
    alert: DataPayload,
    up: &mut Link,
    down: &mut Link,
    policy: &RetryPolicy,
    now_ms: i64,
) -> Result<DeliveryRecord, NetError> {
    if policy.max_attempts == 0 || policy.interval_ms <= 0 {
        return Err(NetError::Payload("retry policy needs attempts > 0 and interval > 0".into()));
    }
    let (seq, frame) = device.seal(FrameType::Alert, &alert.to_bytes())?;
    let mut tracker = AlertTracker::new(seq, frame, now_ms, policy.clone());
    let mut queue = BinaryHeap::new();
    let mut order = 0u64;
    let mut push = |q: &mut BinaryHeap<_>, t: i64, ev: Ev| {
        q.push(Reverse((t, order, ev)));
        order += 1;
    };
    push(&mut queue, now_ms, Ev::Send);

    while let Some(Reverse((t, _, ev))) = queue.pop() {
        match ev {
            Ev::Send => {
                if let Transmission::Delivered { arrive_ms, bytes, .. } = up.transmit(tracker.frame(), t) {
                    push(&mut queue, arrive_ms, Ev::HostRx(bytes));
                }
                push(&mut queue, tracker.next_timer_ms(t), Ev::Timer(tracker.attempts()));
            }
            Ev::HostRx(bytes) => {
                for reply in host.receive(&bytes, t).replies {
                    if let Transmission::Delivered { arrive_ms, bytes, .. } = down.transmit(&reply.bytes, t) {
                        push(&mut queue, arrive_ms, Ev::DeviceRx(bytes));
                    }
                }
            }
            Ev::DeviceRx(bytes) => {
                if let Ok(f) = device.open(&bytes) {
                    if f.frame_type == FrameType::Ack {
                        if let Some(rec) = tracker.on_ack(parse_ack(&f.payload)?, t) {
                            return Ok(rec);
                        }
                    }
                }
            }
            Ev::Timer(attempt) if attempt == tracker.attempts() => match tracker.on_timer() {
                TimerOutcome::Retransmit(_) => push(&mut queue, t, Ev::Send),
                TimerOutcome::Undelivered(rec) => return Ok(rec),
                TimerOutcome::Idle => {}
            },
            Ev::Timer(_) => {}
        }
    }
    unreachable!("the retry timer always ends the loop")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netproto::ChannelModel;
    use crate::types::{ActivityLabel, App};

    const KEY: [u8; 16] = [5; 16];

    fn run(model: ChannelModel, seed: u64) -> DeliveryRecord {
        let mut dev = DeviceEndpoint::new(4, KEY);
        let mut host = HostGateway::new();
        host.register(4, KEY);
        let mut up = Link::new(model.clone(), seed);
        let mut down = Link::new(model, seed.wrapping_add(1));
        let alert = DataPayload::new(1000, App::Har, ActivityLabel::Jump.into(), 0.99).unwrap();
        send_alert(&mut dev, &mut host, alert, &mut up, &mut down, &RetryPolicy::default(), 0).unwrap()
    }

    #[test]
    fn lossless_delivers_first_time() {
        let r = run(ChannelModel::lossless(20), 1);
        assert!(r.delivered);
        assert_eq!(r.attempts, 1);
        assert_eq!(r.latency_ms, Some(40));
    }

    #[test]
    fn total_loss_exhausts_ten_attempts() {
        let r = run(ChannelModel { loss_probability: 1.0, ..Default::default() }, 1);
        assert!(!r.delivered);
        assert_eq!(r.attempts, 10);
        assert_eq!(r.latency_ms, None);
    }

    #[test]
    fn half_loss_is_reproducible() {
        let model = ChannelModel { loss_probability: 0.5, ..Default::default() };
        let runs: Vec<_> = (0..20).map(|s| run(model.clone(), s)).collect();
        let again: Vec<_> = (0..20).map(|s| run(model.clone(), s)).collect();
        assert_eq!(runs, again);
        assert!(runs.iter().any(|r| r.attempts > 1), "some seed needs a retry");
    }

    #[test]
    fn retransmissions_are_identical_frames() {
        let mut t = AlertTracker::new(3, vec![1, 2, 3], 0, RetryPolicy::default());
        for _ in 0..9 {
            assert_eq!(t.on_timer(), TimerOutcome::Retransmit(vec![1, 2, 3]));
        }
        assert!(matches!(t.on_timer(), TimerOutcome::Undelivered(DeliveryRecord { attempts: 10, .. })));
        assert_eq!(t.on_timer(), TimerOutcome::Idle);
    }
}
