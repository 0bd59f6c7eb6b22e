use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use super::metrics::{metrics_from_trace, Metrics};
use super::scenario::{DeviceSetup, Scenario};
use super::trace::TraceWriter;
use super::{sub_seed, SimError};
use crate::config::ConfigDocument;
use crate::firmware::{
    account_energy, motion_detector, plan_duty_cycle, step_state_machine, Action, DeviceEvent, Dwell, DutyPlan,
    EnergyState, HarvestProfile, PowerState, HOUR_MS,
};
use crate::netproto::{
    parse_ack, peek_header, raw_block, AlertTracker, DataPayload, DeviceEndpoint, FrameType, HostEvent,
    HostGateway, Link, SyncOutcome, SyncPayload, SyncState, TimerOutcome, Transmission, MAX_PAYLOAD,
};
use crate::pipeline::{stride, FeatureExtractor};
use crate::types::{App, Label, SensorSample};

pub const DAY_MS: i64 = 24 * HOUR_MS;

#[derive(Debug)]
enum Ev {
    Fsm { dev: usize, event: DeviceEvent, epoch: u64 },
    Tick,
    HostRx { bytes: Vec<u8> },
    DevRx { dev: usize, bytes: Vec<u8> },
    AlertTimer { dev: usize, seq: u32, attempt: u32 },
    SyncStart { dev: usize },
    SyncTimeout { dev: usize, round: u64 },
}

impl Ev {
    fn is_delivery(&self) -> bool {
        matches!(self, Ev::HostRx { .. } | Ev::DevRx { .. })
    }
}

#[derive(Debug)]
struct Queued {
    t: i64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.t, self.seq) == (other.t, other.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.t, self.seq).cmp(&(other.t, other.seq))
    }
}

struct Inference {
    label: Label,
    confidence: f64,
    window: Vec<SensorSample>,
}

struct Node<'a> {
    setup: &'a DeviceSetup,
    id: u16,
    app: App,
    extractor: FeatureExtractor,
    endpoint: DeviceEndpoint,
    state: PowerState,
    state_since: i64,
    /// Bumped to cancel pending state-machine timers.
    epoch: u64,
    energy: EnergyState,
    dwell: Dwell,
    last_account: i64,
    plan: DutyPlan,
    slot_active_ms: u64,
    last_motion: i64,
    pending: Option<Inference>,
    sync: SyncState,
    sync_round: u64,
    alerts: BTreeMap<u32, AlertTracker>,
    last_alert: BTreeMap<Label, i64>,
    up: Link,
    down: Link,
}

/// Output of one run. Metrics are re-derived from the trace text.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: String,
    /// `t_ms,event,device_id,state,battery_mwh`
    pub device_log: String,
    /// Host observation log CSV.
    pub observations: String,
    pub metrics: Metrics,
}

struct Sim<'a> {
    cfg: &'a ConfigDocument,
    nodes: Vec<Node<'a>>,
    index: BTreeMap<u16, usize>,
    host: HostGateway,
    queue: BinaryHeap<Reverse<Queued>>,
    next_seq: u64,
    now: i64,
    trace: TraceWriter,
    dlog: String,
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

fn plan_fields(plan: &DutyPlan, energy: &EnergyState, day: i64) -> Vec<(&'static str, String)> {
    let forecast: Vec<f64> = energy.harvest.slots().iter().map(|p| p * energy.mppt_efficiency).collect();
    vec![
        ("day", day.to_string()),
        ("budget_mwh", plan.budget_mwh.to_string()),
        ("planned_mwh", plan.planned_mwh.to_string()),
        ("fractions", fmt_list(&plan.fractions)),
        ("slot_mwh", fmt_list(&plan.slot_mwh)),
        ("forecast_mwh", fmt_list(&forecast)),
    ]
}

impl<'a> Sim<'a> {
    fn push(&mut self, t: i64, ev: Ev) {
        assert!(t >= self.now, "event at {t} scheduled from {}", self.now);
        self.queue.push(Reverse(Queued { t, seq: self.next_seq, ev }));
        self.next_seq += 1;
    }

    fn dev_entity(&self, i: usize) -> String {
        format!("dev:{}", self.nodes[i].id)
    }

    fn log_device(&mut self, t: i64, event: &str, i: usize) {
        let n = &self.nodes[i];
        let _ = writeln!(self.dlog, "{t},{event},{},{},{:.6}", n.id, n.state, n.energy.battery_mwh);
    }

    fn window(&self) -> usize {
        self.cfg.pipeline.window
    }

    fn period(&self, i: usize) -> i64 {
        self.nodes[i].setup.playback.period_ms()
    }

    fn device_now(&self, i: usize, t: i64) -> i64 {
        t + self.nodes[i].setup.spec.clock_skew_ms
    }

    fn flush(&mut self, i: usize, t: i64) {
        let n = &mut self.nodes[i];
        let dt = (t - n.state_since).max(0) as u64;
        n.dwell.add(n.state, dt);
        if n.state != PowerState::Sleep {
            n.slot_active_ms += dt;
        }
        n.state_since = t;
    }

    fn duty_left(&self, i: usize, t: i64) -> bool {
        let n = &self.nodes[i];
        let awake = if n.state == PowerState::Sleep { 0 } else { (t - n.state_since).max(0) as u64 };
        n.slot_active_ms + awake < n.plan.allowance_ms(HarvestProfile::slot_of(t))
    }

    fn sleep_reason(&self, i: usize, t: i64) -> Option<&'static str> {
        let n = &self.nodes[i];
        if n.energy.depleted {
            Some("depleted")
        } else if !self.duty_left(i, t) {
            Some("duty")
        } else if t - n.last_motion >= self.cfg.scenario.idle_timeout_ms {
            Some("idle")
        } else {
            None
        }
    }

    /// Arms the wake-on-motion interrupt, unless the node may not wake now.
    fn schedule_wake(&mut self, i: usize, t: i64) {
        if self.nodes[i].energy.depleted || !self.duty_left(i, t) {
            return;
        }
        if let Some(next) = self.nodes[i].setup.playback.next_motion(t) {
            if next <= self.cfg.scenario.duration_ms {
                let epoch = self.nodes[i].epoch;
                self.push(next, Ev::Fsm { dev: i, event: DeviceEvent::MotionDetected, epoch });
            }
        }
    }

    fn rearm_sleeping(&mut self, i: usize, t: i64) {
        if self.nodes[i].state == PowerState::Sleep {
            self.nodes[i].epoch += 1;
            self.schedule_wake(i, t);
        }
    }

    fn transmit_up(
        &mut self,
        i: usize,
        t: i64,
        frame: (FrameType, u32, &[u8]),
        kind: &str,
        attempt: u32,
        canary_plain: bool,
        in_tx_state: bool,
    ) -> u64 {
        let (ft, seq, bytes) = frame;
        let airtime = self.cfg.channel.airtime_ms(bytes.len());
        let entity = self.dev_entity(i);
        self.trace.event(
            t,
            "TX",
            &entity,
            &[
                ("to", "host".into()),
                ("type", ft.name().into()),
                ("seq", seq.to_string()),
                ("len", bytes.len().to_string()),
                ("attempt", attempt.to_string()),
                ("payload", kind.into()),
                ("canary_plain", u8::from(canary_plain).to_string()),
                ("frame", hex::encode(bytes)),
            ],
        );
        let n = &mut self.nodes[i];
        if !in_tx_state {
            n.dwell.burst_mwh += self.cfg.device_profile.p_tx_mw * airtime as f64 / HOUR_MS as f64;
        }
        match n.up.transmit(bytes, t) {
            Transmission::Delivered { arrive_ms, bytes, .. } => self.push(arrive_ms, Ev::HostRx { bytes }),
            Transmission::Lost => {
                let link = format!("link:up:{}", self.nodes[i].id);
                self.trace.event(t, "DROP", &link, &[("seq", seq.to_string())]);
            }
        }
        airtime
    }

    fn send(
        &mut self,
        i: usize,
        t: i64,
        ft: FrameType,
        payload: &[u8],
        kind: &str,
        in_tx_state: bool,
    ) -> Result<(u32, Vec<u8>, u64), SimError> {
        let canary_plain = self.nodes[i].setup.canary.as_deref().is_some_and(|c| contains(payload, c));
        let (seq, bytes) = self.nodes[i].endpoint.seal(ft, payload)?;
        let airtime = self.transmit_up(i, t, (ft, seq, &bytes), kind, 1, canary_plain, in_tx_state);
        Ok((seq, bytes, airtime))
    }

    fn start(&mut self) -> Result<(), SimError> {
        for i in 0..self.nodes.len() {
            let entity = self.dev_entity(i);
            let n = &self.nodes[i];
            let fields = vec![
                ("app", format!("{:?}", n.app).to_lowercase()),
                ("skew_ms", n.setup.spec.clock_skew_ms.to_string()),
                ("capacity_mwh", n.energy.capacity_mwh.to_string()),
                ("battery_mwh", n.energy.battery_mwh.to_string()),
                ("model_bytes", n.setup.model_bytes.to_string()),
            ];
            self.trace.event(0, "START", &entity, &fields);
            let plan = plan_fields(&n.plan, &n.energy, 0);
            self.trace.event(0, "PLAN", &entity, &plan);
            self.log_device(0, "START", i);
            let hello = [self.nodes[i].app.id()];
            self.send(i, 0, FrameType::Hello, &hello, "hello", false)?;
            self.push(0, Ev::SyncStart { dev: i });
            self.schedule_wake(i, 0);
        }
        let interval = self.cfg.scenario.account_interval_ms;
        if interval <= self.cfg.scenario.duration_ms {
            self.push(interval, Ev::Tick);
        }
        Ok(())
    }

    fn on_fsm(&mut self, t: i64, i: usize, event: DeviceEvent, epoch: u64) -> Result<(), SimError> {
        if epoch != self.nodes[i].epoch {
            return Ok(());
        }
        let entity = self.dev_entity(i);
        let state = self.nodes[i].state;
        if event == DeviceEvent::MotionDetected && state == PowerState::Sleep {
            if let Some(reason) = self.sleep_reason(i, t).filter(|r| *r != "idle") {
                self.trace.event(t, "GATED", &entity, &[("reason", reason.into())]);
                return Ok(());
            }
        }
        let tr = step_state_machine(state, event);
        if tr.is_noop() {
            self.trace.event(t, "NOOP", &entity, &[("state", state.name().into()), ("event", event.name().into())]);
            self.log_device(t, &format!("noop:{}", event.name()), i);
            if event == DeviceEvent::WindowFull && state != PowerState::Sleep {
                let next = t + self.stride_ms(i);
                self.push(next, Ev::Fsm { dev: i, event, epoch });
            }
            return Ok(());
        }
        self.flush(i, t);
        self.nodes[i].state = tr.to;
        self.trace.event(
            t,
            "STATE",
            &entity,
            &[
                ("from", tr.from.name().into()),
                ("event", event.name().into()),
                ("to", tr.to.name().into()),
                ("action", format!("{:?}", tr.action)),
            ],
        );
        self.log_device(t, event.name(), i);

        match tr.action {
            Action::StartSampling => {
                self.nodes[i].last_motion = t;
                let full = t + self.window() as i64 * self.period(i);
                self.push(full, Ev::Fsm { dev: i, event: DeviceEvent::WindowFull, epoch });
            }
            Action::RunInference => self.run_inference(t, i, epoch)?,
            Action::EnqueueData => self.enqueue(t, i, epoch)?,
            Action::ResumeSampling => {
                if let Some(reason) = self.sleep_reason(i, t) {
                    self.trace.event(t, "IDLE", &entity, &[("reason", reason.into())]);
                    self.push(t, Ev::Fsm { dev: i, event: DeviceEvent::IdleTimeout, epoch });
                }
            }
            Action::EnterSleep => {
                self.nodes[i].epoch += 1;
                self.schedule_wake(i, t);
            }
            Action::NoOp => unreachable!("handled above"),
        }
        Ok(())
    }

    fn stride_ms(&self, i: usize) -> i64 {
        stride(self.window(), self.cfg.pipeline.overlap) as i64 * self.period(i)
    }

    fn run_inference(&mut self, t: i64, i: usize, epoch: u64) -> Result<(), SimError> {
        let w = self.window();
        let n = &self.nodes[i];
        let window = n.setup.playback.window_ending(t, w);
        let moving = motion_detector(&window, self.cfg.scenario.motion_threshold_g);
        let features = n.extractor.extract(&window).select(n.setup.channels)?;
        let (class, confidence) = n.setup.model.predict(&features.values)?;
        let label = Label::decode(n.app.label_kind(), class)?;
        let truth = n.setup.playback.truth(&window);
        let entity = self.dev_entity(i);
        self.trace.event(
            t,
            "INFER",
            &entity,
            &[
                ("label", label.name().into()),
                ("conf", format!("{confidence:.4}")),
                ("truth", truth.map_or("-", Label::name).into()),
            ],
        );
        let n = &mut self.nodes[i];
        if moving {
            n.last_motion = t;
        }
        n.pending = Some(Inference { label, confidence, window });
        let done = t + self.cfg.scenario.processing_ms;
        self.push(done, Ev::Fsm { dev: i, event: DeviceEvent::InferenceDone, epoch });
        let next = t + self.stride_ms(i);
        self.push(next, Ev::Fsm { dev: i, event: DeviceEvent::WindowFull, epoch });
        Ok(())
    }

    fn enqueue(&mut self, t: i64, i: usize, epoch: u64) -> Result<(), SimError> {
        let Some(inf) = self.nodes[i].pending.take() else {
            return Err(SimError::Setup("transmit without an inference".into()));
        };
        let app = self.nodes[i].app;
        let mut airtime = 0;
        if self.cfg.protocol.local_processing {
            let ts = self.device_now(i, t).max(0) as u64;
            let payload = DataPayload::new(ts, app, inf.label, inf.confidence)?;
            airtime += self.send(i, t, FrameType::Data, &payload.to_bytes(), "result", true)?.2;

            let proto = &self.cfg.protocol;
            let cooled = self.nodes[i]
                .last_alert
                .get(&inf.label)
                .is_none_or(|&last| t - last >= proto.alert_cooldown_ms);
            if proto.alert_labels.contains(&inf.label) && cooled {
                let (seq, frame, at) = self.send(i, t, FrameType::Alert, &payload.to_bytes(), "alert", true)?;
                airtime += at;
                let policy = self.cfg.protocol.retry.clone();
                let interval = policy.interval_ms;
                let n = &mut self.nodes[i];
                n.last_alert.insert(inf.label, t);
                n.alerts.insert(seq, AlertTracker::new(seq, frame, t, policy));
                self.push(t + interval, Ev::AlertTimer { dev: i, seq, attempt: 1 });
            }
        } else {
            let per_sample = crate::netproto::raw_sample_bytes(&inf.window[0]).len();
            let per_frame = ((MAX_PAYLOAD - 1) / per_sample).max(1);
            for chunk in inf.window.chunks(per_frame) {
                airtime += self.send(i, t, FrameType::Data, &raw_block(app, chunk), "raw", true)?.2;
            }
        }
        self.push(t + airtime.max(1) as i64, Ev::Fsm { dev: i, event: DeviceEvent::TxDone, epoch });
        Ok(())
    }

    fn on_tick(&mut self, t: i64) {
        let profile = self.cfg.device_profile.clone();
        for i in 0..self.nodes.len() {
            self.account(i, t, &profile);
            let entity = self.dev_entity(i);
            if t % HOUR_MS == 0 {
                self.nodes[i].slot_active_ms = 0;
                if t % DAY_MS == 0 {
                    let n = &mut self.nodes[i];
                    n.plan = plan_duty_cycle(&n.energy.harvest, &profile, n.app, &n.energy, &self.cfg.energy);
                    let fields = plan_fields(&n.plan, &n.energy, t / DAY_MS);
                    self.trace.event(t, "PLAN", &entity, &fields);
                }
                self.rearm_sleeping(i, t);
            }
        }
        let next = t + self.cfg.scenario.account_interval_ms;
        if next <= self.cfg.scenario.duration_ms {
            self.push(next, Ev::Tick);
        }
    }

    fn account(&mut self, i: usize, t: i64, profile: &crate::types::DeviceProfile) {
        self.flush(i, t);
        let n = &mut self.nodes[i];
        let dwell = std::mem::take(&mut n.dwell);
        let d = account_energy(&dwell, profile, n.app, &mut n.energy, n.last_account);
        n.last_account = t;
        let entity = self.dev_entity(i);
        self.trace.event(
            t,
            "ENERGY",
            &entity,
            &[
                ("t0", d.t0_ms.to_string()),
                ("before", d.before_mwh.to_string()),
                ("after", d.after_mwh.to_string()),
                ("harvested", d.harvested_mwh.to_string()),
                ("consumed", d.consumed_mwh.to_string()),
                ("loss", d.loss_mwh.to_string()),
                ("spilled", d.spilled_mwh.to_string()),
                ("unmet", d.unmet_mwh.to_string()),
            ],
        );
        self.log_device(t, "ENERGY", i);
        if d.depleted_now {
            self.trace.event(t, "DEPLETED", &entity, &[]);
            self.log_device(t, "BatteryDepleted", i);
            if self.nodes[i].state == PowerState::Sampling {
                let epoch = self.nodes[i].epoch;
                self.push(t, Ev::Fsm { dev: i, event: DeviceEvent::IdleTimeout, epoch });
            }
        }
        if d.restored_now {
            self.trace.event(t, "RESTORED", &entity, &[]);
            self.log_device(t, "BatteryRestored", i);
            self.rearm_sleeping(i, t);
        }
    }

    fn on_host_rx(&mut self, t: i64, bytes: Vec<u8>) {
        let header = peek_header(&bytes).ok();
        let step = self.host.receive(&bytes, t);
        let from = |h: Option<crate::netproto::FrameHeader>| h.map_or("?".to_string(), |h| h.device_id.to_string());
        let mut rx = |outcome: &str, extra: Vec<(&'static str, String)>| {
            let mut fields = vec![
                ("from", from(header)),
                ("type", header.and_then(|h| FrameType::from_byte(h.frame_type)).map_or("?", FrameType::name).into()),
                ("seq", header.map_or("?".into(), |h| h.seq.to_string())),
                ("outcome", outcome.to_string()),
            ];
            fields.extend(extra);
            self.trace.event(t, "RX", "host", &fields);
        };
        match &step.event {
            HostEvent::Rejected { device_id, seq, code } => {
                let fields = [
                    ("from", device_id.map_or("?".into(), |d| d.to_string())),
                    ("seq", seq.map_or("?".into(), |s| s.to_string())),
                    ("code", code.name().into()),
                ];
                self.trace.event(t, "REJECT", "host", &fields);
            }
            HostEvent::Stored(o) => rx(
                "stored",
                vec![
                    ("label", o.label.name().into()),
                    ("conf", format!("{:.4}", o.confidence)),
                    ("device_t", o.device_t_ms.to_string()),
                    ("corrected_t", o.corrected_t_ms.to_string()),
                ],
            ),
            HostEvent::RawBlock { len, .. } => rx("raw", vec![("bytes", len.to_string())]),
            HostEvent::Alert(n) => {
                rx("alert", vec![]);
                let fields = [
                    ("dev", n.device_id.to_string()),
                    ("seq", n.seq.to_string()),
                    ("label", n.label.name().into()),
                    ("corrected_t", n.corrected_t_ms.to_string()),
                ];
                self.trace.event(t, "NOTIFY", "host", &fields);
            }
            HostEvent::AlertReAcked { .. } => rx("realert", vec![]),
            HostEvent::SyncResponded { .. } => rx("sync_request", vec![]),
            HostEvent::OffsetUpdated { offset_ms, .. } => rx("offset", vec![("offset_ms", offset_ms.to_string())]),
            HostEvent::Hello { .. } => rx("hello", vec![]),
            HostEvent::Ignored { .. } => rx("ignored", vec![]),
        }
        for reply in step.replies {
            let Some(&i) = self.index.get(&reply.device_id) else { continue };
            self.trace.event(
                t,
                "TX",
                "host",
                &[
                    ("to", reply.device_id.to_string()),
                    ("type", reply.frame_type.name().into()),
                    ("seq", reply.seq.to_string()),
                    ("len", reply.bytes.len().to_string()),
                    ("attempt", "1".into()),
                    ("payload", "control".into()),
                    ("canary_plain", "0".into()),
                    ("frame", hex::encode(&reply.bytes)),
                ],
            );
            match self.nodes[i].down.transmit(&reply.bytes, t) {
                Transmission::Delivered { arrive_ms, bytes, .. } => self.push(arrive_ms, Ev::DevRx { dev: i, bytes }),
                Transmission::Lost => {
                    let link = format!("link:down:{}", reply.device_id);
                    self.trace.event(t, "DROP", &link, &[("seq", reply.seq.to_string())]);
                }
            }
        }
    }

    fn on_dev_rx(&mut self, t: i64, i: usize, bytes: Vec<u8>) -> Result<(), SimError> {
        let entity = self.dev_entity(i);
        let frame = match self.nodes[i].endpoint.open(&bytes) {
            Ok(f) => f,
            Err(code) => {
                let seq = peek_header(&bytes).map_or("?".into(), |h| h.seq.to_string());
                self.trace.event(t, "REJECT", &entity, &[("seq", seq), ("code", code.name().into())]);
                return Ok(());
            }
        };
        self.trace.event(
            t,
            "RX",
            &entity,
            &[("type", frame.frame_type.name().into()), ("seq", frame.seq.to_string())],
        );
        match frame.frame_type {
            FrameType::Ack => {
                let acked = parse_ack(&frame.payload)?;
                let n = &mut self.nodes[i];
                if let Some(rec) = n.alerts.get_mut(&acked).and_then(|tr| tr.on_ack(acked, t)) {
                    n.alerts.remove(&acked);
                    self.trace.event(
                        t,
                        "ALERT_DELIVERED",
                        &entity,
                        &[
                            ("seq", rec.seq.to_string()),
                            ("attempts", rec.attempts.to_string()),
                            ("latency_ms", rec.latency_ms.unwrap_or_default().to_string()),
                        ],
                    );
                }
            }
            FrameType::TimeSync => {
                if let Ok(SyncPayload::Response { t1, t2, t3 }) = SyncPayload::from_bytes(&frame.payload) {
                    let t4 = self.device_now(i, t);
                    if let Some(offset) = self.nodes[i].sync.on_response(t1, t2, t3, t4) {
                        let rtt = self.nodes[i].sync.last_rtt_ms.unwrap_or_default();
                        self.nodes[i].sync_round += 1;
                        self.trace.event(
                            t,
                            "SYNC",
                            &entity,
                            &[("offset_ms", offset.to_string()), ("rtt_ms", rtt.to_string())],
                        );
                        let report = SyncPayload::Report { offset_ms: offset }.to_bytes();
                        self.send(i, t, FrameType::TimeSync, &report, "sync_report", false)?;
                        if !self.draining() {
                            let next = t + self.cfg.protocol.sync.interval_ms;
                            self.push(next, Ev::SyncStart { dev: i });
                        }
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn draining(&self) -> bool {
        self.now > self.cfg.scenario.duration_ms
    }

    fn sync_send(&mut self, t: i64, i: usize, outcome: SyncOutcome) -> Result<(), SimError> {
        let entity = self.dev_entity(i);
        self.nodes[i].sync_round += 1;
        match outcome {
            SyncOutcome::Send { t1 } => {
                let req = SyncPayload::Request { t1 }.to_bytes();
                self.send(i, t, FrameType::TimeSync, &req, "sync_request", false)?;
                let round = self.nodes[i].sync_round;
                self.push(t + self.cfg.protocol.sync.timeout_ms, Ev::SyncTimeout { dev: i, round });
            }
            SyncOutcome::Timeout => {
                self.trace.event(t, "SYNC_TIMEOUT", &entity, &[]);
                self.push(t + self.cfg.protocol.sync.interval_ms, Ev::SyncStart { dev: i });
            }
        }
        Ok(())
    }

    fn on_alert_timer(&mut self, t: i64, i: usize, seq: u32, attempt: u32) {
        let entity = self.dev_entity(i);
        let Some(tracker) = self.nodes[i].alerts.get_mut(&seq) else { return };
        if tracker.attempts() != attempt {
            return;
        }
        match tracker.on_timer() {
            TimerOutcome::Retransmit(frame) => {
                self.transmit_up(i, t, (FrameType::Alert, seq, &frame), "alert", attempt + 1, false, false);
                let next = t + self.cfg.protocol.retry.interval_ms;
                self.push(next, Ev::AlertTimer { dev: i, seq, attempt: attempt + 1 });
            }
            TimerOutcome::Undelivered(rec) => {
                self.nodes[i].alerts.remove(&seq);
                self.trace.event(
                    t,
                    "ALERT_UNDELIVERED",
                    &entity,
                    &[("seq", rec.seq.to_string()), ("attempts", rec.attempts.to_string())],
                );
            }
            TimerOutcome::Idle => {}
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        self.start()?;
        let duration = self.cfg.scenario.duration_ms;
        while let Some(Reverse(q)) = self.queue.pop() {
            if q.t > duration && !q.ev.is_delivery() {
                continue;
            }
            self.now = q.t;
            let t = q.t;
            match q.ev {
                Ev::Fsm { dev, event, epoch } => self.on_fsm(t, dev, event, epoch)?,
                Ev::Tick => self.on_tick(t),
                Ev::HostRx { bytes } => self.on_host_rx(t, bytes),
                Ev::DevRx { dev, bytes } => self.on_dev_rx(t, dev, bytes)?,
                Ev::AlertTimer { dev, seq, attempt } => self.on_alert_timer(t, dev, seq, attempt),
                Ev::SyncStart { dev } => {
                    let now = self.device_now(dev, t);
                    let outcome = self.nodes[dev].sync.start(now);
                    self.sync_send(t, dev, outcome)?;
                }
                Ev::SyncTimeout { dev, round } => {
                    if round == self.nodes[dev].sync_round && self.nodes[dev].sync.pending().is_some() {
                        let now = self.device_now(dev, t);
                        let outcome = self.nodes[dev].sync.on_timeout(now);
                        self.sync_send(t, dev, outcome)?;
                    }
                }
            }
        }
        // Settle whatever accrued since the last tick, including in-flight
        // deliveries that completed after the nominal end.
        let end = self.now.max(duration);
        let profile = self.cfg.device_profile.clone();
        self.now = end;
        for i in 0..self.nodes.len() {
            let n = &self.nodes[i];
            if n.last_account < end || n.dwell.burst_mwh > 0.0 {
                self.account(i, end, &profile);
            }
        }
        Ok(())
    }
}

/// Runs `scenario` with all randomness derived from `seed`.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<SimOutput, SimError> {
    let cfg = &scenario.config;
    let mut host = HostGateway::new();
    let mut nodes = Vec::new();
    let mut index = BTreeMap::new();
    for (i, setup) in scenario.devices.iter().enumerate() {
        let id = setup.spec.id;
        host.register(id, scenario.key);
        index.insert(id, i);
        let energy = EnergyState::new(&cfg.energy);
        let plan = plan_duty_cycle(&energy.harvest, &cfg.device_profile, setup.spec.app, &energy, &cfg.energy);
        nodes.push(Node {
            setup,
            id,
            app: setup.spec.app,
            extractor: FeatureExtractor::new(cfg.pipeline.window),
            endpoint: DeviceEndpoint::new(id, scenario.key),
            state: PowerState::Sleep,
            state_since: 0,
            epoch: 0,
            energy,
            dwell: Dwell::default(),
            last_account: 0,
            plan,
            slot_active_ms: 0,
            last_motion: 0,
            pending: None,
            sync: SyncState::new(cfg.protocol.sync.clone()),
            sync_round: 0,
            alerts: BTreeMap::new(),
            last_alert: BTreeMap::new(),
            up: Link::new(cfg.channel.clone(), sub_seed(seed, &format!("link:up:{id}"))),
            down: Link::new(cfg.channel.clone(), sub_seed(seed, &format!("link:down:{id}"))),
        });
    }

    let mut meta = vec![
        ("seed", seed.to_string()),
        ("duration_ms", cfg.scenario.duration_ms.to_string()),
        ("local_processing", cfg.protocol.local_processing.to_string()),
        ("devices", scenario.devices.iter().map(|d| d.spec.id.to_string()).collect::<Vec<_>>().join(",")),
    ];
    let canaries: Vec<String> = scenario
        .devices
        .iter()
        .filter_map(|d| d.canary.as_ref().map(|c| format!("{}:{}", d.spec.id, hex::encode(c))))
        .collect();
    if !canaries.is_empty() {
        meta.push(("canary", canaries.join(",")));
    }

    let mut sim = Sim {
        cfg,
        nodes,
        index,
        host,
        queue: BinaryHeap::new(),
        next_seq: 0,
        now: 0,
        trace: TraceWriter::new(&meta),
        dlog: "t_ms,event,device_id,state,battery_mwh\n".to_string(),
    };
    sim.run()?;

    let mut observations = Vec::new();
    sim.host.write_observation_log(&mut observations).map_err(|e| SimError::Setup(e.to_string()))?;
    let trace = sim.trace.finish();
    let metrics = metrics_from_trace(&trace)?;
    Ok(SimOutput {
        trace,
        device_log: sim.dlog,
        observations: String::from_utf8(observations).expect("CSV is UTF-8"),
        metrics,
    })
}
