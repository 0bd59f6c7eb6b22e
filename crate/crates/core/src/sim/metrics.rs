use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::engine::DAY_MS;
use super::trace::{parse_trace, TraceRecord};
use super::SimError;
use crate::firmware::HOUR_MS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayBattery {
    pub day: i64,
    pub start_mwh: f64,
    pub end_mwh: f64,
    /// False for a trailing partial day.
    pub complete: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceMetrics {
    pub id: u16,
    pub app: String,
    pub frames_sent: usize,
    pub frames_lost_up: usize,
    pub host_received: usize,
    pub host_rejected: usize,
    pub frames_to_device: usize,
    pub frames_lost_down: usize,
    pub device_received: usize,
    pub device_rejected: usize,
    pub wakeups: usize,
    pub inferences: usize,
    /// Inferences whose window had an unambiguous ground-truth label.
    pub labeled_inferences: usize,
    pub correct_inferences: usize,
    pub accuracy: Option<f64>,
    pub label_counts: BTreeMap<String, usize>,
    pub alerts_sent: usize,
    pub alert_retransmissions: usize,
    pub alerts_delivered: usize,
    pub alerts_undelivered: usize,
    pub alert_attempts: Vec<u32>,
    pub alert_latency_ms: Vec<i64>,
    pub notifications: usize,
    pub sync_rounds: usize,
    pub sync_timeouts: usize,
    /// Last offset the device estimated (host minus device clock).
    pub sync_offset_ms: Option<f64>,
    pub battery_start_mwh: f64,
    pub battery_end_mwh: f64,
    pub harvested_mwh: f64,
    pub consumed_mwh: f64,
    pub depletions: usize,
    pub daily_battery: Vec<DayBattery>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub trace_version: u32,
    pub seed: Option<u64>,
    pub duration_ms: Option<i64>,
    pub local_processing: Option<bool>,
    pub events: usize,
    pub frames_sent: usize,
    pub frames_received: usize,
    pub frames_rejected: usize,
    pub frames_lost: usize,
    pub alerts_sent: usize,
    pub alerts_delivered: usize,
    pub alerts_undelivered: usize,
    pub notifications: usize,
    /// TX lines whose plaintext payload carried a canary sample.
    pub plaintext_canary_frames: usize,
    /// Canary byte patterns found in on-air frames.
    pub wire_canary_hits: usize,
    /// Hourly battery level per device id.
    pub battery_series: BTreeMap<String, Vec<(i64, f64)>>,
    pub devices: Vec<DeviceMetrics>,
}

pub(crate) fn canaries(meta: &BTreeMap<String, String>) -> Vec<(u16, Vec<u8>)> {
    meta.get("canary")
        .map(|s| {
            s.split(',')
                .filter_map(|item| {
                    let (id, hex) = item.split_once(':')?;
                    Some((id.parse().ok()?, hex::decode(hex).ok()?))
                })
                .collect()
        })
        .unwrap_or_default()
}

pub(crate) fn count_hits(hay: &[u8], needle: &[u8]) -> usize {
    if needle.is_empty() {
        return 0;
    }
    hay.windows(needle.len()).filter(|w| *w == needle).count()
}

fn daily(points: &[(i64, f64)]) -> Vec<DayBattery> {
    let Some(&(end_t, _)) = points.last() else { return Vec::new() };
    let at = |t: i64| points.iter().take_while(|p| p.0 <= t).last().map_or(points[0].1, |p| p.1);
    let days = (end_t + DAY_MS - 1) / DAY_MS;
    (0..days.max(1))
        .map(|d| DayBattery {
            day: d,
            start_mwh: at(d * DAY_MS),
            end_mwh: at((d + 1) * DAY_MS),
            complete: (d + 1) * DAY_MS <= end_t,
        })
        .collect()
}

/// Recomputes every metric from trace text alone.
pub fn metrics_from_trace(text: &str) -> Result<Metrics, SimError> {
    let (header, records) = parse_trace(text)?;
    let canary = canaries(&header.meta);
    let mut m = Metrics {
        trace_version: header.version,
        seed: header.meta.get("seed").and_then(|s| s.parse().ok()),
        duration_ms: header.meta.get("duration_ms").and_then(|s| s.parse().ok()),
        local_processing: header.meta.get("local_processing").and_then(|s| s.parse().ok()),
        events: records.len(),
        ..Default::default()
    };
    let mut devs: BTreeMap<u16, DeviceMetrics> = BTreeMap::new();
    let mut points: BTreeMap<u16, Vec<(i64, f64)>> = BTreeMap::new();

    fn dev(devs: &mut BTreeMap<u16, DeviceMetrics>, id: u16) -> &mut DeviceMetrics {
        devs.entry(id).or_insert_with(|| DeviceMetrics { id, ..Default::default() })
    }
    let peer = |r: &TraceRecord, key: &str| -> Option<u16> { r.get(key).and_then(|s| s.parse().ok()) };

    for r in &records {
        match (r.kind.as_str(), r.device()) {
            ("START", Some(id)) => {
                let d = dev(&mut devs, id);
                d.app = r.get("app").unwrap_or_default().to_string();
                d.battery_start_mwh = r.num("battery_mwh")?;
                d.battery_end_mwh = d.battery_start_mwh;
                points.entry(id).or_default().push((r.t_ms, d.battery_start_mwh));
            }
            ("TX", who) => {
                m.frames_sent += 1;
                if r.get("canary_plain") == Some("1") {
                    m.plaintext_canary_frames += 1;
                }
                let frame = hex::decode(r.get("frame").unwrap_or_default())
                    .map_err(|_| SimError::Trace { line: r.line, reason: "frame is not hex".into() })?;
                m.wire_canary_hits += canary.iter().map(|(_, c)| count_hits(&frame, c)).sum::<usize>();
                match who {
                    Some(id) => {
                        let alert = r.get("type") == Some("ALERT");
                        let first = r.get("attempt") == Some("1");
                        let d = dev(&mut devs, id);
                        d.frames_sent += 1;
                        if alert && first {
                            d.alerts_sent += 1;
                            m.alerts_sent += 1;
                        } else if alert {
                            d.alert_retransmissions += 1;
                        }
                    }
                    None => {
                        if let Some(id) = peer(r, "to") {
                            dev(&mut devs, id).frames_to_device += 1;
                        }
                    }
                }
            }
            ("DROP", _) => {
                m.frames_lost += 1;
                let mut parts = r.entity.split(':').skip(1);
                let dir = parts.next();
                if let Some(id) = parts.next().and_then(|s| s.parse().ok()) {
                    let d = dev(&mut devs, id);
                    if dir == Some("up") {
                        d.frames_lost_up += 1;
                    } else {
                        d.frames_lost_down += 1;
                    }
                }
            }
            ("RX", who) => {
                m.frames_received += 1;
                match who {
                    Some(id) => dev(&mut devs, id).device_received += 1,
                    None => {
                        if let Some(id) = peer(r, "from") {
                            dev(&mut devs, id).host_received += 1;
                        }
                    }
                }
            }
            ("REJECT", who) => {
                m.frames_received += 1;
                m.frames_rejected += 1;
                match who {
                    Some(id) => dev(&mut devs, id).device_rejected += 1,
                    None => {
                        if let Some(id) = peer(r, "from") {
                            dev(&mut devs, id).host_rejected += 1;
                        }
                    }
                }
            }
            ("STATE", Some(id)) => {
                if r.get("event") == Some("MotionDetected") {
                    dev(&mut devs, id).wakeups += 1;
                }
            }
            ("INFER", Some(id)) => {
                let d = dev(&mut devs, id);
                d.inferences += 1;
                let label = r.get("label").unwrap_or_default();
                *d.label_counts.entry(label.to_string()).or_default() += 1;
                if let Some(truth) = r.get("truth").filter(|t| *t != "-") {
                    d.labeled_inferences += 1;
                    if truth == label {
                        d.correct_inferences += 1;
                    }
                }
            }
            ("ALERT_DELIVERED", Some(id)) => {
                m.alerts_delivered += 1;
                let (attempts, latency) = (r.num("attempts")?, r.num("latency_ms")?);
                let d = dev(&mut devs, id);
                d.alerts_delivered += 1;
                d.alert_attempts.push(attempts);
                d.alert_latency_ms.push(latency);
            }
            ("ALERT_UNDELIVERED", Some(id)) => {
                m.alerts_undelivered += 1;
                let attempts = r.num("attempts")?;
                let d = dev(&mut devs, id);
                d.alerts_undelivered += 1;
                d.alert_attempts.push(attempts);
            }
            ("NOTIFY", None) => {
                m.notifications += 1;
                if let Some(id) = peer(r, "dev") {
                    dev(&mut devs, id).notifications += 1;
                }
            }
            ("SYNC", Some(id)) => {
                let offset = r.num("offset_ms")?;
                let d = dev(&mut devs, id);
                d.sync_rounds += 1;
                d.sync_offset_ms = Some(offset);
            }
            ("SYNC_TIMEOUT", Some(id)) => dev(&mut devs, id).sync_timeouts += 1,
            ("DEPLETED", Some(id)) => dev(&mut devs, id).depletions += 1,
            ("ENERGY", Some(id)) => {
                let (after, harvested, consumed) = (r.num("after")?, r.num::<f64>("harvested")?, r.num::<f64>("consumed")?);
                let d = dev(&mut devs, id);
                d.battery_end_mwh = after;
                d.harvested_mwh += harvested;
                d.consumed_mwh += consumed;
                points.entry(id).or_default().push((r.t_ms, after));
            }
            _ => {}
        }
    }

    for (id, pts) in &points {
        let last = *pts.last().expect("non-empty");
        let mut series: Vec<(i64, f64)> = pts.iter().copied().filter(|p| p.0 % HOUR_MS == 0).collect();
        if series.last() != Some(&last) {
            series.push(last);
        }
        m.battery_series.insert(id.to_string(), series);
        if let Some(d) = devs.get_mut(id) {
            d.daily_battery = daily(pts);
        }
    }
    for d in devs.values_mut() {
        d.accuracy = (d.labeled_inferences > 0).then(|| d.correct_inferences as f64 / d.labeled_inferences as f64);
    }
    m.devices = devs.into_values().collect();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_from_handwritten_trace() {
        let text = "#openhealth-trace v1\tseed=3\tcanary=1:aabb\n\
            0\tSTART\tdev:1\tapp=har\tbattery_mwh=10\n\
            5\tTX\tdev:1\tto=host\ttype=ALERT\tseq=1\tattempt=1\tcanary_plain=0\tframe=00aabb00\n\
            5\tDROP\tlink:up:1\tseq=1\n\
            205\tTX\tdev:1\tto=host\ttype=ALERT\tseq=1\tattempt=2\tcanary_plain=0\tframe=00aabb00\n\
            225\tRX\thost\tfrom=1\ttype=ALERT\tseq=1\toutcome=alert\n\
            225\tNOTIFY\thost\tdev=1\tseq=1\tlabel=Jump\n\
            225\tTX\thost\tto=1\ttype=ACK\tseq=2147483648\tattempt=1\tcanary_plain=0\tframe=01\n\
            245\tRX\tdev:1\ttype=ACK\tseq=2147483648\n\
            245\tALERT_DELIVERED\tdev:1\tseq=1\tattempts=2\tlatency_ms=240\n\
            300\tINFER\tdev:1\tlabel=Walk\tconf=0.9\ttruth=Walk\n\
            400\tINFER\tdev:1\tlabel=Walk\tconf=0.9\ttruth=Drive\n\
            500\tINFER\tdev:1\tlabel=Walk\tconf=0.9\ttruth=-\n\
            3600000\tENERGY\tdev:1\tafter=9\tharvested=0\tconsumed=1\n";
        let m = metrics_from_trace(text).unwrap();
        assert_eq!(m.seed, Some(3));
        assert_eq!((m.frames_sent, m.frames_received, m.frames_lost), (3, 2, 1));
        assert_eq!(m.wire_canary_hits, 2);
        assert_eq!((m.alerts_sent, m.alerts_delivered, m.notifications), (1, 1, 1));
        let d = &m.devices[0];
        assert_eq!(d.alert_attempts, vec![2]);
        assert_eq!(d.alert_retransmissions, 1);
        assert_eq!((d.labeled_inferences, d.correct_inferences), (2, 1));
        assert_eq!(d.accuracy, Some(0.5));
        assert_eq!(m.battery_series["1"], vec![(0, 10.0), (3_600_000, 9.0)]);
        assert_eq!(d.daily_battery.len(), 1);
        assert!(!d.daily_battery[0].complete);
    }

    #[test]
    fn daily_windows() {
        let pts = [(0, 5.0), (DAY_MS, 4.0), (DAY_MS + 60_000, 3.0), (2 * DAY_MS, 6.0)];
        let days = daily(&pts);
        assert_eq!(days.len(), 2);
        assert_eq!((days[0].start_mwh, days[0].end_mwh), (5.0, 4.0));
        assert_eq!((days[1].start_mwh, days[1].end_mwh), (4.0, 6.0));
        assert!(days[1].complete);
    }
}
