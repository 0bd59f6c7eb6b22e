//! Offline checks over a finished trace.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::metrics::{canaries, count_hits};
use super::trace::{parse_trace, TraceRecord};
use super::SimError;
use crate::netproto::peek_header;

const ENERGY_TOL_MWH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayCheck {
    /// Per-line battery identity, continuity, bounds and the run total.
    EnergyConservation,
    /// New sequence numbers per sender strictly increase; retransmissions
    /// repeat an earlier frame byte for byte.
    SequenceMonotonic,
    /// A (device id, seq) nonce never covers two different frames.
    NonceUnique,
    /// No canary bytes on the air, and none in plaintext when processing
    /// is local.
    CanaryAbsent,
    /// Event times never go backwards.
    TimeOrder,
}

impl ReplayCheck {
    pub const ALL: [ReplayCheck; 5] = [
        ReplayCheck::EnergyConservation,
        ReplayCheck::SequenceMonotonic,
        ReplayCheck::NonceUnique,
        ReplayCheck::CanaryAbsent,
        ReplayCheck::TimeOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReplayCheck::EnergyConservation => "energy_conservation",
            ReplayCheck::SequenceMonotonic => "sequence_monotonic",
            ReplayCheck::NonceUnique => "nonce_unique",
            ReplayCheck::CanaryAbsent => "canary_absent",
            ReplayCheck::TimeOrder => "time_order",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: ReplayCheck,
    pub passed: bool,
    /// Lines the check looked at.
    pub checked: usize,
    pub line: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub results: Vec<CheckResult>,
    pub warnings: Vec<String>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn result(&self, check: ReplayCheck) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.check == check)
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        for r in &self.results {
            let verdict = if r.passed { "PASS" } else { "FAIL" };
            write!(f, "{verdict} {} ({} lines)", r.check.name(), r.checked)?;
            if let Some(msg) = &r.failure {
                match r.line {
                    Some(line) => write!(f, ": line {line}: {msg}")?,
                    None => write!(f, ": {msg}")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

type Outcome = Result<usize, (Option<usize>, String)>;

fn fail<T>(r: &TraceRecord, msg: String) -> Result<T, (Option<usize>, String)> {
    Err((Some(r.line), msg))
}

fn num(r: &TraceRecord, key: &str) -> Result<f64, (Option<usize>, String)> {
    r.num(key).map_err(|e| (Some(r.line), e.to_string()))
}

fn frame_bytes(r: &TraceRecord) -> Result<Vec<u8>, (Option<usize>, String)> {
    hex::decode(r.get("frame").unwrap_or_default()).map_err(|_| (Some(r.line), "frame is not hex".into()))
}

fn check_energy(records: &[TraceRecord]) -> Outcome {
    struct Acc {
        start: f64,
        level: f64,
        capacity: f64,
        balance: f64,
    }
    let mut accs: BTreeMap<u16, Acc> = BTreeMap::new();
    let mut checked = 0;
    let mut last_line = BTreeMap::new();
    for r in records {
        let Some(id) = r.device() else { continue };
        match r.kind.as_str() {
            "START" => {
                let b = num(r, "battery_mwh")?;
                accs.insert(id, Acc { start: b, level: b, capacity: num(r, "capacity_mwh")?, balance: 0.0 });
            }
            "ENERGY" => {
                checked += 1;
                let Some(acc) = accs.get_mut(&id) else {
                    return fail(r, format!("energy for device {id} before its START"));
                };
                let before = num(r, "before")?;
                let after = num(r, "after")?;
                let net = num(r, "harvested")? - num(r, "consumed")? - num(r, "loss")? - num(r, "spilled")?
                    + num(r, "unmet")?;
                if (before - acc.level).abs() > ENERGY_TOL_MWH {
                    return fail(r, format!("battery jumped from {} to {before} mWh between settlements", acc.level));
                }
                if (after - before - net).abs() > ENERGY_TOL_MWH {
                    return fail(r, format!("after - before = {} mWh but the flows sum to {net} mWh", after - before));
                }
                if after < -ENERGY_TOL_MWH || after > acc.capacity + ENERGY_TOL_MWH {
                    return fail(r, format!("battery {after} mWh outside [0, {}]", acc.capacity));
                }
                acc.level = after;
                acc.balance += net;
                last_line.insert(id, r.line);
            }
            _ => {}
        }
    }
    for (id, acc) in &accs {
        let drift = acc.level - acc.start - acc.balance;
        if drift.abs() > ENERGY_TOL_MWH {
            return Err((last_line.get(id).copied(), format!("device {id}: total drift {drift} mWh")));
        }
    }
    Ok(checked)
}

fn check_sequences(records: &[TraceRecord]) -> Outcome {
    let mut highest: BTreeMap<(String, String), u32> = BTreeMap::new();
    let mut frames: BTreeMap<(String, String, u32), Vec<u8>> = BTreeMap::new();
    let mut checked = 0;
    for r in records.iter().filter(|r| r.kind == "TX") {
        checked += 1;
        let sender = (r.entity.clone(), r.get("to").unwrap_or_default().to_string());
        let seq: u32 = r.num("seq").map_err(|e| (Some(r.line), e.to_string()))?;
        let attempt: u32 = r.num("attempt").map_err(|e| (Some(r.line), e.to_string()))?;
        let bytes = frame_bytes(r)?;
        let key = (sender.0.clone(), sender.1.clone(), seq);
        if attempt > 1 {
            match frames.get(&key) {
                Some(orig) if *orig == bytes => continue,
                Some(_) => return fail(r, format!("retransmission of seq {seq} differs from the original")),
                None => return fail(r, format!("retransmission of unseen seq {seq}")),
            }
        }
        if let Some(&prev) = highest.get(&sender) {
            if seq <= prev {
                return fail(r, format!("{} sent seq {seq} after {prev}", r.entity));
            }
        }
        highest.insert(sender, seq);
        frames.insert(key, bytes);
    }
    Ok(checked)
}

fn check_nonces(records: &[TraceRecord]) -> Outcome {
    let mut seen: BTreeMap<(u16, u32), (usize, Vec<u8>)> = BTreeMap::new();
    let mut checked = 0;
    for r in records.iter().filter(|r| r.kind == "TX") {
        checked += 1;
        let bytes = frame_bytes(r)?;
        let h = peek_header(&bytes).map_err(|c| (Some(r.line), format!("unparseable frame: {}", c.name())))?;
        match seen.get(&(h.device_id, h.seq)) {
            Some((first, orig)) if *orig != bytes => {
                return fail(r, format!("nonce ({}, {}) reused; first used on line {first}", h.device_id, h.seq));
            }
            Some(_) => {}
            None => {
                seen.insert((h.device_id, h.seq), (r.line, bytes));
            }
        }
    }
    Ok(checked)
}

fn check_canary(meta: &BTreeMap<String, String>, records: &[TraceRecord], warnings: &mut Vec<String>) -> Outcome {
    let patterns = canaries(meta);
    if patterns.is_empty() {
        warnings.push("trace declares no canary; the privacy check is vacuous".into());
    }
    let local = meta.get("local_processing").is_none_or(|v| v == "true");
    let mut checked = 0;
    for r in records.iter().filter(|r| r.kind == "TX") {
        checked += 1;
        let bytes = frame_bytes(r)?;
        if let Some((id, _)) = patterns.iter().find(|(_, c)| count_hits(&bytes, c) > 0) {
            return fail(r, format!("canary of device {id} visible on the air"));
        }
        if local && r.get("canary_plain") == Some("1") {
            return fail(r, "raw canary sample queued for transmission under local processing".into());
        }
    }
    Ok(checked)
}

fn check_time(records: &[TraceRecord]) -> Outcome {
    for pair in records.windows(2) {
        if pair[1].t_ms < pair[0].t_ms {
            return fail(&pair[1], format!("time {} after {}", pair[1].t_ms, pair[0].t_ms));
        }
    }
    Ok(records.len())
}

/// Runs `checks` over a trace. Only a missing or foreign header is an
/// error; a failed check is reported in the result.
pub fn replay(trace: &str, checks: &[ReplayCheck]) -> Result<ReplayReport, SimError> {
    let (header, records) = parse_trace(trace)?;
    let mut warnings = Vec::new();
    if records.is_empty() {
        warnings.push("trace has no events; every check passes vacuously".into());
    }
    let results = checks
        .iter()
        .map(|&check| {
            let outcome = match check {
                ReplayCheck::EnergyConservation => check_energy(&records),
                ReplayCheck::SequenceMonotonic => check_sequences(&records),
                ReplayCheck::NonceUnique => check_nonces(&records),
                ReplayCheck::CanaryAbsent => check_canary(&header.meta, &records, &mut warnings),
                ReplayCheck::TimeOrder => check_time(&records),
            };
            match outcome {
                Ok(checked) => CheckResult { check, passed: true, checked, line: None, failure: None },
                Err((line, msg)) => CheckResult { check, passed: false, checked: 0, line, failure: Some(msg) },
            }
        })
        .collect();
    Ok(ReplayReport { results, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "#openhealth-trace v1\tlocal_processing=true\n";

    fn energy_line(t: i64, before: f64, after: f64, harvested: f64, consumed: f64) -> String {
        format!(
            "{t}\tENERGY\tdev:1\tt0=0\tbefore={before}\tafter={after}\tharvested={harvested}\tconsumed={consumed}\tloss=0\tspilled=0\tunmet=0\n"
        )
    }

    #[test]
    fn empty_trace_passes_with_warning() {
        let rep = replay(HEAD, &ReplayCheck::ALL).unwrap();
        assert!(rep.passed());
        assert!(rep.warnings.iter().any(|w| w.contains("no events")));
    }

    #[test]
    fn energy_tamper_names_the_line() {
        let mut t = format!("{HEAD}0\tSTART\tdev:1\tbattery_mwh=10\tcapacity_mwh=20\n");
        t += &energy_line(60_000, 10.0, 9.5, 0.0, 0.5);
        t += &energy_line(120_000, 9.5, 9.4, 0.0, 0.5);
        let rep = replay(&t, &[ReplayCheck::EnergyConservation]).unwrap();
        let r = rep.result(ReplayCheck::EnergyConservation).unwrap();
        assert!(!r.passed);
        assert_eq!(r.line, Some(4));
    }

    #[test]
    fn energy_gap_between_lines() {
        let mut t = format!("{HEAD}0\tSTART\tdev:1\tbattery_mwh=10\tcapacity_mwh=20\n");
        t += &energy_line(60_000, 10.0, 9.5, 0.0, 0.5);
        t += &energy_line(120_000, 9.0, 8.5, 0.0, 0.5);
        let rep = replay(&t, &[ReplayCheck::EnergyConservation]).unwrap();
        assert_eq!(rep.results[0].line, Some(4));
    }

    #[test]
    fn version_mismatch_is_an_error() {
        assert!(matches!(
            replay("#openhealth-trace v9\n", &ReplayCheck::ALL),
            Err(SimError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn time_going_backwards() {
        let t = format!("{HEAD}5\tX\thost\n4\tX\thost\n");
        let rep = replay(&t, &[ReplayCheck::TimeOrder]).unwrap();
        assert_eq!(rep.results[0].line, Some(3));
    }
}
