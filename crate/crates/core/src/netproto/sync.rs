//! Two-timestamp clock synchronization.
//!
//! The device sends a request at its local time `t1`, the host stamps
//! receipt `t2` and reply `t3` on its clock, and the device receives the
//! reply at local `t4`. The estimate is of host clock minus device clock;
//! with equal up and down latency it is exact, otherwise it is off by half
//! the difference.

use serde::{Deserialize, Serialize};

/// Host clock minus device clock.
pub fn estimate_offset(t1: i64, t2: i64, t3: i64, t4: i64) -> f64 {
    ((t2 - t1) + (t3 - t4)) as f64 / 2.0
}

/// Time the exchange spent on the air.
pub fn round_trip_ms(t1: i64, t2: i64, t3: i64, t4: i64) -> i64 {
    (t4 - t1) - (t3 - t2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    pub interval_ms: i64,
    /// How long to wait for a response before retrying.
    pub timeout_ms: i64,
    pub max_retries: u32,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig { interval_ms: 600_000, timeout_ms: 1_000, max_retries: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyncOutcome {
    /// Send (or resend) a request stamped `t1`.
    Send { t1: i64 },
    /// Retries exhausted.
    Timeout,
}

/// Device-side synchronization state.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncState {
    pub offset_ms: Option<f64>,
    pub last_rtt_ms: Option<i64>,
    pub interval_ms: i64,
    config: SyncConfig,
    pending_t1: Option<i64>,
    attempts: u32,
}

impl SyncState {
    pub fn new(config: SyncConfig) -> Self {
        SyncState {
            offset_ms: None,
            last_rtt_ms: None,
            interval_ms: config.interval_ms,
            config,
            pending_t1: None,
            attempts: 0,
        }
    }

    pub fn pending(&self) -> Option<i64> {
        self.pending_t1
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    /// Starts an exchange at device time `now`.
    pub fn start(&mut self, now: i64) -> SyncOutcome {
        self.attempts = 1;
        self.pending_t1 = Some(now);
        SyncOutcome::Send { t1: now }
    }

    /// No response within the timeout: retry or give up.
    pub fn on_timeout(&mut self, now: i64) -> SyncOutcome {
        if self.attempts > self.config.max_retries {
            self.pending_t1 = None;
            self.attempts = 0;
            SyncOutcome::Timeout
        } else {
            self.attempts += 1;
            self.pending_t1 = Some(now);
            SyncOutcome::Send { t1: now }
        }
    }

    /// Consumes a response. Responses to anything but the pending request
    /// are ignored.
    pub fn on_response(&mut self, t1: i64, t2: i64, t3: i64, t4: i64) -> Option<f64> {
        if self.pending_t1 != Some(t1) {
            return None;
        }
        self.pending_t1 = None;
        self.attempts = 0;
        let offset = estimate_offset(t1, t2, t3, t4);
        self.offset_ms = Some(offset);
        self.last_rtt_ms = Some(round_trip_ms(t1, t2, t3, t4));
        Some(offset)
    }
}
