//! Wearable node model: power states, wake-on-motion, energy harvesting and
//! allocation, and the SRAM/flash ledger.

mod energy;
mod memory;
mod planner;
mod state;

use thiserror::Error;

pub use energy::{
    account_energy, Dwell, EnergyConfig, EnergyDelta, EnergyState, HarvestProfile, HOUR_MS,
};
pub use memory::{memory_footprint, MemoryLedger, CODE_RESERVE_BYTES, STACK_RESERVE_BYTES};
pub use planner::{awake_power_mw, plan_duty_cycle, DutyPlan};
pub use state::{motion_detector, step_state_machine, Action, DeviceEvent, PowerState, Transition};

/// Default wake threshold on the deviation of |accel| from 1 g.
pub const DEFAULT_MOTION_THRESHOLD_G: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum FirmwareError {
    #[error("{budget} budget exceeded: {used} bytes used, {limit} available")]
    Budget {
        budget: &'static str,
        used: usize,
        limit: usize,
    },
    #[error("energy config: {0}")]
    Energy(String),
    #[error("harvest profile needs 24 slots, got {0}")]
    HarvestSlots(usize),
}
