use serde::{Deserialize, Serialize};

use super::{FirmwareError, PowerState};
use crate::types::{App, DeviceProfile};

pub const HOUR_MS: i64 = 3_600_000;

/// Harvested electrical power before MPPT losses, one constant value per
/// hour of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HarvestProfile {
    slots_mw: [f64; 24],
}

impl TryFrom<Vec<f64>> for HarvestProfile {
    type Error = FirmwareError;

    fn try_from(v: Vec<f64>) -> Result<Self, FirmwareError> {
        let slots_mw: [f64; 24] = v
            .try_into()
            .map_err(|v: Vec<f64>| FirmwareError::HarvestSlots(v.len()))?;
        HarvestProfile::new(slots_mw)
    }
}

impl From<HarvestProfile> for Vec<f64> {
    fn from(p: HarvestProfile) -> Vec<f64> {
        p.slots_mw.to_vec()
    }
}

impl Default for HarvestProfile {
    /// Half-sine daylight curve between 06:00 and 18:00 peaking at 30 mW,
    /// over a 2 mW indoor-light floor.
    fn default() -> Self {
        HarvestProfile::daylight(30.0).with_floor(2.0)
    }
}

impl HarvestProfile {
    pub fn new(slots_mw: [f64; 24]) -> Result<Self, FirmwareError> {
        if let Some(bad) = slots_mw.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(FirmwareError::Energy(format!("harvest power {bad} must be finite and >= 0")));
        }
        Ok(HarvestProfile { slots_mw })
    }

    pub fn constant(mw: f64) -> Self {
        HarvestProfile { slots_mw: [mw.max(0.0); 24] }
    }

    pub fn daylight(peak_mw: f64) -> Self {
        let mut slots_mw = [0.0; 24];
        for (h, p) in slots_mw.iter_mut().enumerate() {
            let phase = (h as f64 + 0.5 - 6.0) / 12.0;
            if (0.0..=1.0).contains(&phase) {
                *p = (peak_mw * (std::f64::consts::PI * phase).sin()).max(0.0);
            }
        }
        HarvestProfile { slots_mw }
    }

    /// Raises every slot to at least `floor_mw`.
    pub fn with_floor(mut self, floor_mw: f64) -> Self {
        for p in &mut self.slots_mw {
            *p = p.max(floor_mw.max(0.0));
        }
        self
    }

    pub fn slots(&self) -> &[f64; 24] {
        &self.slots_mw
    }

    pub fn slot_of(t_ms: i64) -> usize {
        t_ms.div_euclid(HOUR_MS).rem_euclid(24) as usize
    }

    pub fn power_at(&self, t_ms: i64) -> f64 {
        self.slots_mw[Self::slot_of(t_ms)]
    }

    /// Exact integral of the piecewise-constant profile over `[t0, t1)`, mWh.
    pub fn energy_mwh(&self, t0_ms: i64, t1_ms: i64) -> f64 {
        let mut t = t0_ms;
        let mut total = 0.0;
        while t < t1_ms {
            let slot_end = (t.div_euclid(HOUR_MS) + 1) * HOUR_MS;
            let end = slot_end.min(t1_ms);
            total += self.power_at(t) * (end - t) as f64 / HOUR_MS as f64;
            t = end;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub capacity_mwh: f64,
    /// Initial charge as a fraction of capacity.
    pub initial_fraction: f64,
    pub mppt_efficiency: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    /// Charge the duty planner never spends, as a fraction of capacity.
    pub reserve_fraction: f64,
    /// A depleted device stays asleep until the battery is back above this
    /// fraction of capacity.
    pub recover_fraction: f64,
    pub harvest_mw: HarvestProfile,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            // 100 mAh at 3.7 V.
            capacity_mwh: 370.0,
            initial_fraction: 0.5,
            mppt_efficiency: 0.95,
            charge_efficiency: 1.0,
            discharge_efficiency: 1.0,
            reserve_fraction: 0.2,
            recover_fraction: 0.05,
            harvest_mw: HarvestProfile::default(),
        }
    }
}

impl EnergyConfig {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.capacity_mwh.is_finite() && self.capacity_mwh > 0.0) {
            out.push("energy.capacity_mwh must be > 0".to_string());
        }
        let unit_open = [
            ("mppt_efficiency", self.mppt_efficiency),
            ("charge_efficiency", self.charge_efficiency),
            ("discharge_efficiency", self.discharge_efficiency),
        ];
        for (name, v) in unit_open {
            if !(v > 0.0 && v <= 1.0) {
                out.push(format!("energy.{name} must be in (0, 1]"));
            }
        }
        let unit_closed = [
            ("initial_fraction", self.initial_fraction),
            ("reserve_fraction", self.reserve_fraction),
            ("recover_fraction", self.recover_fraction),
        ];
        for (name, v) in unit_closed {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("energy.{name} must be in [0, 1]"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), FirmwareError> {
        match self.violations().first() {
            Some(v) => Err(FirmwareError::Energy(v.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyState {
    pub battery_mwh: f64,
    pub capacity_mwh: f64,
    pub mppt_efficiency: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub recover_fraction: f64,
    pub harvest: HarvestProfile,
    pub depleted: bool,
}

impl EnergyState {
    pub fn new(config: &EnergyConfig) -> Self {
        EnergyState {
            battery_mwh: config.capacity_mwh * config.initial_fraction,
            capacity_mwh: config.capacity_mwh,
            mppt_efficiency: config.mppt_efficiency,
            charge_efficiency: config.charge_efficiency,
            discharge_efficiency: config.discharge_efficiency,
            recover_fraction: config.recover_fraction,
            harvest: config.harvest_mw.clone(),
            depleted: false,
        }
    }
}

/// Time spent in each power state since the last accounting, plus radio
/// bursts sent outside the Transmitting state (alert retries, sync).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dwell {
    pub ms: [u64; 4],
    pub burst_mwh: f64,
}

impl Dwell {
    pub fn add(&mut self, state: PowerState, ms: u64) {
        self.ms[state.index()] += ms;
    }

    pub fn total_ms(&self) -> u64 {
        self.ms.iter().sum()
    }

    pub fn consumption_mwh(&self, profile: &DeviceProfile, app: App) -> f64 {
        let power = |s: PowerState| match s {
            PowerState::Sleep => profile.p_sleep_mw,
            PowerState::Sampling | PowerState::Processing => profile.active_power_mw(app),
            PowerState::Transmitting => profile.p_tx_mw,
        };
        PowerState::ALL
            .iter()
            .map(|&s| power(s) * self.ms[s.index()] as f64 / HOUR_MS as f64)
            .sum::<f64>()
            + self.burst_mwh
    }
}

/// One accounting step. The battery moves by exactly
/// `harvested - consumed - loss - spilled + unmet`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDelta {
    pub t0_ms: i64,
    pub t1_ms: i64,
    pub before_mwh: f64,
    pub after_mwh: f64,
    /// Delivered by the MPPT charger.
    pub harvested_mwh: f64,
    pub consumed_mwh: f64,
    /// Charge/discharge conversion losses.
    pub loss_mwh: f64,
    /// Surplus discarded at full charge.
    pub spilled_mwh: f64,
    /// Demand the empty battery could not supply.
    pub unmet_mwh: f64,
    pub depleted_now: bool,
    pub restored_now: bool,
}

impl EnergyDelta {
    pub fn balance_mwh(&self) -> f64 {
        self.harvested_mwh - self.consumed_mwh - self.loss_mwh - self.spilled_mwh + self.unmet_mwh
    }
}

/// Integrates harvest and consumption over the dwell period starting at
/// `t0_ms` and updates the battery, clamped to `[0, capacity]`.
pub fn account_energy(
    dwell: &Dwell,
    profile: &DeviceProfile,
    app: App,
    energy: &mut EnergyState,
    t0_ms: i64,
) -> EnergyDelta {
    let t1_ms = t0_ms + dwell.total_ms() as i64;
    let harvested = energy.mppt_efficiency * energy.harvest.energy_mwh(t0_ms, t1_ms);
    let consumed = dwell.consumption_mwh(profile, app);
    let net = harvested - consumed;
    let before = energy.battery_mwh;

    let (mut spilled, mut unmet) = (0.0, 0.0);
    let (after, loss) = if net >= 0.0 {
        let stored = net * energy.charge_efficiency;
        let raw = before + stored;
        if raw > energy.capacity_mwh {
            spilled = raw - energy.capacity_mwh;
            (energy.capacity_mwh, net - stored)
        } else {
            (raw, net - stored)
        }
    } else {
        let draw = -net / energy.discharge_efficiency;
        let raw = before - draw;
        if raw < 0.0 {
            unmet = -raw;
            (0.0, draw + net)
        } else {
            (raw, draw + net)
        }
    };
    energy.battery_mwh = after;

    let mut depleted_now = false;
    let mut restored_now = false;
    if !energy.depleted && after <= 0.0 && consumed > 0.0 {
        energy.depleted = true;
        depleted_now = true;
    } else if energy.depleted && after >= energy.recover_fraction * energy.capacity_mwh {
        energy.depleted = false;
        restored_now = true;
    }

    EnergyDelta {
        t0_ms,
        t1_ms,
        before_mwh: before,
        after_mwh: after,
        harvested_mwh: harvested,
        consumed_mwh: consumed,
        loss_mwh: loss,
        spilled_mwh: spilled,
        unmet_mwh: unmet,
        depleted_now,
        restored_now,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(battery: f64, capacity: f64, harvest: f64, mppt: f64) -> EnergyState {
        EnergyState::new(&EnergyConfig {
            capacity_mwh: capacity,
            initial_fraction: battery / capacity,
            mppt_efficiency: mppt,
            harvest_mw: HarvestProfile::constant(harvest),
            ..Default::default()
        })
    }

    fn dwell_in(s: PowerState, ms: u64) -> Dwell {
        let mut d = Dwell::default();
        d.add(s, ms);
        d
    }

    #[test]
    fn hour_of_processing_drains_active_power() {
        let profile = DeviceProfile::default();
        for (app, expected) in [(App::Har, 12.5), (App::Gesture, 10.0)] {
            let mut e = state(100.0, 200.0, 0.0, 1.0);
            let d = account_energy(&dwell_in(PowerState::Processing, HOUR_MS as u64), &profile, app, &mut e, 0);
            assert_eq!(d.before_mwh - d.after_mwh, expected);
            assert_eq!(d.consumed_mwh, expected);
        }
    }

    #[test]
    fn balanced_harvest_leaves_battery_unchanged() {
        let profile = DeviceProfile::default();
        let mut e = state(100.0, 200.0, 12.5, 1.0);
        account_energy(&dwell_in(PowerState::Processing, HOUR_MS as u64), &profile, App::Har, &mut e, 0);
        assert_eq!(e.battery_mwh, 100.0);
    }

    #[test]
    fn full_battery_saturates_and_spills() {
        let profile = DeviceProfile::default();
        let mut e = state(200.0, 200.0, 20.0, 1.0);
        let d = account_energy(&dwell_in(PowerState::Sleep, HOUR_MS as u64), &profile, App::Har, &mut e, 0);
        assert_eq!(e.battery_mwh, 200.0);
        assert!((d.spilled_mwh - (20.0 - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn depletion_and_hysteresis() {
        let profile = DeviceProfile::default();
        let mut e = state(1.0, 100.0, 0.0, 1.0);
        let d = account_energy(&dwell_in(PowerState::Processing, HOUR_MS as u64), &profile, App::Har, &mut e, 0);
        assert!(d.depleted_now && e.depleted);
        assert_eq!(e.battery_mwh, 0.0);
        assert!((d.unmet_mwh - 11.5).abs() < 1e-12);

        e.harvest = HarvestProfile::constant(4.3);
        let d = account_energy(&dwell_in(PowerState::Sleep, HOUR_MS as u64), &profile, App::Har, &mut e, 0);
        assert!(!d.restored_now && e.depleted, "4 mWh is below 5% of 100");
        let d = account_energy(&dwell_in(PowerState::Sleep, HOUR_MS as u64), &profile, App::Har, &mut e, 0);
        assert!(d.restored_now && !e.depleted);
    }

    #[test]
    fn harvest_integration_crosses_slot_boundaries() {
        let mut slots = [0.0; 24];
        slots[0] = 10.0;
        slots[1] = 20.0;
        slots[23] = 5.0;
        let p = HarvestProfile::new(slots).unwrap();
        // Last half hour of slot 0 and first quarter of slot 1.
        assert_eq!(p.energy_mwh(HOUR_MS / 2, HOUR_MS + HOUR_MS / 4), 5.0 + 5.0);
        // Wraps into the next day.
        assert_eq!(p.energy_mwh(23 * HOUR_MS, 25 * HOUR_MS), 5.0 + 10.0);
        assert_eq!(HarvestProfile::slot_of(-1), 23);
    }

    #[test]
    fn profile_serde_checks_length() {
        assert!(serde_json::from_str::<HarvestProfile>("[1.0, 2.0]").is_err());
        let json = serde_json::to_string(&HarvestProfile::default()).unwrap();
        assert_eq!(serde_json::from_str::<HarvestProfile>(&json).unwrap(), HarvestProfile::default());
        let negative = format!("[-1.0{}]", ",0.0".repeat(23));
        assert!(serde_json::from_str::<HarvestProfile>(&negative).is_err());
    }

    #[test]
    fn daylight_profile_shape() {
        let p = HarvestProfile::daylight(30.0);
        assert_eq!(p.slots()[0], 0.0);
        assert_eq!(p.slots()[23], 0.0);
        assert!(p.slots()[11] > 29.0 && p.slots()[12] > 29.0);
    }

    #[test]
    fn config_lists_every_violation() {
        let c = EnergyConfig {
            capacity_mwh: -1.0,
            mppt_efficiency: 0.0,
            reserve_fraction: 2.0,
            ..Default::default()
        };
        assert_eq!(c.violations().len(), 3);
        assert!(EnergyConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn battery_stays_in_bounds_and_ledger_balances(
            steps in prop::collection::vec((0usize..4, 1u64..7_200_000, 0.0f64..2.0), 1..60),
            harvest in prop::collection::vec(0.0f64..40.0, 24),
            start in 0.0f64..1.0,
            ce in 0.5f64..1.0,
            de in 0.5f64..1.0,
        ) {
            let profile = DeviceProfile::default();
            let mut e = EnergyState::new(&EnergyConfig {
                capacity_mwh: 50.0,
                initial_fraction: start,
                charge_efficiency: ce,
                discharge_efficiency: de,
                harvest_mw: HarvestProfile::try_from(harvest).unwrap(),
                ..Default::default()
            });
            let start_mwh = e.battery_mwh;
            let mut t = 0;
            let mut sum = 0.0;
            for (s, ms, burst) in steps {
                let mut d = dwell_in(PowerState::ALL[s], ms);
                d.burst_mwh = burst;
                let delta = account_energy(&d, &profile, App::Har, &mut e, t);
                t = delta.t1_ms;
                prop_assert!(e.battery_mwh >= 0.0 && e.battery_mwh <= e.capacity_mwh);
                prop_assert!((delta.after_mwh - delta.before_mwh - delta.balance_mwh()).abs() < 1e-9);
                sum += delta.balance_mwh();
            }
            prop_assert!((e.battery_mwh - start_mwh - sum).abs() < 1e-6);
        }
    }
}
