//! Proportional duty-cycle allocator for energy-neutral operation.
//!
//! Each hour slot gets the active fraction its own forecast can pay for on
//! top of the sleep floor, and one global factor (never above 1) scales the
//! plan down until the day fits the forecast plus the battery above reserve.

use serde::Serialize;

use super::{EnergyConfig, EnergyState, HarvestProfile};
use crate::types::{App, DeviceProfile};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DutyPlan {
    pub fractions: [f64; 24],
    /// Forecast harvest plus usable battery, mWh.
    pub budget_mwh: f64,
    /// Consumption if every slot runs its full fraction, mWh.
    pub planned_mwh: f64,
    /// Per-slot planned consumption, mWh.
    pub slot_mwh: [f64; 24],
}

impl DutyPlan {
    /// Active milliseconds allowed in `slot`.
    pub fn allowance_ms(&self, slot: usize) -> u64 {
        (self.fractions[slot] * 3_600_000.0).floor() as u64
    }

    pub fn within_budget(&self) -> bool {
        self.planned_mwh <= self.budget_mwh + 1e-9
    }
}

/// Worst-case power of an awake device: the larger of the app's active
/// power and the radio's transmit power.
pub fn awake_power_mw(profile: &DeviceProfile, app: App) -> f64 {
    profile.active_power_mw(app).max(profile.p_tx_mw)
}

/// Plans one day. `forecast` is raw harvest power (MPPT losses are applied
/// here). With an all-zero forecast every slot is weighted equally and the
/// plan is funded by the battery above reserve alone.
pub fn plan_duty_cycle(
    forecast: &HarvestProfile,
    profile: &DeviceProfile,
    app: App,
    energy: &EnergyState,
    config: &EnergyConfig,
) -> DutyPlan {
    let p_sleep = profile.p_sleep_mw;
    let p_awake = awake_power_mw(profile, app);
    let span = (p_awake - p_sleep).max(f64::MIN_POSITIVE);
    let delivered: Vec<f64> = forecast
        .slots()
        .iter()
        .map(|p| p * energy.mppt_efficiency)
        .collect();

    let total_forecast: f64 = delivered.iter().sum();
    let mut base = [0.0; 24];
    for (b, f) in base.iter_mut().zip(&delivered) {
        *b = if total_forecast > 0.0 {
            ((f - p_sleep) / span).clamp(0.0, 1.0)
        } else {
            1.0
        };
    }

    let reserve = config.reserve_fraction * energy.capacity_mwh;
    let usable_battery = (energy.battery_mwh - reserve).max(0.0) * energy.discharge_efficiency;
    let budget = total_forecast + usable_battery;
    let spare = budget - 24.0 * p_sleep;
    let wanted: f64 = base.iter().map(|b| b * span).sum();
    let g = if wanted > 0.0 { (spare / wanted).clamp(0.0, 1.0) } else { 0.0 };

    let mut fractions = [0.0; 24];
    let mut slot_mwh = [0.0; 24];
    for s in 0..24 {
        fractions[s] = base[s] * g;
        slot_mwh[s] = p_sleep + fractions[s] * span;
    }
    DutyPlan {
        fractions,
        budget_mwh: budget,
        planned_mwh: slot_mwh.iter().sum(),
        slot_mwh,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn energy(battery: f64, config: &EnergyConfig) -> EnergyState {
        let mut e = EnergyState::new(config);
        e.battery_mwh = battery;
        e
    }

    fn unit_config() -> EnergyConfig {
        EnergyConfig {
            capacity_mwh: 1000.0,
            mppt_efficiency: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn forecast_equal_to_active_cost_gives_full_duty() {
        let profile = DeviceProfile::default();
        let cfg = unit_config();
        let forecast = HarvestProfile::constant(awake_power_mw(&profile, App::Har));
        let plan = plan_duty_cycle(&forecast, &profile, App::Har, &energy(200.0, &cfg), &cfg);
        assert!(plan.fractions.iter().all(|&f| f == 1.0));
        assert!(plan.within_budget());
    }

    #[test]
    fn zero_forecast_at_reserve_gives_zero_duty() {
        let profile = DeviceProfile::default();
        let cfg = unit_config();
        let plan = plan_duty_cycle(&HarvestProfile::constant(0.0), &profile, App::Har, &energy(200.0, &cfg), &cfg);
        assert!(plan.fractions.iter().all(|&f| f == 0.0));
        // The sleep floor alone is left, and nothing pays for it.
        assert_eq!(plan.budget_mwh, 0.0);
        assert!((plan.planned_mwh - 24.0 * profile.p_sleep_mw).abs() < 1e-12);
    }

    #[test]
    fn zero_forecast_is_funded_by_battery_above_reserve() {
        let profile = DeviceProfile::default();
        let cfg = unit_config();
        let plan = plan_duty_cycle(&HarvestProfile::constant(0.0), &profile, App::Har, &energy(300.0, &cfg), &cfg);
        let f0 = plan.fractions[0];
        assert!(f0 > 0.0 && f0 < 1.0);
        assert!(plan.fractions.iter().all(|&f| f == f0));
        assert!((plan.planned_mwh - 100.0).abs() < 1e-9);
    }

    #[test]
    fn half_forecast_with_full_battery() {
        let profile = DeviceProfile::default();
        let cfg = unit_config();
        let p = awake_power_mw(&profile, App::Har);
        let forecast = HarvestProfile::constant(p / 2.0);
        let e = energy(1000.0, &cfg);
        let plan = plan_duty_cycle(&forecast, &profile, App::Har, &e, &cfg);
        assert!(plan.fractions.iter().all(|&f| f > 0.0 && f < 1.0));

        // Direct summation of slot energies against the budget.
        let consumption: f64 = plan
            .fractions
            .iter()
            .map(|f| f * p + (1.0 - f) * profile.p_sleep_mw)
            .sum();
        let budget = 24.0 * p / 2.0 + (1000.0 - 0.2 * 1000.0);
        assert!(consumption <= budget);
        assert!((consumption - plan.planned_mwh).abs() < 1e-9);
    }

    #[test]
    fn slots_with_forecast_cover_their_plan() {
        let profile = DeviceProfile::default();
        let cfg = unit_config();
        let forecast = HarvestProfile::daylight(30.0);
        let plan = plan_duty_cycle(&forecast, &profile, App::Har, &energy(200.0, &cfg), &cfg);
        for s in 0..24 {
            let f = forecast.slots()[s];
            if f >= profile.p_sleep_mw {
                assert!(plan.slot_mwh[s] <= f + 1e-12, "slot {s}");
            }
        }
        assert!(plan.within_budget() || plan.fractions.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn fractions_in_range_for_random_inputs() {
        use rand::{Rng, SeedableRng};
        let profile = DeviceProfile::default();
        let cfg = unit_config();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let slots: [f64; 24] = std::array::from_fn(|_| rng.gen_range(0.0..40.0));
            let e = energy(rng.gen_range(0.0..1000.0), &cfg);
            let plan = plan_duty_cycle(&HarvestProfile::new(slots).unwrap(), &profile, App::Gesture, &e, &cfg);
            assert!(plan.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
            if plan.budget_mwh >= 24.0 * profile.p_sleep_mw {
                assert!(plan.within_budget());
            }
        }
    }
}
