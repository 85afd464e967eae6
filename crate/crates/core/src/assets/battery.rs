use serde::{Deserialize, Serialize};

use super::AssetError;
use crate::domain::PowerKw;

/// Residential battery parameters.
///
/// The non-ideal variant adds a linear charge taper above `taper_start_soc`
/// and Gaussian tracking noise on the delivered power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryParams {
    pub capacity_kwh: f64,
    /// Inverter limit, both directions.
    pub p_max_kw: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub taper_start_soc: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Ideal batteries have neither taper nor tracking noise.
    pub ideal: bool,
    pub tracking_noise_std_kw: f64,
    /// Ablation switch for the taper of a non-ideal battery.
    pub charge_taper: bool,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            capacity_kwh: 10.0,
            p_max_kw: 2.5,
            eta_charge: 0.95,
            eta_discharge: 0.95,
            taper_start_soc: 0.8,
            soc_min: 0.05,
            soc_max: 1.0,
            ideal: false,
            tracking_noise_std_kw: 0.05,
            charge_taper: true,
        }
    }
}

impl BatteryParams {
    /// Defaults with non-idealities switched off.
    pub fn ideal() -> Self {
        Self {
            ideal: true,
            ..Self::default()
        }
    }

    pub fn as_ideal(&self) -> Self {
        Self {
            ideal: true,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), AssetError> {
        let bad = |m: &str| Err(AssetError::Params(m.to_string()));
        let finite = [
            self.capacity_kwh,
            self.p_max_kw,
            self.eta_charge,
            self.eta_discharge,
            self.taper_start_soc,
            self.soc_min,
            self.soc_max,
            self.tracking_noise_std_kw,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite battery parameter");
        }
        if self.capacity_kwh <= 0.0 {
            return bad("capacity_kwh must be > 0");
        }
        if self.p_max_kw <= 0.0 {
            return bad("p_max_kw must be > 0");
        }
        if !(self.eta_charge > 0.0 && self.eta_charge <= 1.0) {
            return bad("eta_charge must be in (0,1]");
        }
        if !(self.eta_discharge > 0.0 && self.eta_discharge <= 1.0) {
            return bad("eta_discharge must be in (0,1]");
        }
        if !(self.taper_start_soc > 0.0 && self.taper_start_soc < 1.0) {
            return bad("taper_start_soc must be in (0,1)");
        }
        if !(0.0..1.0).contains(&self.soc_min) || !(self.soc_max > 0.0 && self.soc_max <= 1.0) {
            return bad("soc bounds must satisfy 0 <= soc_min < 1, 0 < soc_max <= 1");
        }
        if self.soc_min >= self.soc_max {
            return bad("soc_min must be < soc_max");
        }
        if self.taper_start_soc >= self.soc_max {
            return bad("taper_start_soc must be < soc_max");
        }
        if self.tracking_noise_std_kw < 0.0 {
            return bad("tracking_noise_std_kw must be >= 0");
        }
        Ok(())
    }

    fn tapers(&self) -> bool {
        !self.ideal && self.charge_taper
    }

    fn noisy(&self) -> bool {
        !self.ideal && self.tracking_noise_std_kw > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc: f64,
    pub last_delivered_kw: PowerKw,
}

impl BatteryState {
    pub fn at(soc: f64) -> Self {
        Self {
            soc,
            last_delivered_kw: PowerKw::ZERO,
        }
    }
}

/// Charging power the battery accepts at `soc`.
pub fn battery_available_charge_kw(params: &BatteryParams, soc: f64) -> PowerKw {
    if soc >= params.soc_max {
        return PowerKw::ZERO;
    }
    if params.tapers() && soc > params.taper_start_soc {
        let frac = (params.soc_max - soc) / (params.soc_max - params.taper_start_soc);
        return PowerKw(params.p_max_kw * frac.clamp(0.0, 1.0));
    }
    PowerKw(params.p_max_kw)
}

/// Discharging power magnitude available at `soc` (hard cutoff at `soc_min`).
pub fn battery_available_discharge_kw(params: &BatteryParams, soc: f64) -> PowerKw {
    if soc <= params.soc_min {
        PowerKw::ZERO
    } else {
        PowerKw(params.p_max_kw)
    }
}

/// Advances the battery by `dt_h` hours under `setpoint`.
///
/// Returns the new state and the AC power actually exchanged. Delivered
/// power is curtailed so that the state of charge lands inside
/// `[soc_min, soc_max]` without discarding stored energy.
pub fn battery_step(
    params: &BatteryParams,
    state: &BatteryState,
    setpoint: PowerKw,
    dt_h: f64,
    noise_draw: f64,
) -> Result<(BatteryState, PowerKw), AssetError> {
    if !setpoint.0.is_finite() {
        return Err(AssetError::Argument(format!(
            "non-finite setpoint {}",
            setpoint.0
        )));
    }
    if !(dt_h > 0.0 && dt_h.is_finite()) {
        return Err(AssetError::Argument(format!(
            "dt_h must be > 0, got {dt_h}"
        )));
    }
    let soc = state.soc;
    let cap = params.capacity_kwh;

    let delivered = if setpoint.0 > 0.0 {
        let avail = battery_available_charge_kw(params, soc).0;
        let mut p = setpoint.0.min(avail);
        if params.noisy() && p > 0.0 {
            p = (p + params.tracking_noise_std_kw * noise_draw).clamp(0.0, avail);
        }
        let headroom = ((params.soc_max - soc) * cap / (params.eta_charge * dt_h)).max(0.0);
        p.min(headroom)
    } else if setpoint.0 < 0.0 {
        let avail = battery_available_discharge_kw(params, soc).0;
        let mut p = (-setpoint.0).min(avail);
        if params.noisy() && p > 0.0 {
            p = (p - params.tracking_noise_std_kw * noise_draw).clamp(0.0, avail);
        }
        let headroom = ((soc - params.soc_min) * cap * params.eta_discharge / dt_h).max(0.0);
        -p.min(headroom)
    } else {
        0.0
    };

    let next_soc = if delivered > 0.0 {
        soc + params.eta_charge * delivered * dt_h / cap
    } else if delivered < 0.0 {
        soc - (-delivered) * dt_h / (params.eta_discharge * cap)
    } else {
        soc
    };

    let next = BatteryState {
        soc: next_soc.clamp(params.soc_min, params.soc_max),
        last_delivered_kw: PowerKw(delivered),
    };
    Ok((next, PowerKw(delivered)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::domain::Seed;

    fn full_range() -> BatteryParams {
        BatteryParams {
            soc_max: 1.0,
            ..BatteryParams::default()
        }
    }

    #[test]
    fn available_charge_examples() {
        let p = full_range();
        assert_eq!(battery_available_charge_kw(&p, 0.5).0, 2.5);
        assert!((battery_available_charge_kw(&p, 0.95).0 - 0.625).abs() < 1e-12);
        assert_eq!(battery_available_charge_kw(&p, 1.0).0, 0.0);

        let ideal = p.as_ideal();
        assert_eq!(battery_available_charge_kw(&ideal, 0.95).0, 2.5);
        assert_eq!(battery_available_charge_kw(&ideal, 1.0).0, 0.0);
    }

    #[test]
    fn ideal_step_closed_form() {
        let p = BatteryParams::ideal();
        let (s, d) = battery_step(&p, &BatteryState::at(0.5), PowerKw(1.0), 0.25, 0.0).unwrap();
        assert_eq!(d.0, 1.0);
        assert!((s.soc - 0.52375).abs() < 1e-15);
    }

    #[test]
    fn idle_is_identity() {
        let p = BatteryParams::ideal();
        let st = BatteryState::at(0.42);
        let (s, d) = battery_step(&p, &st, PowerKw::ZERO, 0.25, 3.0).unwrap();
        assert_eq!(d.0, 0.0);
        assert_eq!(s.soc, 0.42);
        let (s, d) =
            battery_step(&BatteryParams::default(), &st, PowerKw::ZERO, 0.25, 3.0).unwrap();
        assert_eq!((s.soc, d.0), (0.42, 0.0));
    }

    #[test]
    fn taper_delivers_below_setpoint() {
        let p = BatteryParams::default();
        let (_, d) = battery_step(&p, &BatteryState::at(0.95), PowerKw(1.0), 0.25, 0.0).unwrap();
        assert!((d.0 - 0.625).abs() < 1e-12);
    }

    #[test]
    fn taper_ablation_keeps_full_power() {
        let p = BatteryParams {
            charge_taper: false,
            ..BatteryParams::default()
        };
        let (_, d) = battery_step(&p, &BatteryState::at(0.95), PowerKw(1.0), 0.01, 0.0).unwrap();
        assert_eq!(d.0, 1.0);
    }

    #[test]
    fn noise_never_flips_sign() {
        let p = BatteryParams {
            tracking_noise_std_kw: 5.0,
            ..BatteryParams::default()
        };
        let (_, d) = battery_step(&p, &BatteryState::at(0.5), PowerKw(1.0), 0.25, -3.0).unwrap();
        assert_eq!(d.0, 0.0);
        let (_, d) = battery_step(&p, &BatteryState::at(0.5), PowerKw(-1.0), 0.25, 3.0).unwrap();
        assert_eq!(d.0, 0.0);
        let (_, d) = battery_step(&p, &BatteryState::at(0.5), PowerKw(1.0), 0.25, 3.0).unwrap();
        assert_eq!(d.0, 2.5);
    }

    #[test]
    fn curtails_at_soc_max_instead_of_wasting_energy() {
        let p = BatteryParams::ideal();
        let (s, d) = battery_step(&p, &BatteryState::at(0.99), PowerKw(2.5), 1.0, 0.0).unwrap();
        assert!((s.soc - 1.0).abs() < 1e-12);
        assert!((d.0 - 0.1 / 0.95).abs() < 1e-12);
    }

    #[test]
    fn discharge_hard_cutoff_at_soc_min() {
        let p = BatteryParams::ideal();
        let (s, d) = battery_step(&p, &BatteryState::at(0.05), PowerKw(-1.0), 0.25, 0.0).unwrap();
        assert_eq!((s.soc, d.0), (0.05, 0.0));
    }

    #[test]
    fn rejects_non_finite_setpoint() {
        let p = BatteryParams::ideal();
        assert!(battery_step(&p, &BatteryState::at(0.5), PowerKw(f64::NAN), 0.25, 0.0).is_err());
        assert!(battery_step(&p, &BatteryState::at(0.5), PowerKw(1.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn validate_catches_inverted_bounds() {
        let p = BatteryParams {
            soc_min: 0.9,
            soc_max: 0.5,
            ..BatteryParams::default()
        };
        assert!(p.validate().is_err());
        assert!(BatteryParams::default().validate().is_ok());
    }

    #[test]
    fn fuzz_soc_stays_in_bounds_and_energy_closes() {
        let p = BatteryParams::default();
        let mut rng = Seed(7).rng();
        let mut st = BatteryState::at(0.5);
        let (mut e_in, mut e_out) = (0.0, 0.0);
        let dt = 0.25;
        for _ in 0..10_000 {
            let sp = rng.gen_range(-4.0..4.0);
            let z: f64 = rng.sample(StandardNormal);
            let (next, d) = battery_step(&p, &st, PowerKw(sp), dt, z).unwrap();
            assert!(next.soc >= p.soc_min && next.soc <= p.soc_max);
            if d.0 > 0.0 {
                e_in += p.eta_charge * d.0 * dt;
            } else {
                e_out += -d.0 * dt / p.eta_discharge;
            }
            st = next;
        }
        let stored = (st.soc - 0.5) * p.capacity_kwh;
        let booked = e_in - e_out;
        assert!((stored - booked).abs() <= 1e-9 * e_in.max(e_out));
    }

    proptest! {
        #[test]
        fn available_charge_non_increasing(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let p = BatteryParams::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(battery_available_charge_kw(&p, hi).0 <= battery_available_charge_kw(&p, lo).0);
        }

        #[test]
        fn ideal_tracks_interior_setpoints(soc in 0.3f64..0.7, sp in -2.5f64..2.5) {
            let p = BatteryParams::ideal();
            let (_, d) = battery_step(&p, &BatteryState::at(soc), PowerKw(sp), 0.25, 0.0).unwrap();
            prop_assert_eq!(d.0, sp);
        }
    }
}
