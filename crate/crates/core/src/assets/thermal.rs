use serde::{Deserialize, Serialize};

use super::AssetError;

/// First-order RC room heated by an on/off heat pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalParams {
    /// RC time constant in hours.
    pub tau_h: f64,
    /// Temperature rise rate (Q/C) while the heater runs, K/h.
    pub heat_rate_k_per_h: f64,
    pub t_ambient_c: f64,
    /// Half-width of the thermostat dead band.
    pub hysteresis_c: f64,
    pub setpoint_c: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            tau_h: 20.0,
            heat_rate_k_per_h: 2.0,
            t_ambient_c: 8.0,
            hysteresis_c: 0.5,
            setpoint_c: 20.0,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<(), AssetError> {
        if !(self.tau_h > 0.0 && self.tau_h.is_finite()) {
            return Err(AssetError::Params("tau_h must be > 0".into()));
        }
        if !(self.heat_rate_k_per_h > 0.0 && self.heat_rate_k_per_h.is_finite()) {
            return Err(AssetError::Params("heat_rate_k_per_h must be > 0".into()));
        }
        if !(self.hysteresis_c > 0.0 && self.hysteresis_c < 5.0) {
            return Err(AssetError::Params("hysteresis_c must be in (0,5)".into()));
        }
        if !self.t_ambient_c.is_finite() || !self.setpoint_c.is_finite() {
            return Err(AssetError::Params("non-finite temperature".into()));
        }
        Ok(())
    }

    /// Largest per-step overshoot past the dead band for step `dt_h`.
    pub fn overshoot_bound(&self, dt_h: f64) -> f64 {
        dt_h * self
            .heat_rate_k_per_h
            .max((self.setpoint_c - self.t_ambient_c) / self.tau_h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub temp_c: f64,
    pub heater_on: bool,
}

/// One explicit-Euler step followed by the hysteresis switch.
pub fn thermal_step(
    params: &ThermalParams,
    state: &ThermalState,
    dt_h: f64,
) -> Result<ThermalState, AssetError> {
    if !(dt_h > 0.0 && dt_h <= params.tau_h / 4.0) {
        return Err(AssetError::Argument(format!(
            "dt_h {dt_h} outside (0, tau/4 = {}]",
            params.tau_h / 4.0
        )));
    }
    let heating = if state.heater_on {
        params.heat_rate_k_per_h
    } else {
        0.0
    };
    let temp = state.temp_c + dt_h * ((params.t_ambient_c - state.temp_c) / params.tau_h + heating);
    if !(-30.0..=60.0).contains(&temp) {
        return Err(AssetError::Argument(format!(
            "room temperature {temp} °C left [-30, 60]"
        )));
    }
    let heater_on = if temp < params.setpoint_c - params.hysteresis_c {
        true
    } else if temp > params.setpoint_c + params.hysteresis_c {
        false
    } else {
        state.heater_on
    };
    Ok(ThermalState {
        temp_c: temp,
        heater_on,
    })
}
