use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::EnvError;
use crate::assets::{
    battery_step, thermal_step, BatteryParams, BatteryState, ThermalParams, ThermalState, Trace,
};
use crate::domain::{PowerKw, Seed, TimeGrid};

/// Measured state of the assets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackendObservation {
    pub soc: f64,
    /// Mean power exchanged over the last advance.
    pub delivered: PowerKw,
    pub temp_c: f64,
    pub pv: PowerKw,
    pub load: PowerKw,
}

/// Source of asset dynamics behind an environment.
pub trait Backend: Send {
    /// Short label recorded in run manifests.
    fn kind(&self) -> &'static str;

    /// Prepares a new episode on `grid`. Simulated backends move to
    /// `initial_soc`; physical ones leave the device where it is.
    fn reset(&mut self, grid: &TimeGrid, initial_soc: f64, seed: Seed) -> Result<(), EnvError>;

    fn apply_setpoint(&mut self, setpoint: PowerKw) -> Result<(), EnvError>;

    /// Moves to the next grid step.
    fn advance(&mut self) -> Result<(), EnvError>;

    fn observe(&mut self) -> Result<BackendObservation, EnvError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn kind(&self) -> &'static str {
        (**self).kind()
    }
    fn reset(&mut self, grid: &TimeGrid, initial_soc: f64, seed: Seed) -> Result<(), EnvError> {
        (**self).reset(grid, initial_soc, seed)
    }
    fn apply_setpoint(&mut self, setpoint: PowerKw) -> Result<(), EnvError> {
        (**self).apply_setpoint(setpoint)
    }
    fn advance(&mut self) -> Result<(), EnvError> {
        (**self).advance()
    }
    fn observe(&mut self) -> Result<BackendObservation, EnvError> {
        (**self).observe()
    }
}

/// In-process models stepped once per grid step.
#[derive(Debug, Clone)]
pub struct SimBackend {
    battery_params: BatteryParams,
    thermal_params: ThermalParams,
    pv: Option<Trace>,
    load: Option<Trace>,
    initial_temp_c: f64,
    battery: BatteryState,
    thermal: ThermalState,
    setpoint: PowerKw,
    rng: ChaCha8Rng,
    dt_h: f64,
    step_s: u64,
    elapsed_s: u64,
}

impl SimBackend {
    pub fn new(battery: BatteryParams) -> Self {
        Self {
            battery: BatteryState::at(0.5),
            battery_params: battery,
            thermal_params: ThermalParams::default(),
            pv: None,
            load: None,
            initial_temp_c: 18.0,
            thermal: ThermalState {
                temp_c: 18.0,
                heater_on: true,
            },
            setpoint: PowerKw::ZERO,
            rng: Seed(0).rng(),
            dt_h: 0.25,
            step_s: 900,
            elapsed_s: 0,
        }
    }

    pub fn ideal() -> Self {
        Self::new(BatteryParams::ideal())
    }

    pub fn with_thermal(mut self, params: ThermalParams, initial_temp_c: f64) -> Self {
        self.thermal_params = params;
        self.initial_temp_c = initial_temp_c;
        self
    }

    pub fn with_traces(mut self, pv: Trace, load: Trace) -> Self {
        self.pv = Some(pv);
        self.load = Some(load);
        self
    }

    pub fn battery_params(&self) -> &BatteryParams {
        &self.battery_params
    }

    fn traces(&self) -> (PowerKw, PowerKw) {
        let at = |t: &Option<Trace>| {
            t.as_ref()
                .map_or(PowerKw::ZERO, |t| t.sample_wrapped(self.elapsed_s))
        };
        (at(&self.pv), at(&self.load))
    }
}

impl Backend for SimBackend {
    fn kind(&self) -> &'static str {
        "simulation"
    }

    fn reset(&mut self, grid: &TimeGrid, initial_soc: f64, seed: Seed) -> Result<(), EnvError> {
        let p = &self.battery_params;
        if !(p.soc_min..=p.soc_max).contains(&initial_soc) {
            return Err(EnvError::Config(format!(
                "initial soc {initial_soc} outside [{}, {}]",
                p.soc_min, p.soc_max
            )));
        }
        self.dt_h = grid.dt_h();
        if self.dt_h > self.thermal_params.tau_h / 4.0 {
            return Err(EnvError::Config(
                "control step too long for the thermal model".into(),
            ));
        }
        self.step_s = u64::from(grid.step_s());
        self.battery = BatteryState::at(initial_soc);
        self.thermal = ThermalState {
            temp_c: self.initial_temp_c,
            heater_on: self.initial_temp_c < self.thermal_params.setpoint_c,
        };
        self.setpoint = PowerKw::ZERO;
        self.rng = seed.rng();
        self.elapsed_s = 0;
        Ok(())
    }

    fn apply_setpoint(&mut self, setpoint: PowerKw) -> Result<(), EnvError> {
        if !setpoint.0.is_finite() {
            return Err(EnvError::Backend(format!(
                "non-finite setpoint {}",
                setpoint.0
            )));
        }
        self.setpoint = setpoint;
        Ok(())
    }

    fn advance(&mut self) -> Result<(), EnvError> {
        let z: f64 = self.rng.sample(StandardNormal);
        let (battery, _) = battery_step(
            &self.battery_params,
            &self.battery,
            self.setpoint,
            self.dt_h,
            z,
        )
        .map_err(|e| EnvError::Backend(e.to_string()))?;
        self.battery = battery;
        self.thermal = thermal_step(&self.thermal_params, &self.thermal, self.dt_h)
            .map_err(|e| EnvError::Backend(e.to_string()))?;
        self.elapsed_s += self.step_s;
        Ok(())
    }

    fn observe(&mut self) -> Result<BackendObservation, EnvError> {
        let (pv, load) = self.traces();
        Ok(BackendObservation {
            soc: self.battery.soc,
            delivered: self.battery.last_delivered_kw,
            temp_c: self.thermal.temp_c,
            pv,
            load,
        })
    }
}
