//! Physical models of the household assets: battery, heat-pump-heated room
//! with thermostat, PV/load trace replay and smart-meter aggregation.

mod battery;
mod meter;
mod thermal;
mod trace;

pub use battery::{
    battery_available_charge_kw, battery_available_discharge_kw, battery_step, BatteryParams,
    BatteryState,
};
pub use meter::meter_net_kw;
pub use thermal::{thermal_step, ThermalParams, ThermalState};
pub use trace::{trace_sample, Trace, TraceKind};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssetError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("index {index} out of range for trace of {len} samples")]
    OutOfRange { index: usize, len: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}
