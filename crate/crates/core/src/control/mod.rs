//! Controllers and the sim-to-real harness.

mod dp;
mod policy;
mod qlearn;
mod transfer;

pub use dp::{dp_solve, DpProblem, DpSolution, DEFAULT_SOC_GRID};
pub use policy::{
    threshold_policy, ConstantPolicy, FrozenPolicy, Policy, ThresholdPolicy, POLICY_MAGIC,
    POLICY_VERSION,
};
pub use qlearn::{
    argmax_idle_first, train, Day, EpisodeStats, PriceBins, QConfig, QTable, StateIndexer,
    TrainOptions, HOUR_BINS, N_STATES, PRICE_BINS, SOC_BINS,
};
pub use transfer::{evaluate, gap_percent, run_transfer, DayBreakdown, Evaluation, TransferReport};

use chrono::NaiveDate;
use thiserror::Error;

use crate::domain::TimeGrid;
use crate::env::EnvError;
use crate::prices::{resample, PriceSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("policy file line {line}: {message}")]
    Policy { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Control-grid days cut from an hourly price series.
pub fn days_from_series(
    series: &PriceSeries,
    dates: &[NaiveDate],
    step_s: u32,
) -> Result<Vec<Day>, ControlError> {
    dates
        .iter()
        .map(|d| {
            let start = d.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
            let grid = TimeGrid::new(start, step_s, (86_400 / step_s) as usize)
                .map_err(|e| ControlError::Argument(e.to_string()))?;
            let prices = resample(series, &grid).map_err(|e| ControlError::Range(e.to_string()))?;
            Ok(Day { grid, prices })
        })
        .collect()
}

/// Every full day of `series` on the control grid.
pub fn all_days(series: &PriceSeries, step_s: u32) -> Result<Vec<Day>, ControlError> {
    days_from_series(series, &series.full_days(), step_s)
}
