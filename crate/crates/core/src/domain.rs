//! Shared domain types: the control time grid, power and price units,
//! episode records and seeded random streams.
//!
//! Conventions used across the crate:
//! * all timestamps are UTC;
//! * power is grid-import-positive (charging and consumption > 0,
//!   discharging and injection < 0);
//! * prices are €/MWh until the reward computation converts them.

use std::fmt;

use chrono::{DateTime, Duration, TimeZone, Timelike, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default control step: 15 minutes.
pub const DEFAULT_STEP_S: u32 = 900;

/// Sanity bound on any power value handled by the crate.
pub const MAX_ABS_POWER_KW: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("episode record: {0}")]
    Record(String),
}

/// Uniform step schedule anchoring price series, traces and episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: DateTime<Utc>,
    step_s: u32,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(start: DateTime<Utc>, step_s: u32, n_steps: usize) -> Result<Self, DomainError> {
        if step_s == 0 {
            return Err(DomainError::InvalidGrid("step must be positive".into()));
        }
        if n_steps == 0 {
            return Err(DomainError::InvalidGrid("n_steps must be positive".into()));
        }
        if 3600 % step_s != 0 && !step_s.is_multiple_of(3600) {
            return Err(DomainError::InvalidGrid(format!(
                "step {step_s} s neither divides nor is a multiple of 3600 s"
            )));
        }
        if start.timestamp_subsec_nanos() != 0 {
            return Err(DomainError::InvalidGrid(
                "start must be whole seconds".into(),
            ));
        }
        Ok(Self {
            start,
            step_s,
            n_steps,
        })
    }

    /// One day of 15-minute steps starting at `start`.
    pub fn day(start: DateTime<Utc>) -> Self {
        Self::new(start, DEFAULT_STEP_S, 96).expect("valid default grid")
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn step_s(&self) -> u32 {
        self.step_s
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Step length in hours.
    pub fn dt_h(&self) -> f64 {
        f64::from(self.step_s) / 3600.0
    }

    /// Timestamp of the boundary before step `i`; `i == n_steps` is the end.
    pub fn timestamp_of(&self, i: usize) -> Result<DateTime<Utc>, DomainError> {
        if i > self.n_steps {
            return Err(DomainError::OutOfRange {
                index: i,
                limit: self.n_steps,
            });
        }
        Ok(self.start + Duration::seconds(i as i64 * i64::from(self.step_s)))
    }

    /// Fractional UTC hour of step `i`, in `[0, 24)`.
    pub fn hour_of_day(&self, i: usize) -> Result<f64, DomainError> {
        if i >= self.n_steps {
            return Err(DomainError::OutOfRange {
                index: i,
                limit: self.n_steps,
            });
        }
        Ok(fractional_hour(self.timestamp_of(i)?))
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp_of(self.n_steps).expect("end is in range")
    }

    /// The grid that immediately follows this one, with the same step and length.
    pub fn following(&self) -> Self {
        Self {
            start: self.end(),
            ..*self
        }
    }
}

/// Fractional hour of a UTC timestamp.
pub fn fractional_hour(ts: DateTime<Utc>) -> f64 {
    f64::from(ts.num_seconds_from_midnight()) / 3600.0
}

/// Parses `YYYY-MM-DDTHH:MM:SSZ` (or any RFC 3339 timestamp) into UTC.
pub fn parse_utc(s: &str) -> Result<DateTime<Utc>, DomainError> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| DomainError::InvalidValue(format!("timestamp {s:?}: {e}")))
}

/// Formats a timestamp as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn format_utc(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Midnight UTC of the given calendar day.
pub fn utc_midnight(year: i32, month: u32, day: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, month, day, 0, 0, 0)
        .single()
        .expect("valid calendar date")
}

/// Signed power in kilowatts, grid-import-positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerKw(pub f64);

impl PowerKw {
    pub const ZERO: PowerKw = PowerKw(0.0);

    pub fn new(value: f64) -> Result<Self, DomainError> {
        if !value.is_finite() || value.abs() > MAX_ABS_POWER_KW {
            return Err(DomainError::InvalidValue(format!("power {value} kW")));
        }
        Ok(Self(value))
    }

    pub fn kw(self) -> f64 {
        self.0
    }
}

impl fmt::Display for PowerKw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} kW", self.0)
    }
}

/// Energy price in €/MWh. Negative prices are legal.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnergyPrice(pub f64);

impl EnergyPrice {
    pub fn new(value: f64) -> Result<Self, DomainError> {
        if !value.is_finite() {
            return Err(DomainError::InvalidValue(format!("price {value} €/MWh")));
        }
        Ok(Self(value))
    }

    pub fn eur_mwh(self) -> f64 {
        self.0
    }
}

/// Cash flow of exchanging `delivered` for `dt_h` hours at `price`.
///
/// Import costs money, export earns it.
pub fn arbitrage_reward(price: EnergyPrice, delivered: PowerKw, dt_h: f64) -> f64 {
    arbitrage_cash_milli(price, delivered, dt_h) / 1000.0
}

/// [`arbitrage_reward`] in milli-euros (€/MWh times kWh), before the single
/// rounding of the unit conversion.
pub fn arbitrage_cash_milli(price: EnergyPrice, delivered: PowerKw, dt_h: f64) -> f64 {
    -price.0 * delivered.0 * dt_h
}

/// Seed for every pseudo-random stream in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent sub-stream, e.g. one per episode.
    pub fn derive(self, stream: u64) -> Seed {
        // splitmix64 finalizer
        let mut z = self.0 ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}

/// One executed control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub timestamp: DateTime<Utc>,
    /// Observation the action was chosen on.
    pub observation: Vec<f64>,
    pub action: usize,
    pub setpoint_kw: f64,
    /// Mean power actually exchanged during the step.
    pub delivered_kw: f64,
    /// State of charge at the end of the step.
    pub soc: f64,
    pub price_eur_mwh: f64,
    pub temp_c: f64,
    pub reward_eur: f64,
}

/// Per-step log of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub grid: TimeGrid,
    /// State of charge when the episode started.
    pub initial_soc: f64,
    rows: Vec<StepRow>,
}

impl EpisodeRecord {
    pub fn new(grid: TimeGrid, initial_soc: f64) -> Self {
        Self {
            grid,
            initial_soc,
            rows: Vec::with_capacity(grid.n_steps()),
        }
    }

    pub fn push(&mut self, row: StepRow) -> Result<(), DomainError> {
        if row.step != self.rows.len() {
            return Err(DomainError::Record(format!(
                "expected step {}, got {}",
                self.rows.len(),
                row.step
            )));
        }
        if !(0.0..=1.0).contains(&row.soc) {
            return Err(DomainError::Record(format!(
                "soc {} outside [0,1]",
                row.soc
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[StepRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rows.iter().map(|r| r.reward_eur).sum()
    }

    pub fn final_soc(&self) -> f64 {
        self.rows.last().map_or(self.initial_soc, |r| r.soc)
    }

    /// Reward recomputed from the logged price and delivered power.
    pub fn recomputed_reward(&self) -> f64 {
        let dt_h = self.grid.dt_h();
        self.rows
            .iter()
            .map(|r| arbitrage_reward(EnergyPrice(r.price_eur_mwh), PowerKw(r.delivered_kw), dt_h))
            .sum()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.action).collect()
    }
}
