//! Day-ahead price ingestion: CSV fixtures, the HTTP endpoint client, a
//! stub endpoint server and resampling onto the control grid.
//!
//! Prices stay in €/MWh everywhere; only the reward converts to €/kWh.

mod fetch;
mod series;
mod stub;
pub mod synth;

pub use fetch::{
    fetch_day_ahead, fetch_day_ahead_with, parse_day_ahead_json, FetchOptions, PricePoint,
};
pub use series::{resample, PriceSeries, FIXTURE_HEADER};
pub use stub::{day_json, StubPriceServer, StubReply};

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::domain::format_utc;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("response does not match the endpoint schema: {0}")]
    Schema(String),
    #[error("validation failed{}: {message}", .timestamp.as_ref().map(|t| format!(" at {t}")).unwrap_or_default())]
    Validation {
        timestamp: Option<String>,
        message: String,
    },
    #[error("range: {0}")]
    Range(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("io: {0}")]
    Io(String),
}

impl PriceError {
    pub(crate) fn validation_at(ts: DateTime<Utc>, message: &str) -> Self {
        PriceError::Validation {
            timestamp: Some(format_utc(ts)),
            message: message.to_string(),
        }
    }
}
