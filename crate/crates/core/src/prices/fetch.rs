use std::thread;
use std::time::Duration;

use chrono::NaiveDate;
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{PriceError, PriceSeries};
use crate::domain::{parse_utc, EnergyPrice};

/// One element of the endpoint's JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricePoint {
    pub start: String,
    pub price: f64,
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    /// Additional attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubles afterwards.
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            retries: 2,
            initial_backoff: Duration::from_secs(1),
            timeout: Duration::from_secs(10),
        }
    }
}

/// Decodes and validates an endpoint body for `day`.
pub fn parse_day_ahead_json(body: &str, day: NaiveDate) -> Result<PriceSeries, PriceError> {
    let points: Vec<PricePoint> =
        serde_json::from_str(body).map_err(|e| PriceError::Schema(e.to_string()))?;
    let points = points
        .into_iter()
        .map(|p| {
            let ts = parse_utc(&p.start).map_err(|e| PriceError::Schema(e.to_string()))?;
            Ok((ts, EnergyPrice(p.price)))
        })
        .collect::<Result<Vec<_>, PriceError>>()?;
    let series = PriceSeries::new(points)?;
    let from = day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    series.expect_coverage(from, 24)?;
    Ok(series)
}

pub fn fetch_day_ahead(
    endpoint: &str,
    area: &str,
    day: NaiveDate,
) -> Result<PriceSeries, PriceError> {
    fetch_day_ahead_with(endpoint, area, day, &FetchOptions::default())
}

/// `GET <endpoint>?area=<code>&date=<YYYY-MM-DD>` with retries on transient
/// failures (connection errors and non-200 statuses).
pub fn fetch_day_ahead_with(
    endpoint: &str,
    area: &str,
    day: NaiveDate,
    opts: &FetchOptions,
) -> Result<PriceSeries, PriceError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(opts.timeout)
        .build()
        .map_err(|e| PriceError::Transport(e.to_string()))?;
    let date = day.format("%Y-%m-%d").to_string();
    let mut backoff = opts.initial_backoff;
    let mut last_err = String::new();
    for attempt in 0..=opts.retries {
        if attempt > 0 {
            debug!(
                "retrying price fetch in {backoff:?} (attempt {})",
                attempt + 1
            );
            thread::sleep(backoff);
            backoff *= 2;
        }
        let resp = client
            .get(endpoint)
            .query(&[("area", area), ("date", date.as_str())])
            .send();
        match resp {
            Ok(r) if r.status() == reqwest::StatusCode::OK => {
                let body = r.text().map_err(|e| PriceError::Transport(e.to_string()))?;
                return parse_day_ahead_json(&body, day);
            }
            Ok(r) => last_err = format!("HTTP {}", r.status().as_u16()),
            Err(e) => last_err = e.to_string(),
        }
        warn!("price fetch attempt {} failed: {last_err}", attempt + 1);
    }
    Err(PriceError::Transport(format!(
        "{endpoint}: {last_err} after {} attempts",
        opts.retries + 1
    )))
}
