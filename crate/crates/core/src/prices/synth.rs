//! Synthetic BELPEX-like hourly day-ahead prices.
//!
//! Daily profile with a morning and a larger evening peak, a night trough
//! and a solar midday dip that deepens in summer; winter prices are higher
//! and weekends cheaper. Day-level and hour-level noise come from a seeded
//! stream, so the same seed always yields the same fixture.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::StandardNormal;

use super::PriceSeries;
use crate::domain::Seed;

fn bump(h: f64, center: f64, width: f64) -> f64 {
    (-((h - center) / width).powi(2)).exp()
}

/// Relative price level of hour `h` (0..24) for a given solar strength in [0,1].
pub fn daily_shape(h: f64, solar: f64) -> f64 {
    0.80 + 0.35 * bump(h, 8.0, 1.6) + 0.60 * bump(h, 19.0, 2.0)
        - 0.22 * bump(h, 3.5, 2.2)
        - (0.10 + 0.45 * solar) * bump(h, 13.5, 2.4)
}

/// `days` days of hourly prices starting at midnight UTC of `first_day`.
pub fn belpex_like(first_day: NaiveDate, days: usize, seed: Seed) -> PriceSeries {
    let mut rng = seed.rng();
    let start = first_day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let mut prices = Vec::with_capacity(days * 24);
    let mut ar = 0.0;
    for d in 0..days {
        let date = first_day + Duration::days(d as i64);
        let doy = f64::from(date.ordinal0());
        // Winter-high seasonal level, summer-strong solar dip.
        let season = (2.0 * PI * (doy - 15.0) / 365.0).cos();
        let solar = (0.5 - 0.5 * season).clamp(0.0, 1.0);
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        let z: f64 = rng.sample(StandardNormal);
        let level =
            125.0 * (1.0 + 0.18 * season) * if weekend { 0.85 } else { 1.0 } * (0.12 * z).exp();
        let dip = if weekend { 1.4 } else { 1.0 };
        for h in 0..24 {
            let e: f64 = rng.sample(StandardNormal);
            ar = 0.7 * ar + 6.0 * e;
            let shape = daily_shape(f64::from(h), (solar * dip).min(1.3));
            let p = level * shape + ar;
            prices.push((p * 100.0).round() / 100.0);
        }
    }
    PriceSeries::from_prices(start, &prices).expect("synthetic series is hourly")
}
