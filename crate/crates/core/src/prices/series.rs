use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};

use super::PriceError;
use crate::domain::{format_utc, parse_utc, EnergyPrice, TimeGrid};

pub const FIXTURE_HEADER: &str = "timestamp,price_eur_mwh";

/// Hourly day-ahead prices with no gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    start: DateTime<Utc>,
    prices: Vec<EnergyPrice>,
}

impl PriceSeries {
    /// Validates on-the-hour, strictly hourly, gap-free points.
    pub fn new(points: Vec<(DateTime<Utc>, EnergyPrice)>) -> Result<Self, PriceError> {
        let Some(&(start, _)) = points.first() else {
            return Err(PriceError::Validation {
                timestamp: None,
                message: "empty series".into(),
            });
        };
        for (i, (ts, price)) in points.iter().enumerate() {
            if ts.minute() != 0 || ts.second() != 0 || ts.timestamp_subsec_nanos() != 0 {
                return Err(PriceError::validation_at(*ts, "timestamp not on the hour"));
            }
            if !price.0.is_finite() {
                return Err(PriceError::validation_at(*ts, "non-finite price"));
            }
            let expected = start + Duration::hours(i as i64);
            if *ts != expected {
                let message = if *ts < expected {
                    "duplicate or out-of-order hour"
                } else {
                    "missing hour"
                };
                let at = if *ts < expected { *ts } else { expected };
                return Err(PriceError::validation_at(at, message));
            }
        }
        Ok(Self {
            start,
            prices: points.into_iter().map(|(_, p)| p).collect(),
        })
    }

    pub fn from_prices(start: DateTime<Utc>, prices: &[f64]) -> Result<Self, PriceError> {
        Self::new(
            prices
                .iter()
                .enumerate()
                .map(|(i, p)| (start + Duration::hours(i as i64), EnergyPrice(*p)))
                .collect(),
        )
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    /// Exclusive end of coverage.
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.prices.len() as i64)
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn prices(&self) -> &[EnergyPrice] {
        &self.prices
    }

    pub fn points(&self) -> impl Iterator<Item = (DateTime<Utc>, EnergyPrice)> + '_ {
        self.prices
            .iter()
            .enumerate()
            .map(|(i, p)| (self.start + Duration::hours(i as i64), *p))
    }

    pub fn mean(&self) -> f64 {
        self.prices.iter().map(|p| p.0).sum::<f64>() / self.prices.len() as f64
    }

    /// Hours `[from, from + hours)`.
    pub fn window(&self, from: DateTime<Utc>, hours: usize) -> Result<Self, PriceError> {
        let offset = (from - self.start).num_hours();
        if from < self.start || offset as usize + hours > self.prices.len() || hours == 0 {
            return Err(PriceError::Range(format!(
                "window {} + {hours} h not inside {}..{}",
                format_utc(from),
                format_utc(self.start),
                format_utc(self.end())
            )));
        }
        let o = offset as usize;
        Ok(Self {
            start: from,
            prices: self.prices[o..o + hours].to_vec(),
        })
    }

    /// The 24 hours of a UTC calendar day.
    pub fn day(&self, day: NaiveDate) -> Result<Self, PriceError> {
        let from = day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        self.window(from, 24)
    }

    /// Calendar days fully covered by the series.
    pub fn full_days(&self) -> Vec<NaiveDate> {
        let mut out = Vec::new();
        let mut d = self.start.date_naive();
        if self.start.hour() != 0 {
            d = d.succ_opt().expect("date in range");
        }
        loop {
            let from = d.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
            if from + Duration::hours(24) > self.end() {
                break;
            }
            out.push(d);
            d = d.succ_opt().expect("date in range");
        }
        out
    }

    /// Checks that the series spans exactly `[from, from + hours)`.
    pub fn expect_coverage(&self, from: DateTime<Utc>, hours: usize) -> Result<(), PriceError> {
        if self.start != from {
            return Err(PriceError::validation_at(
                from,
                "series does not start here",
            ));
        }
        if self.prices.len() != hours {
            let at = if self.prices.len() < hours {
                self.end()
            } else {
                from + Duration::hours(hours as i64)
            };
            return Err(PriceError::validation_at(
                at,
                &format!("expected {hours} hourly points, got {}", self.prices.len()),
            ));
        }
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self, PriceError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == FIXTURE_HEADER => {}
            other => {
                return Err(PriceError::Parse {
                    line: 1,
                    message: format!(
                        "expected header {FIXTURE_HEADER}, got {:?}",
                        other.map(|(_, h)| h)
                    ),
                })
            }
        }
        let mut points = Vec::new();
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let err = |message: String| PriceError::Parse { line, message };
            let (ts, price) = raw
                .split_once(',')
                .ok_or_else(|| err("expected two columns".into()))?;
            let ts = parse_utc(ts).map_err(|e| err(e.to_string()))?;
            // Accept the typographic minus some exports use.
            let price = price.trim().replace('\u{2212}', "-");
            let price: f64 = price
                .parse()
                .map_err(|e| err(format!("price {price:?}: {e}")))?;
            if !price.is_finite() {
                return Err(err(format!("non-finite price {price}")));
            }
            points.push((ts, EnergyPrice(price)));
        }
        Self::new(points)
    }

    /// Reads a `timestamp,price_eur_mwh` fixture.
    pub fn load_fixture(path: &Path) -> Result<Self, PriceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PriceError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(32 * (self.prices.len() + 1));
        out.push_str(FIXTURE_HEADER);
        out.push('\n');
        for (ts, p) in self.points() {
            let _ = writeln!(out, "{},{}", format_utc(ts), p.0);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), PriceError> {
        std::fs::write(path, self.to_csv_string())
            .map_err(|e| PriceError::Io(format!("{}: {e}", path.display())))
    }
}

/// Zero-order hold of hourly prices onto the control grid.
pub fn resample(series: &PriceSeries, grid: &TimeGrid) -> Result<Vec<EnergyPrice>, PriceError> {
    if 3600 % grid.step_s() != 0 {
        return Err(PriceError::Range(format!(
            "grid step {} s does not divide one hour",
            grid.step_s()
        )));
    }
    (0..grid.n_steps())
        .map(|i| {
            let ts = grid.timestamp_of(i).expect("in range");
            let offset = (ts - series.start).num_seconds();
            let hour = offset.div_euclid(3600);
            if offset < 0 || hour as usize >= series.prices.len() {
                return Err(PriceError::Range(format!(
                    "step {i} at {} not covered by prices {}..{}",
                    format_utc(ts),
                    format_utc(series.start),
                    format_utc(series.end())
                )));
            }
            Ok(series.prices[hour as usize])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::utc_midnight;
    use proptest::prelude::*;

    fn day_csv(skip_hour: Option<u32>) -> String {
        let mut s = String::from("timestamp,price_eur_mwh\n");
        for h in 0..24 {
            if Some(h) == skip_hour {
                continue;
            }
            s.push_str(&format!(
                "2023-01-01T{h:02}:00:00Z,{}\n",
                50.0 + f64::from(h)
            ));
        }
        s
    }

    #[test]
    fn parses_full_day() {
        let s = PriceSeries::from_csv_str(&day_csv(None)).unwrap();
        assert_eq!(s.len(), 24);
        assert_eq!(s.prices()[3].0, 53.0);
    }

    #[test]
    fn reports_gap_timestamp() {
        match PriceSeries::from_csv_str(&day_csv(Some(13))) {
            Err(PriceError::Validation { timestamp, .. }) => {
                assert_eq!(timestamp.as_deref(), Some("2023-01-01T13:00:00Z"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_duplicate_and_parse_line() {
        let dup = "timestamp,price_eur_mwh\n2023-01-01T00:00:00Z,1\n2023-01-01T00:00:00Z,2\n";
        assert!(matches!(
            PriceSeries::from_csv_str(dup),
            Err(PriceError::Validation { .. })
        ));
        let bad = "timestamp,price_eur_mwh\n2023-01-01T00:00:00Z,1\n2023-01-01T01:00:00Z,x\n";
        assert!(matches!(
            PriceSeries::from_csv_str(bad),
            Err(PriceError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn negative_prices_are_legal() {
        let text =
            "timestamp,price_eur_mwh\n2023-05-01T12:00:00Z,−5.0\n2023-05-01T13:00:00Z,-5.0\n";
        let s = PriceSeries::from_csv_str(text).unwrap();
        assert_eq!(s.prices()[0].0, -5.0);
        assert_eq!(s.prices()[1].0, -5.0);
    }

    #[test]
    fn resample_examples() {
        let start = utc_midnight(2023, 1, 1);
        let s = PriceSeries::from_prices(start, &[10.0, 50.0]).unwrap();
        let g = TimeGrid::new(start, 900, 8).unwrap();
        let r: Vec<f64> = resample(&s, &g).unwrap().iter().map(|p| p.0).collect();
        assert_eq!(r, vec![10.0, 10.0, 10.0, 10.0, 50.0, 50.0, 50.0, 50.0]);

        let hourly = TimeGrid::new(start, 3600, 2).unwrap();
        assert_eq!(resample(&s, &hourly).unwrap(), s.prices().to_vec());

        let long = TimeGrid::new(start, 900, 9).unwrap();
        match resample(&s, &long) {
            Err(PriceError::Range(m)) => assert!(m.starts_with("step 8"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn windows_and_days() {
        let start = utc_midnight(2023, 1, 1);
        let prices: Vec<f64> = (0..72).map(f64::from).collect();
        let s = PriceSeries::from_prices(start, &prices).unwrap();
        assert_eq!(s.full_days().len(), 3);
        let d = s.day(NaiveDate::from_ymd_opt(2023, 1, 2).unwrap()).unwrap();
        assert_eq!(d.prices()[0].0, 24.0);
        assert!(s.window(start, 73).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(prices in proptest::collection::vec(-500.0f64..3000.0, 1..100)) {
            let s = PriceSeries::from_prices(utc_midnight(2023, 3, 1), &prices).unwrap();
            prop_assert_eq!(PriceSeries::from_csv_str(&s.to_csv_string()).unwrap(), s);
        }

        #[test]
        fn resample_preserves_hourly_mean(prices in proptest::collection::vec(-100.0f64..400.0, 1..48), k in prop::sample::select(vec![1u32, 2, 3, 4, 6, 12])) {
            let start = utc_midnight(2023, 3, 1);
            let s = PriceSeries::from_prices(start, &prices).unwrap();
            let step = 3600 / k;
            let g = TimeGrid::new(start, step, prices.len() * k as usize).unwrap();
            let r = resample(&s, &g).unwrap();
            for (h, chunk) in r.chunks(k as usize).enumerate() {
                prop_assert!(chunk.iter().all(|p| p.0 == prices[h]));
            }
        }
    }
}
