use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AssetError;
use crate::domain::{format_utc, fractional_hour, parse_utc, PowerKw, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// Generation; samples are <= 0.
    Pv,
    /// Consumption; samples are >= 0.
    Load,
}

/// Power time series replayed with zero-order hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    grid: TimeGrid,
    kind: TraceKind,
    samples: Vec<PowerKw>,
}

impl Trace {
    pub fn new(grid: TimeGrid, kind: TraceKind, samples: Vec<PowerKw>) -> Result<Self, AssetError> {
        if samples.len() != grid.n_steps() {
            return Err(AssetError::Params(format!(
                "{} samples for a grid of {} steps",
                samples.len(),
                grid.n_steps()
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            let ok = s.0.is_finite()
                && match kind {
                    TraceKind::Pv => s.0 <= 0.0,
                    TraceKind::Load => s.0 >= 0.0,
                };
            if !ok {
                return Err(AssetError::Params(format!(
                    "{kind:?} sample {i} = {} kW",
                    s.0
                )));
            }
        }
        Ok(Self {
            grid,
            kind,
            samples,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kind(&self) -> TraceKind {
        self.kind
    }

    pub fn samples(&self) -> &[PowerKw] {
        &self.samples
    }

    /// Sample at `elapsed_s` seconds after the grid start, wrapping around
    /// the trace length.
    pub fn sample_wrapped(&self, elapsed_s: u64) -> PowerKw {
        let i = (elapsed_s / u64::from(self.grid.step_s())) as usize % self.samples.len();
        self.samples[i]
    }

    /// Clear-sky PV bell between 06:00 and 18:00 UTC.
    pub fn clear_sky_pv(grid: TimeGrid, peak_kw: f64) -> Self {
        let samples = (0..grid.n_steps())
            .map(|i| {
                let h = fractional_hour(grid.timestamp_of(i).expect("in range"));
                let x = ((h - 6.0) / 12.0 * PI).sin();
                PowerKw(if (6.0..18.0).contains(&h) {
                    -peak_kw * x.max(0.0)
                } else {
                    0.0
                })
            })
            .collect();
        Self::new(grid, TraceKind::Pv, samples).expect("synthetic pv is valid")
    }

    /// Base load with morning and evening bumps.
    pub fn household_load(grid: TimeGrid) -> Self {
        let bump = |h: f64, center: f64, width: f64| (-((h - center) / width).powi(2)).exp();
        let samples = (0..grid.n_steps())
            .map(|i| {
                let h = fractional_hour(grid.timestamp_of(i).expect("in range"));
                PowerKw(0.3 + 0.6 * bump(h, 7.5, 1.0) + 1.0 * bump(h, 19.0, 1.5))
            })
            .collect();
        Self::new(grid, TraceKind::Load, samples).expect("synthetic load is valid")
    }

    /// Parses `timestamp,power_kw` CSV. Timestamps must be uniformly spaced.
    pub fn from_csv_str(text: &str, kind: TraceKind) -> Result<Self, AssetError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "timestamp,power_kw" => {}
            Some((_, h)) => {
                return Err(AssetError::Parse {
                    line: 1,
                    message: format!("expected header timestamp,power_kw, got {h:?}"),
                })
            }
            None => {
                return Err(AssetError::Parse {
                    line: 1,
                    message: "empty file".into(),
                })
            }
        }
        let mut stamps = Vec::new();
        let mut samples = Vec::new();
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let err = |message: String| AssetError::Parse { line, message };
            let (ts, p) = raw
                .split_once(',')
                .ok_or_else(|| err("expected two columns".into()))?;
            let ts = parse_utc(ts).map_err(|e| err(e.to_string()))?;
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|e| err(format!("power {p:?}: {e}")))?;
            if let (Some(first), Some(prev)) = (stamps.first(), stamps.last()) {
                let step = stamps
                    .get(1)
                    .map(|s: &chrono::DateTime<chrono::Utc>| *s - *first);
                let delta = ts - *prev;
                if delta.num_seconds() <= 0 || step.is_some_and(|s| s != delta) {
                    return Err(err(format!(
                        "timestamp {} breaks uniform spacing",
                        format_utc(ts)
                    )));
                }
            }
            stamps.push(ts);
            samples.push(PowerKw(p));
        }
        if stamps.len() < 2 {
            return Err(AssetError::Parse {
                line: 2,
                message: "need at least two samples to infer the step".into(),
            });
        }
        let step_s = (stamps[1] - stamps[0]).num_seconds();
        let step_s = u32::try_from(step_s).map_err(|_| AssetError::Parse {
            line: 3,
            message: format!("step {step_s} s out of range"),
        })?;
        let grid =
            TimeGrid::new(stamps[0], step_s, samples.len()).map_err(|e| AssetError::Parse {
                line: 2,
                message: e.to_string(),
            })?;
        Self::new(grid, kind, samples)
    }

    pub fn load_csv(path: &Path, kind: TraceKind) -> Result<Self, AssetError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AssetError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(&text, kind)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("timestamp,power_kw\n");
        for (i, s) in self.samples.iter().enumerate() {
            let ts = self.grid.timestamp_of(i).expect("in range");
            let _ = writeln!(out, "{},{}", format_utc(ts), s.0);
        }
        out
    }
}

/// Zero-order-hold lookup of step `i`.
pub fn trace_sample(trace: &Trace, i: usize) -> Result<PowerKw, AssetError> {
    trace.samples.get(i).copied().ok_or(AssetError::OutOfRange {
        index: i,
        len: trace.samples.len(),
    })
}
