//! Experiment configuration: one TOML document with a section per module.
//!
//! Every section is optional and every key has a default, so an empty file
//! is a valid config. Unknown keys are rejected. Relative paths in a loaded
//! file resolve against the file's directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{BatteryParams, ThermalParams, Trace};
use crate::control::{QConfig, TrainOptions};
use crate::domain::{utc_midnight, EnergyPrice, Seed, TimeGrid, DEFAULT_STEP_S};
use crate::env::{default_action_set, ArbitrageEnvConfig, ClockMode, HardwareConfig};
use crate::modbus::{
    EmulatorConfig, RegisterMap, DEFAULT_PORT, DEFAULT_TICK_S, DEFAULT_TIME_SCALE,
};
use crate::prices::FetchOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub step_s: u32,
    pub initial_soc: f64,
    pub action_set_kw: Vec<f64>,
    pub runs_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seed: 0,
            step_s: DEFAULT_STEP_S,
            initial_soc: 0.5,
            action_set_kw: default_action_set(),
            runs_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricesSection {
    /// Hourly fixture used for training.
    pub train_fixture: PathBuf,
    /// Hourly fixture whose first `eval_days` full days form the test period.
    pub eval_fixture: PathBuf,
    pub eval_days: usize,
    pub endpoint: String,
    pub area: String,
    pub retries: u32,
    /// Delay before the first retry; doubles afterwards.
    pub backoff_s: f64,
    pub timeout_s: f64,
}

impl Default for PricesSection {
    fn default() -> Self {
        Self {
            train_fixture: PathBuf::from("crates/core/fixtures/prices_2023.csv"),
            eval_fixture: PathBuf::from("crates/core/fixtures/prices_eval.csv"),
            eval_days: 4,
            endpoint: "http://127.0.0.1:8080/day-ahead".into(),
            area: "BE".into(),
            retries: 2,
            backoff_s: 1.0,
            timeout_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorSection {
    pub host: String,
    pub port: u16,
    pub tick_s: u32,
    pub time_scale: f64,
    pub initial_soc: f64,
    pub initial_temp_c: f64,
    pub pv_peak_kw: f64,
    /// TOML register map; the built-in map when unset.
    pub register_map: Option<PathBuf>,
    pub record_ticks: bool,
}

impl Default for EmulatorSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            tick_s: DEFAULT_TICK_S,
            time_scale: DEFAULT_TIME_SCALE,
            initial_soc: 0.5,
            initial_temp_c: 18.0,
            pv_peak_kw: 3.0,
            register_map: None,
            record_ticks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_fraction: f64,
    pub random_initial_soc: bool,
    pub replay_updates: usize,
    pub replay_capacity: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            episodes: t.episodes,
            alpha: t.q.alpha,
            gamma: t.q.gamma,
            epsilon_start: t.q.epsilon_start,
            epsilon_end: t.q.epsilon_end,
            epsilon_decay_fraction: t.q.epsilon_decay_fraction,
            random_initial_soc: t.random_initial_soc,
            replay_updates: t.replay_updates,
            replay_capacity: t.replay_capacity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareSection {
    pub io_timeout_s: f64,
    pub stall_timeout_s: f64,
}

impl Default for HardwareSection {
    fn default() -> Self {
        Self {
            io_timeout_s: 2.0,
            stall_timeout_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub prices: PricesSection,
    /// Device parameters. The simulated backend uses the ideal variant.
    pub battery: BatteryParams,
    pub thermal: ThermalParams,
    pub emulator: EmulatorSection,
    pub training: TrainingSection,
    pub hardware: HardwareSection,
}

fn positive_secs(name: &str, v: f64) -> Result<Duration, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(Duration::from_secs_f64(v))
    } else {
        Err(ConfigError::Invalid(format!(
            "{name} must be a positive number of seconds, got {v}"
        )))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Rebases relative paths onto `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.prices.train_fixture);
        fix(&mut self.prices.eval_fixture);
        fix(&mut self.experiment.runs_dir);
        if let Some(p) = self.emulator.register_map.as_mut() {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let e = &self.experiment;
        if let Err(err) = TimeGrid::new(utc_midnight(2023, 1, 1), e.step_s, 1) {
            return bad(format!("experiment.step_s: {err}"));
        }
        if 86_400 % e.step_s != 0 {
            return bad(format!(
                "experiment.step_s {} does not divide a day",
                e.step_s
            ));
        }
        self.battery
            .validate()
            .map_err(|err| ConfigError::Invalid(format!("battery: {err}")))?;
        self.thermal
            .validate()
            .map_err(|err| ConfigError::Invalid(format!("thermal: {err}")))?;
        self.q_config()
            .validate()
            .map_err(|err| ConfigError::Invalid(format!("training: {err}")))?;
        let probe = ArbitrageEnvConfig {
            action_set_kw: e.action_set_kw.clone(),
            initial_soc: e.initial_soc,
            ..ArbitrageEnvConfig::new(
                TimeGrid::new(utc_midnight(2023, 1, 1), e.step_s, 1).expect("checked above"),
                vec![EnergyPrice(0.0)],
                self.battery.as_ideal(),
            )
        };
        probe
            .validate()
            .map_err(|err| ConfigError::Invalid(format!("experiment: {err}")))?;
        if self.prices.eval_days == 0 {
            return bad("prices.eval_days must be at least 1".into());
        }
        positive_secs("prices.timeout_s", self.prices.timeout_s)?;
        if !(self.prices.backoff_s >= 0.0 && self.prices.backoff_s.is_finite()) {
            return bad(format!(
                "prices.backoff_s {} must be >= 0",
                self.prices.backoff_s
            ));
        }
        positive_secs("hardware.io_timeout_s", self.hardware.io_timeout_s)?;
        positive_secs("hardware.stall_timeout_s", self.hardware.stall_timeout_s)?;
        let em = &self.emulator;
        if !e.step_s.is_multiple_of(em.tick_s.max(1)) {
            return bad(format!(
                "experiment.step_s {} is not a multiple of emulator.tick_s {}",
                e.step_s, em.tick_s
            ));
        }
        if !(em.pv_peak_kw >= 0.0 && em.pv_peak_kw.is_finite()) {
            return bad(format!(
                "emulator.pv_peak_kw {} must be >= 0",
                em.pv_peak_kw
            ));
        }
        // The remaining emulator checks need the register map file.
        Ok(())
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::telemetry::config_hash(self)
    }

    pub fn seed(&self) -> Seed {
        Seed(self.experiment.seed)
    }

    pub fn fetch_options(&self) -> FetchOptions {
        FetchOptions {
            retries: self.prices.retries,
            initial_backoff: Duration::from_secs_f64(self.prices.backoff_s),
            timeout: Duration::from_secs_f64(self.prices.timeout_s),
        }
    }

    pub fn q_config(&self) -> QConfig {
        let t = &self.training;
        QConfig {
            alpha: t.alpha,
            gamma: t.gamma,
            epsilon_start: t.epsilon_start,
            epsilon_end: t.epsilon_end,
            epsilon_decay_fraction: t.epsilon_decay_fraction,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.training;
        TrainOptions {
            episodes: t.episodes,
            q: self.q_config(),
            seed: self.seed(),
            random_initial_soc: t.random_initial_soc,
            replay_updates: t.replay_updates,
            replay_capacity: t.replay_capacity,
        }
    }

    pub fn register_map(&self) -> Result<RegisterMap, ConfigError> {
        match &self.emulator.register_map {
            None => Ok(RegisterMap::default()),
            Some(p) => RegisterMap::load(p)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display()))),
        }
    }

    /// Environment config for one day of prices. `ideal` selects the
    /// simulated (ideal) battery parameters.
    pub fn env_config(
        &self,
        grid: TimeGrid,
        prices: Vec<EnergyPrice>,
        ideal: bool,
    ) -> ArbitrageEnvConfig {
        let battery = if ideal {
            self.battery.as_ideal()
        } else {
            self.battery
        };
        ArbitrageEnvConfig {
            action_set_kw: self.experiment.action_set_kw.clone(),
            initial_soc: self.experiment.initial_soc,
            clock_mode: ClockMode::Virtual,
            ..ArbitrageEnvConfig::new(grid, prices, battery)
        }
    }

    pub fn emulator_addr(&self) -> String {
        format!("{}:{}", self.emulator.host, self.emulator.port)
    }

    pub fn emulator_config(&self) -> Result<EmulatorConfig, ConfigError> {
        let em = &self.emulator;
        let bind: SocketAddr = self.emulator_addr().parse().map_err(|e| {
            ConfigError::Invalid(format!("emulator address {}: {e}", self.emulator_addr()))
        })?;
        let day = TimeGrid::day(utc_midnight(2024, 1, 1));
        let cfg = EmulatorConfig {
            map: self.register_map()?,
            battery: self.battery,
            thermal: self.thermal,
            initial_soc: em.initial_soc,
            initial_temp_c: em.initial_temp_c,
            pv: Trace::clear_sky_pv(day, em.pv_peak_kw),
            load: Trace::household_load(day),
            tick_s: em.tick_s,
            time_scale: em.time_scale,
            seed: self.seed(),
            bind,
            record_ticks: em.record_ticks,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(format!("emulator: {e}")))?;
        Ok(cfg)
    }

    pub fn hardware_config(&self, addr: &str) -> Result<HardwareConfig, ConfigError> {
        Ok(HardwareConfig {
            map: self.register_map()?,
            tick_s: self.emulator.tick_s,
            time_scale: self.emulator.time_scale,
            io_timeout: positive_secs("hardware.io_timeout_s", self.hardware.io_timeout_s)?,
            stall_timeout: positive_secs(
                "hardware.stall_timeout_s",
                self.hardware.stall_timeout_s,
            )?,
            ..HardwareConfig::new(addr)
        })
    }
}
