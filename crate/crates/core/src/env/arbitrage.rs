use std::f64::consts::PI;
use std::thread;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendObservation};
use super::EnvError;
use crate::assets::BatteryParams;
use crate::domain::{
    arbitrage_reward, EnergyPrice, EpisodeRecord, PowerKw, Seed, StepRow, TimeGrid,
};
use crate::telemetry::StepSink;

pub const OBSERVATION_LEN: usize = 4;
pub const PRICE_NORM_EUR_MWH: f64 = 200.0;

/// How `step` relates to wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Steps return as soon as the backend has advanced.
    #[default]
    Virtual,
    /// Step `i` returns no earlier than `(i + 1) * step / factor` wall
    /// seconds after reset.
    Scaled(f64),
    /// Step `i` returns no earlier than the grid timestamp of step `i + 1`.
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageEnvConfig {
    pub grid: TimeGrid,
    /// One price per grid step.
    pub prices: Vec<EnergyPrice>,
    pub battery: BatteryParams,
    pub action_set_kw: Vec<f64>,
    pub initial_soc: f64,
    pub clock_mode: ClockMode,
}

impl ArbitrageEnvConfig {
    pub fn new(grid: TimeGrid, prices: Vec<EnergyPrice>, battery: BatteryParams) -> Self {
        Self {
            grid,
            prices,
            battery,
            action_set_kw: default_action_set(),
            initial_soc: 0.5,
            clock_mode: ClockMode::Virtual,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |m: String| Err(EnvError::Config(m));
        if self.prices.len() != self.grid.n_steps() {
            return err(format!(
                "{} prices for a grid of {} steps",
                self.prices.len(),
                self.grid.n_steps()
            ));
        }
        if let Some(p) = self.prices.iter().find(|p| !p.0.is_finite()) {
            return err(format!("non-finite price {}", p.0));
        }
        self.battery
            .validate()
            .map_err(|e| EnvError::Config(e.to_string()))?;
        if !self.action_set_kw.contains(&0.0) {
            return err("action set must contain the idle action 0.0".into());
        }
        if let Some(a) = self
            .action_set_kw
            .iter()
            .find(|a| !a.is_finite() || a.abs() > self.battery.p_max_kw)
        {
            return err(format!(
                "action {a} kW exceeds p_max {} kW",
                self.battery.p_max_kw
            ));
        }
        if !(self.battery.soc_min..=self.battery.soc_max).contains(&self.initial_soc) {
            return err(format!(
                "initial soc {} outside battery bounds",
                self.initial_soc
            ));
        }
        if let ClockMode::Scaled(f) = self.clock_mode {
            if !(f > 0.0 && f.is_finite()) {
                return err(format!("clock scale factor {f} must be positive"));
            }
        }
        Ok(())
    }

    pub fn idle_action(&self) -> usize {
        self.action_set_kw
            .iter()
            .position(|a| *a == 0.0)
            .expect("validated action set")
    }
}

pub fn default_action_set() -> Vec<f64> {
    vec![-1.0, 0.0, 1.0]
}

/// Observation vector: state of charge, normalized price and the time of day
/// on the unit circle.
pub fn observation_vector(soc: f64, price: EnergyPrice, hour: f64) -> Vec<f64> {
    let angle = 2.0 * PI * hour / 24.0;
    vec![soc, price.0 / PRICE_NORM_EUR_MWH, angle.sin(), angle.cos()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Index of the next step to execute.
    pub step: usize,
    pub soc: f64,
    /// Price behind the observation's price feature.
    pub price_eur_mwh: f64,
    /// Mean power exchanged during the step just executed (0 after reset).
    pub delivered_kw: f64,
    pub setpoint_kw: f64,
    /// Price the step just executed was settled at.
    pub settled_price_eur_mwh: Option<f64>,
    pub temp_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Running,
    Terminated,
    Truncated,
}

/// Battery arbitrage over day-ahead prices, Gym-style.
pub struct ArbitrageEnv<B: Backend> {
    config: ArbitrageEnvConfig,
    backend: B,
    sink: Option<Box<dyn StepSink>>,
    phase: Phase,
    step: usize,
    observation: Vec<f64>,
    record: EpisodeRecord,
    clock_origin: Instant,
}

impl<B: Backend> ArbitrageEnv<B> {
    pub fn new(config: ArbitrageEnvConfig, backend: B) -> Result<Self, EnvError> {
        config.validate()?;
        let record = EpisodeRecord::new(config.grid, config.initial_soc);
        Ok(Self {
            config,
            backend,
            sink: None,
            phase: Phase::Idle,
            step: 0,
            observation: Vec::new(),
            record,
            clock_origin: Instant::now(),
        })
    }

    /// Every executed step is also written to `sink`.
    pub fn set_sink(&mut self, sink: Box<dyn StepSink>) {
        self.sink = Some(sink);
    }

    pub fn take_sink(&mut self) -> Option<Box<dyn StepSink>> {
        self.sink.take()
    }

    pub fn config(&self) -> &ArbitrageEnvConfig {
        &self.config
    }

    /// Changes take effect at the next reset.
    pub fn config_mut(&mut self) -> &mut ArbitrageEnvConfig {
        self.phase = Phase::Idle;
        &mut self.config
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    pub fn into_backend(self) -> B {
        self.backend
    }

    pub fn action_count(&self) -> usize {
        self.config.action_set_kw.len()
    }

    pub fn record(&self) -> &EpisodeRecord {
        &self.record
    }

    pub fn take_record(&mut self) -> EpisodeRecord {
        std::mem::replace(
            &mut self.record,
            EpisodeRecord::new(self.config.grid, self.config.initial_soc),
        )
    }

    pub fn current_observation(&self) -> &[f64] {
        &self.observation
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Terminated | Phase::Truncated)
    }

    pub fn reset(&mut self, seed: Seed) -> Result<StepResult, EnvError> {
        self.config.validate()?;
        let cfg = &self.config;
        self.backend.reset(&cfg.grid, cfg.initial_soc, seed)?;
        let obs = self.backend.observe()?;
        self.step = 0;
        self.record = EpisodeRecord::new(cfg.grid, obs.soc);
        self.observation = self.observation_at(0, obs.soc);
        self.phase = Phase::Running;
        self.clock_origin = Instant::now();
        Ok(StepResult {
            observation: self.observation.clone(),
            reward: 0.0,
            terminated: false,
            truncated: false,
            info: self.info(&obs, 0.0, None),
        })
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        match self.phase {
            Phase::Running => {}
            Phase::Idle => return Err(EnvError::Lifecycle("step before reset".into())),
            Phase::Terminated => return Err(EnvError::Lifecycle("step after termination".into())),
            Phase::Truncated => return Err(EnvError::Lifecycle("step after truncation".into())),
        }
        let n = self.config.action_set_kw.len();
        let Some(&setpoint_kw) = self.config.action_set_kw.get(action) else {
            return Err(EnvError::InvalidAction { action, count: n });
        };
        let i = self.step;
        let obs = match self.drive(PowerKw(setpoint_kw)) {
            Ok(o) => o,
            Err(e) => {
                if matches!(e, EnvError::Transport(_)) {
                    self.phase = Phase::Truncated;
                }
                return Err(e);
            }
        };
        self.wait_for_clock(i);

        let price = self.config.prices[i];
        let reward = arbitrage_reward(price, obs.delivered, self.config.grid.dt_h());
        let row = StepRow {
            step: i,
            timestamp: self.config.grid.timestamp_of(i).expect("step within grid"),
            observation: std::mem::take(&mut self.observation),
            action,
            setpoint_kw,
            delivered_kw: obs.delivered.0,
            soc: obs.soc,
            price_eur_mwh: price.0,
            temp_c: obs.temp_c,
            reward_eur: reward,
        };
        if let Some(sink) = self.sink.as_mut() {
            sink.log_step(&row)
                .map_err(|e| EnvError::Logging(e.to_string()))?;
        }
        self.record
            .push(row)
            .map_err(|e| EnvError::Backend(e.to_string()))?;

        self.step = i + 1;
        let terminated = self.step == self.config.grid.n_steps();
        if terminated {
            self.phase = Phase::Terminated;
        }
        self.observation = self.observation_at(self.step, obs.soc);
        Ok(StepResult {
            observation: self.observation.clone(),
            reward,
            terminated,
            truncated: false,
            info: self.info(&obs, setpoint_kw, Some(price.0)),
        })
    }

    /// Marks the episode as externally stopped.
    pub fn truncate(&mut self) {
        if self.phase == Phase::Running {
            self.phase = Phase::Truncated;
        }
    }

    fn drive(&mut self, setpoint: PowerKw) -> Result<BackendObservation, EnvError> {
        self.backend.apply_setpoint(setpoint)?;
        self.backend.advance()?;
        self.backend.observe()
    }

    fn wait_for_clock(&self, i: usize) {
        match self.config.clock_mode {
            ClockMode::Virtual => {}
            ClockMode::Scaled(f) => {
                let due = Duration::from_secs_f64(
                    (i + 1) as f64 * f64::from(self.config.grid.step_s()) / f,
                );
                let elapsed = self.clock_origin.elapsed();
                if due > elapsed {
                    thread::sleep(due - elapsed);
                }
            }
            ClockMode::Wall => {
                let due = self
                    .config
                    .grid
                    .timestamp_of(i + 1)
                    .expect("step within grid");
                loop {
                    let now = Utc::now();
                    if now >= due {
                        break;
                    }
                    let left = (due - now).to_std().unwrap_or_default();
                    thread::sleep(left.min(Duration::from_secs(1)));
                }
            }
        }
    }

    fn price_index(&self, step: usize) -> usize {
        step.min(self.config.grid.n_steps() - 1)
    }

    fn observation_at(&self, step: usize, soc: f64) -> Vec<f64> {
        let grid = &self.config.grid;
        let ts = grid.timestamp_of(step).expect("step within grid");
        let hour = crate::domain::fractional_hour(ts);
        observation_vector(soc, self.config.prices[self.price_index(step)], hour)
    }

    fn info(&self, obs: &BackendObservation, setpoint_kw: f64, settled: Option<f64>) -> StepInfo {
        StepInfo {
            step: self.step,
            soc: obs.soc,
            price_eur_mwh: self.config.prices[self.price_index(self.step)].0,
            delivered_kw: if settled.is_some() {
                obs.delivered.0
            } else {
                0.0
            },
            setpoint_kw,
            settled_price_eur_mwh: settled,
            temp_c: obs.temp_c,
        }
    }
}
