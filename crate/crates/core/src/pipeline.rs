//! End-to-end steps shared by the command line and the acceptance suite:
//! train a frozen policy on the price fixture, then evaluate it on the
//! simulated and the MODBUS-backed environment.

use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::control::{
    all_days, days_from_series, run_transfer, train, ControlError, Day, EpisodeStats, FrozenPolicy,
    PriceBins, QTable, TransferReport,
};
use crate::env::{ArbitrageEnv, EnvError, HardwareBackend, SimBackend};
use crate::prices::{PriceError, PriceSeries};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Prices {
        path: String,
        #[source]
        source: PriceError,
    },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn load_series(path: &std::path::Path) -> Result<PriceSeries, PipelineError> {
    PriceSeries::load_fixture(path).map_err(|source| PipelineError::Prices {
        path: path.display().to_string(),
        source,
    })
}

/// Training fixture and its full days on the control grid.
pub fn training_days(cfg: &ExperimentConfig) -> Result<(PriceSeries, Vec<Day>), PipelineError> {
    let series = load_series(&cfg.prices.train_fixture)?;
    let days = all_days(&series, cfg.experiment.step_s)?;
    if days.is_empty() {
        return Err(ControlError::Argument(format!(
            "{} has no full day of prices",
            cfg.prices.train_fixture.display()
        ))
        .into());
    }
    Ok((series, days))
}

/// The first `eval_days` full days of the evaluation fixture.
pub fn evaluation_days(cfg: &ExperimentConfig) -> Result<Vec<Day>, PipelineError> {
    let series = load_series(&cfg.prices.eval_fixture)?;
    let dates = series.full_days();
    if dates.len() < cfg.prices.eval_days {
        return Err(ControlError::Argument(format!(
            "{} covers {} full days, {} requested",
            cfg.prices.eval_fixture.display(),
            dates.len(),
            cfg.prices.eval_days
        ))
        .into());
    }
    Ok(days_from_series(
        &series,
        &dates[..cfg.prices.eval_days],
        cfg.experiment.step_s,
    )?)
}

/// Simulated environment on the ideal battery, positioned on `day`.
pub fn sim_env(
    cfg: &ExperimentConfig,
    day: &Day,
) -> Result<ArbitrageEnv<SimBackend>, PipelineError> {
    let env_cfg = cfg.env_config(day.grid, day.prices.clone(), true);
    let backend = SimBackend::new(env_cfg.battery);
    Ok(ArbitrageEnv::new(env_cfg, backend)?)
}

/// Environment backed by the device at `addr`, positioned on `day`.
pub fn hardware_env(
    cfg: &ExperimentConfig,
    day: &Day,
    addr: &str,
) -> Result<ArbitrageEnv<HardwareBackend>, PipelineError> {
    let backend = HardwareBackend::new(cfg.hardware_config(addr)?)?;
    Ok(ArbitrageEnv::new(
        cfg.env_config(day.grid, day.prices.clone(), false),
        backend,
    )?)
}

/// Trains on the training fixture and freezes the greedy policy.
pub fn train_policy(
    cfg: &ExperimentConfig,
    on_episode: impl FnMut(&EpisodeStats),
) -> Result<(QTable, FrozenPolicy), PipelineError> {
    let (series, days) = training_days(cfg)?;
    let bins = PriceBins::deciles(&series.prices().iter().map(|p| p.0).collect::<Vec<_>>())?;
    let mut env = sim_env(cfg, &days[0])?;
    let table = train(&mut env, &days, bins, &cfg.train_options(), on_episode)?;
    let policy = FrozenPolicy::from_table(&table, &cfg.experiment.action_set_kw, &cfg.hash())?;
    Ok((table, policy))
}

/// Evaluates `policy` on the ideal simulation and on the device at `addr`
/// over the evaluation days.
pub fn transfer(
    cfg: &ExperimentConfig,
    policy: &FrozenPolicy,
    addr: &str,
) -> Result<TransferReport, PipelineError> {
    if policy.action_set_kw != cfg.experiment.action_set_kw {
        return Err(ControlError::Argument(format!(
            "policy actions {:?} differ from the configured {:?}",
            policy.action_set_kw, cfg.experiment.action_set_kw
        ))
        .into());
    }
    let days = evaluation_days(cfg)?;
    let mut sim = sim_env(cfg, &days[0])?;
    let mut real = hardware_env(cfg, &days[0], addr)?;
    Ok(run_transfer(
        policy,
        &mut sim,
        &mut real,
        &days,
        cfg.seed(),
    )?)
}
