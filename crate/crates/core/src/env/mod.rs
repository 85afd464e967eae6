//! Episodic environments over pluggable asset backends.

mod arbitrage;
mod backend;
mod hardware;
mod wire;

pub use arbitrage::{
    default_action_set, observation_vector, ArbitrageEnv, ArbitrageEnvConfig, ClockMode, StepInfo,
    StepResult, OBSERVATION_LEN, PRICE_NORM_EUR_MWH,
};
pub use backend::{Backend, BackendObservation, SimBackend};
pub use hardware::{HardwareBackend, HardwareConfig};
pub use wire::{serve_env, EnvServerHandle};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("config error: {0}")]
    Config(String),
    #[error("lifecycle error: {0}")]
    Lifecycle(String),
    #[error("action {action} outside 0..{count}")]
    InvalidAction { action: usize, count: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("logging error: {0}")]
    Logging(String),
}

impl EnvError {
    /// Short code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            EnvError::Config(_) => "config",
            EnvError::Lifecycle(_) => "lifecycle",
            EnvError::InvalidAction { .. } => "bad_request",
            EnvError::Transport(_) => "transport",
            EnvError::Backend(_) => "backend",
            EnvError::Logging(_) => "logging",
        }
    }
}
