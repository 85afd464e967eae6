//! Episodic control engine for home energy management experiments.
//!
//! The crate couples a Gym-style environment lifecycle to pluggable asset
//! backends: an ideal in-process simulation and an emulated battery/heat-pump
//! device reached over MODBUS/TCP. Around it sit day-ahead price ingestion,
//! a dynamic-programming dispatch oracle, a tabular Q-learning controller,
//! run telemetry and a harness that measures the sim-to-real reward gap.

pub mod assets;
pub mod config;
pub mod control;
pub mod domain;
pub mod env;
pub mod modbus;
pub mod pipeline;
pub mod prices;
pub mod telemetry;
