//! Experiment orchestration: configuration, runs and sweeps, validation and
//! output files.

pub mod config;
pub mod dump;
pub mod montecarlo;
pub mod run;
