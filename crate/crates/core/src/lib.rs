//! Discrete-event simulator for a request/grant LPWAN MAC protocol over a
//! LoRa physical layer, with a LoRaWAN-style pure-ALOHA baseline.
//!
//! A run is fully determined by its [`ExperimentConfig`] (including the
//! seed). See [`sim::simulate`] for a single run and [`harness`] for CSV
//! output and parameter sweeps.

pub mod config;
pub mod engine;
pub mod error;
pub mod harness;
pub mod lorawan;
pub mod lpwa;
pub mod metrics;
pub mod phy;
pub mod sim;
pub mod traffic;
pub mod verify;

pub use config::{ExperimentConfig, Protocol, SweepParam, SweepSpec};
pub use engine::{SimDuration, SimTime};
pub use error::{ConfigError, RunError, SimError};
pub use metrics::MetricsSummary;
pub use phy::{airtime, RadioParams};
pub use sim::{simulate, simulate_scripted, RunOutput};
