use thiserror::Error;

use crate::engine::SimTime;
use crate::phy::{ChannelId, Entity};

/// Fatal errors that abort a simulation run.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled in the past: now={now}, fire_at={fire_at}")]
    ScheduleInPast { now: SimTime, fire_at: SimTime },

    #[error(
        "{entity} started a transmission at {at} while already transmitting until {busy_until}"
    )]
    HalfDuplexViolation {
        entity: Entity,
        at: SimTime,
        busy_until: SimTime,
    },

    #[error(
        "{entity} violated its duty cycle on channel {channel} at {at} (allowed from {allowed})"
    )]
    DutyCycleViolation {
        entity: Entity,
        channel: ChannelId,
        at: SimTime,
        allowed: SimTime,
    },

    #[error("invalid radio parameters: {0}")]
    InvalidRadio(String),

    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
}

/// A configuration value that failed validation.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError {
            field,
            reason: reason.into(),
        }
    }
}

/// Anything that stops a run before it produces output.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
