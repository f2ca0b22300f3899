//! Application traffic: per-node Poisson (or bursty Poisson) packet sources.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::engine::{RngStream, SimTime, StreamPurpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrafficMode {
    #[default]
    Poisson,
    /// Each burst releases `burst_size` packets spaced `burst_spacing_ms`
    /// apart; the gap from one burst's last packet to the next burst is
    /// exponential with the rate that keeps the mean packet rate unchanged.
    Bursty {
        burst_size: u32,
        #[serde(default)]
        burst_spacing_ms: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficSpec {
    pub mode: TrafficMode,
    /// Aggregate packets per second across the whole network.
    pub network_load: f64,
    pub n_nodes: u32,
}

impl TrafficSpec {
    pub fn per_node_rate(&self) -> f64 {
        self.network_load / self.n_nodes as f64
    }
}

/// One node's arrival process, drawing from its own stream.
#[derive(Debug, Clone)]
pub struct NodeTraffic {
    rng: ChaCha8Rng,
    epoch_gap: Exp<f64>,
    burst_size: u32,
    spacing_us: u64,
    next_epoch: SimTime,
    burst_left: u32,
    next_in_burst: SimTime,
}

impl NodeTraffic {
    pub fn new(spec: &TrafficSpec, seed: u64, node: u32) -> Self {
        let (burst_size, spacing_us) = match spec.mode {
            TrafficMode::Poisson => (1, 0),
            TrafficMode::Bursty {
                burst_size,
                burst_spacing_ms,
            } => (burst_size.max(1), burst_spacing_ms * 1000),
        };
        let epoch_rate = spec.per_node_rate() / burst_size as f64;
        let mut t = NodeTraffic {
            rng: RngStream::new(seed, StreamPurpose::Traffic, node).rng(),
            epoch_gap: Exp::new(epoch_rate).expect("positive rate"),
            burst_size,
            spacing_us,
            next_epoch: SimTime::ZERO,
            burst_left: 0,
            next_in_burst: SimTime::ZERO,
        };
        t.next_epoch = t.draw_gap(SimTime::ZERO);
        t
    }

    fn draw_gap(&mut self, from: SimTime) -> SimTime {
        let secs: f64 = self.epoch_gap.sample(&mut self.rng);
        let us = (secs * 1e6).round().max(1.0);
        SimTime(from.0.saturating_add(us as u64))
    }

    /// Next arrival time. Successive calls are non-decreasing.
    pub fn next_arrival(&mut self) -> SimTime {
        if self.burst_left > 0 {
            self.burst_left -= 1;
            let t = self.next_in_burst;
            self.next_in_burst = SimTime(t.0 + self.spacing_us);
            return t;
        }
        let t = self.next_epoch;
        let burst_end = SimTime(t.0 + self.spacing_us * (self.burst_size as u64 - 1));
        self.next_epoch = self.draw_gap(burst_end);
        self.burst_left = self.burst_size - 1;
        self.next_in_burst = SimTime(t.0 + self.spacing_us);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Arrival {
    pub t: SimTime,
    pub node: u32,
}

/// All arrivals in `[0, horizon]`, time ordered (ties by node id).
pub fn generate_arrivals(spec: &TrafficSpec, horizon: SimTime, seed: u64) -> Vec<Arrival> {
    let mut out = Vec::new();
    for node in 0..spec.n_nodes {
        let mut src = NodeTraffic::new(spec, seed, node);
        loop {
            let t = src.next_arrival();
            if t > horizon {
                break;
            }
            out.push(Arrival { t, node });
        }
    }
    out.sort();
    out
}
