//! Run configuration. Every field has a default; an empty config file gives
//! 3 uplink + 1 downlink channels at 1% duty cycle, 40-byte payloads at SF7.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{SimDuration, SimTime};
use crate::error::ConfigError;
use crate::phy::{airtime, Channel, ChannelId, Direction, DutyLimit, RadioParams};
use crate::traffic::{TrafficMode, TrafficSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "lpwa-mac")]
    LpwaMac,
    #[serde(rename = "lorawan")]
    LoRaWan,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::LpwaMac, Protocol::LoRaWan];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::LpwaMac => "lpwa-mac",
            Protocol::LoRaWan => "lorawan",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lpwa-mac" | "lpwa" => Ok(Protocol::LpwaMac),
            "lorawan" => Ok(Protocol::LoRaWan),
            other => Err(ConfigError::new(
                "protocol",
                format!("unknown protocol `{other}` (expected lpwa-mac or lorawan)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelPlan {
    pub uplink: u16,
    pub downlink: u16,
    /// Per node, per channel.
    pub node_duty_cycle: f64,
    /// Per channel, for every gateway transmission.
    pub gateway_duty_cycle: f64,
    pub duty_window_s: u64,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        ChannelPlan {
            uplink: 3,
            downlink: 1,
            node_duty_cycle: 0.01,
            gateway_duty_cycle: 0.01,
            duty_window_s: 3600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpwaParams {
    pub request_bytes: u32,
    pub grant_bytes: u32,
    pub ack_bytes: u32,
    pub guard_ms: u64,
    pub turnaround_ms: u64,
    pub request_timeout_ms: u64,
    pub backoff_base_ms: u64,
    pub max_request_retries: u32,
    pub max_slots_per_grant: u32,
    pub horizon_max_s: u64,
    /// Send grants on the request channel instead of the downlink channel.
    pub grants_on_request_channel: bool,
    pub data_acks: bool,
}

impl Default for LpwaParams {
    fn default() -> Self {
        LpwaParams {
            request_bytes: 12,
            grant_bytes: 16,
            ack_bytes: 8,
            guard_ms: 10,
            turnaround_ms: 50,
            request_timeout_ms: 500,
            backoff_base_ms: 100,
            max_request_retries: 8,
            max_slots_per_grant: 16,
            horizon_max_s: 60,
            grants_on_request_channel: false,
            data_acks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoRaWanParams {
    pub confirmed: bool,
    pub max_retransmissions: u32,
    pub rx_delay_ms: u64,
    pub ack_margin_ms: u64,
    pub ack_bytes: u32,
    pub backoff_min_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for LoRaWanParams {
    fn default() -> Self {
        LoRaWanParams {
            confirmed: true,
            max_retransmissions: 8,
            rx_delay_ms: 1000,
            ack_margin_ms: 100,
            ack_bytes: 8,
            backoff_min_ms: 1000,
            backoff_max_ms: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub n_nodes: u32,
    /// Aggregate packets per second.
    pub network_load: f64,
    pub horizon_s: f64,
    pub seed: u64,
    pub warmup_fraction: f64,
    pub payload_bytes: u32,
    pub queue_capacity: usize,
    pub traffic: TrafficMode,
    pub channels: ChannelPlan,
    pub radio: RadioParams,
    pub lpwa: LpwaParams,
    pub lorawan: LoRaWanParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: Protocol::LpwaMac,
            n_nodes: 50,
            network_load: 4.5,
            horizon_s: 4000.0,
            seed: 1,
            warmup_fraction: 0.05,
            payload_bytes: 40,
            queue_capacity: 64,
            traffic: TrafficMode::Poisson,
            channels: ChannelPlan::default(),
            radio: RadioParams::default(),
            lpwa: LpwaParams::default(),
            lorawan: LoRaWanParams::default(),
        }
    }
}

fn check(ok: bool, field: &'static str, reason: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(field, reason))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::new("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.n_nodes >= 1, "n_nodes", "must be at least 1")?;
        check(
            self.network_load.is_finite() && self.network_load > 0.0,
            "network_load",
            "must be a positive number of packets per second",
        )?;
        check(
            self.horizon_s.is_finite() && self.horizon_s >= 0.0,
            "horizon_s",
            "must be non-negative",
        )?;
        check(
            (0.0..1.0).contains(&self.warmup_fraction),
            "warmup_fraction",
            "must be in [0, 1)",
        )?;
        check(
            self.queue_capacity >= 1,
            "queue_capacity",
            "must be at least 1",
        )?;
        if let TrafficMode::Bursty { burst_size, .. } = self.traffic {
            check(burst_size >= 1, "traffic.burst_size", "must be at least 1")?;
        }
        let r = &self.radio;
        check(
            (7..=12).contains(&r.spreading_factor),
            "radio.spreading_factor",
            "must be in 7..=12",
        )?;
        check(r.bandwidth_hz > 0, "radio.bandwidth_hz", "must be positive")?;
        check(
            (1..=4).contains(&r.coding_rate),
            "radio.coding_rate",
            "must be in 1..=4",
        )?;
        let ch = &self.channels;
        check(
            ch.uplink >= 1,
            "channels.uplink",
            "need at least one uplink channel",
        )?;
        check(
            DutyLimit::from_fraction(ch.node_duty_cycle).is_some(),
            "channels.node_duty_cycle",
            "must be in (0, 1]",
        )?;
        check(
            DutyLimit::from_fraction(ch.gateway_duty_cycle).is_some(),
            "channels.gateway_duty_cycle",
            "must be in (0, 1]",
        )?;
        check(
            ch.duty_window_s >= 1,
            "channels.duty_window_s",
            "must be positive",
        )?;
        match self.protocol {
            Protocol::LpwaMac => {
                let p = &self.lpwa;
                check(
                    ch.uplink >= 2,
                    "channels.uplink",
                    "lpwa-mac needs a request channel and at least one data channel",
                )?;
                check(
                    ch.downlink >= 1 || p.grants_on_request_channel,
                    "channels.downlink",
                    "grants need a downlink channel unless lpwa.grants_on_request_channel is set",
                )?;
                check(
                    !p.data_acks || ch.downlink >= 1,
                    "lpwa.data_acks",
                    "acks need a downlink channel",
                )?;
                check(
                    p.max_slots_per_grant >= 1,
                    "lpwa.max_slots_per_grant",
                    "must be at least 1",
                )?;
                check(
                    p.request_timeout_ms >= 1,
                    "lpwa.request_timeout_ms",
                    "must be positive",
                )?;
                check(
                    p.max_request_retries <= 30,
                    "lpwa.max_request_retries",
                    "at most 30",
                )?;
            }
            Protocol::LoRaWan => {
                let p = &self.lorawan;
                check(
                    !p.confirmed || ch.downlink >= 1,
                    "channels.downlink",
                    "confirmed lorawan needs a downlink channel for acks",
                )?;
                check(
                    p.backoff_min_ms <= p.backoff_max_ms,
                    "lorawan.backoff_min_ms",
                    "must not exceed lorawan.backoff_max_ms",
                )?;
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> SimTime {
        SimTime::from_secs_f64(self.horizon_s)
    }

    pub fn warmup_end(&self) -> SimTime {
        SimTime::from_secs_f64(self.horizon_s * self.warmup_fraction)
    }

    pub fn n_channels(&self) -> usize {
        (self.channels.uplink + self.channels.downlink) as usize
    }

    /// Uplink channels are `0..uplink`, downlink channels follow.
    pub fn channel_list(&self) -> Vec<Channel> {
        let node = DutyLimit::from_fraction(self.channels.node_duty_cycle).expect("validated");
        (0..self.channels.uplink + self.channels.downlink)
            .map(|i| Channel {
                id: ChannelId(i),
                direction: if i < self.channels.uplink {
                    Direction::Uplink
                } else {
                    Direction::Downlink
                },
                duty_cycle_limit: node,
            })
            .collect()
    }

    pub fn gateway_duty(&self) -> DutyLimit {
        DutyLimit::from_fraction(self.channels.gateway_duty_cycle).expect("validated")
    }

    pub fn duty_window(&self) -> SimDuration {
        SimDuration::from_secs(self.channels.duty_window_s)
    }

    pub fn first_downlink(&self) -> Option<ChannelId> {
        (self.channels.downlink > 0).then_some(ChannelId(self.channels.uplink))
    }

    pub fn traffic_spec(&self) -> TrafficSpec {
        TrafficSpec {
            mode: self.traffic,
            network_load: self.network_load,
            n_nodes: self.n_nodes,
        }
    }

    pub fn airtime_of(&self, bytes: u32) -> SimDuration {
        airtime(bytes, &self.radio).expect("validated radio params")
    }
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NetworkLoad,
    NNodes,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::NetworkLoad => "network_load",
            SweepParam::NNodes => "n_nodes",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) {
        match self {
            SweepParam::NetworkLoad => cfg.network_load = value,
            SweepParam::NNodes => cfg.n_nodes = value.round() as u32,
        }
    }
}

impl FromStr for SweepParam {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "network_load" | "load" => Ok(SweepParam::NetworkLoad),
            "n_nodes" | "nodes" => Ok(SweepParam::NNodes),
            other => Err(ConfigError::new(
                "param",
                format!("unknown sweep parameter `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub protocols: Vec<Protocol>,
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Seeds used are `base.seed .. base.seed + seeds`.
    pub seeds: u32,
}

pub const FIG1_LOADS: [f64; 5] = [2.5, 4.5, 6.5, 8.5, 10.0];
pub const FIG2_NODES: [f64; 5] = [25.0, 50.0, 100.0, 150.0, 200.0];

impl SweepSpec {
    /// Both protocols at 50 nodes over loads 2.5..10 pkt/s.
    pub fn fig1(base: ExperimentConfig, seeds: u32) -> Self {
        SweepSpec {
            base: ExperimentConfig {
                n_nodes: 50,
                ..base
            },
            protocols: Protocol::ALL.to_vec(),
            param: SweepParam::NetworkLoad,
            values: FIG1_LOADS.to_vec(),
            seeds,
        }
    }

    /// Both protocols at 4.5 pkt/s over 25..200 nodes.
    pub fn fig2(base: ExperimentConfig, seeds: u32) -> Self {
        SweepSpec {
            base: ExperimentConfig {
                network_load: 4.5,
                ..base
            },
            protocols: Protocol::ALL.to_vec(),
            param: SweepParam::NNodes,
            values: FIG2_NODES.to_vec(),
            seeds,
        }
    }

    pub fn preset(name: &str, base: ExperimentConfig, seeds: u32) -> Result<Self, ConfigError> {
        match name {
            "fig1" => Ok(Self::fig1(base, seeds)),
            "fig2" => Ok(Self::fig2(base, seeds)),
            other => Err(ConfigError::new(
                "preset",
                format!("unknown preset `{other}` (expected fig1 or fig2)"),
            )),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            !self.values.is_empty(),
            "values",
            "sweep needs at least one value",
        )?;
        check(self.seeds >= 1, "seeds", "sweep needs at least one seed")?;
        check(
            !self.protocols.is_empty(),
            "protocols",
            "sweep needs a protocol",
        )?;
        Ok(())
    }

    /// Every (protocol, value, seed) point in a fixed order.
    pub fn points(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &protocol in &self.protocols {
            for &v in &self.values {
                for s in 0..self.seeds {
                    let mut cfg = self.base.clone();
                    cfg.protocol = protocol;
                    self.param.apply(&mut cfg, v);
                    cfg.seed = self.base.seed + s as u64;
                    out.push(cfg);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_matches_reference_setup() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.channels.uplink, 3);
        assert_eq!(cfg.channels.downlink, 1);
        assert_eq!(cfg.channels.node_duty_cycle, 0.01);
        assert_eq!(cfg.payload_bytes, 40);
        assert_eq!(cfg.radio.spreading_factor, 7);
        assert_eq!(cfg.airtime_of(cfg.payload_bytes), SimDuration(82_176));
    }

    #[test]
    fn toml_round_trip_of_effective_config() {
        let mut cfg = ExperimentConfig {
            protocol: Protocol::LoRaWan,
            network_load: 8.5,
            traffic: TrafficMode::Bursty {
                burst_size: 3,
                burst_spacing_ms: 5,
            },
            ..Default::default()
        };
        cfg.radio.low_data_rate_optimize = Some(false);
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "protocol = \"lorawan\"\nn_nodes = 25\n[lorawan]\nconfirmed = false\n",
        )
        .unwrap();
        assert_eq!(cfg.protocol, Protocol::LoRaWan);
        assert_eq!(cfg.n_nodes, 25);
        assert!(!cfg.lorawan.confirmed);
        assert_eq!(cfg.lorawan.max_retransmissions, 8);
        assert_eq!(cfg.lpwa, LpwaParams::default());
    }

    #[test]
    fn bad_values_name_their_field() {
        let cases = [
            ("n_nodes = 0", "n_nodes"),
            ("network_load = -1.0", "network_load"),
            ("horizon_s = -5.0", "horizon_s"),
            ("[radio]\nspreading_factor = 13", "radio.spreading_factor"),
            (
                "[channels]\nnode_duty_cycle = 0.0",
                "channels.node_duty_cycle",
            ),
            ("[channels]\nuplink = 1", "channels.uplink"),
            (
                "[lpwa]\nmax_slots_per_grant = 0",
                "lpwa.max_slots_per_grant",
            ),
            ("typo_field = 3", "config"),
        ];
        for (text, field) in cases {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(err.field, field, "{text}");
        }
    }

    #[test]
    fn channel_plan_layout() {
        let cfg = ExperimentConfig::default();
        let chans = cfg.channel_list();
        assert_eq!(chans.len(), 4);
        assert_eq!(chans[2].direction, Direction::Uplink);
        assert_eq!(chans[3].direction, Direction::Downlink);
        assert_eq!(cfg.first_downlink(), Some(ChannelId(3)));
    }

    #[test]
    fn presets_have_expected_grids() {
        let f1 = SweepSpec::fig1(ExperimentConfig::default(), 3);
        assert_eq!(f1.points().len(), 2 * 5 * 3);
        assert!(f1.points().iter().all(|c| c.n_nodes == 50));
        let f2 = SweepSpec::fig2(ExperimentConfig::default(), 2);
        let pts = f2.points();
        assert_eq!(pts.len(), 2 * 5 * 2);
        assert!(pts.iter().all(|c| c.network_load == 4.5));
        assert_eq!(pts.last().unwrap().n_nodes, 200);
        assert!(SweepSpec::preset("fig3", ExperimentConfig::default(), 1).is_err());
    }

    #[test]
    fn sweep_validation() {
        let mut s = SweepSpec::fig1(ExperimentConfig::default(), 1);
        s.values.clear();
        assert_eq!(s.validate().unwrap_err().field, "values");
        let mut s = SweepSpec::fig1(ExperimentConfig::default(), 0);
        assert_eq!(s.validate().unwrap_err().field, "seeds");
        s.seeds = 1;
        assert!(s.validate().is_ok());
    }
}
