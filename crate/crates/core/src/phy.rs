//! LoRa physical layer: time on air, a shared medium with destructive
//! collisions, and per-transmitter duty-cycle accounting.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{SimDuration, SimTime};
use crate::error::SimError;

/// Spreading factor, bandwidth and framing options of a LoRa transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub spreading_factor: u8,
    pub bandwidth_hz: u32,
    /// `1..=4`, meaning a coding rate of 4/(4+cr).
    pub coding_rate: u8,
    pub preamble_symbols: u16,
    pub explicit_header: bool,
    pub crc_on: bool,
    /// `None` enables low data rate optimization iff the symbol time is at
    /// least 16 ms.
    pub low_data_rate_optimize: Option<bool>,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            spreading_factor: 7,
            bandwidth_hz: 125_000,
            coding_rate: 1,
            preamble_symbols: 8,
            explicit_header: true,
            crc_on: true,
            low_data_rate_optimize: None,
        }
    }
}

impl RadioParams {
    pub fn with_sf(sf: u8) -> Self {
        RadioParams {
            spreading_factor: sf,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(7..=12).contains(&self.spreading_factor) {
            return Err(SimError::InvalidRadio(format!(
                "spreading factor {} outside 7..=12",
                self.spreading_factor
            )));
        }
        if self.bandwidth_hz == 0 {
            return Err(SimError::InvalidRadio("bandwidth must be positive".into()));
        }
        if !(1..=4).contains(&self.coding_rate) {
            return Err(SimError::InvalidRadio(format!(
                "coding rate {} outside 1..=4",
                self.coding_rate
            )));
        }
        Ok(())
    }

    /// Symbol time in microseconds, exact as a rational `2^SF * 1e6 / BW`.
    fn symbol_us_ratio(&self) -> (u128, u128) {
        (
            (1u128 << self.spreading_factor) * 1_000_000,
            self.bandwidth_hz as u128,
        )
    }

    pub fn symbol_time(&self) -> SimDuration {
        let (num, den) = self.symbol_us_ratio();
        SimDuration((num / den) as u64)
    }

    pub fn ldro(&self) -> bool {
        self.low_data_rate_optimize.unwrap_or_else(|| {
            let (num, den) = self.symbol_us_ratio();
            num >= 16_000 * den
        })
    }

    /// Number of payload symbols, including the 8 fixed symbols.
    pub fn payload_symbols(&self, payload_bytes: u32) -> Result<u64, SimError> {
        let sf = self.spreading_factor as i64;
        let de = self.ldro() as i64;
        let denom = 4 * (sf - 2 * de);
        if denom <= 0 {
            return Err(SimError::InvalidRadio(format!(
                "SF{} with low data rate optimization has no payload capacity",
                sf
            )));
        }
        let crc = self.crc_on as i64;
        let ih = (!self.explicit_header) as i64;
        let num = 8 * payload_bytes as i64 - 4 * sf + 28 + 16 * crc - 20 * ih;
        let blocks = if num <= 0 {
            0
        } else {
            (num + denom - 1) / denom
        };
        Ok(8 + (blocks * (self.coding_rate as i64 + 4)) as u64)
    }
}

/// Time on air of `payload_bytes` under `params`, rounded up to the next
/// microsecond (exact at the standard bandwidths).
pub fn airtime(payload_bytes: u32, params: &RadioParams) -> Result<SimDuration, SimError> {
    params.validate()?;
    let n_payload = params.payload_symbols(payload_bytes)? as u128;
    // (preamble + 4.25 + n_payload) symbols, kept in quarter symbols.
    let quarter_symbols = 4 * (params.preamble_symbols as u128 + n_payload) + 17;
    let (num, den) = params.symbol_us_ratio();
    let total_num = quarter_symbols * num;
    let total_den = 4 * den;
    Ok(SimDuration(total_num.div_ceil(total_den) as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub u16);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
}

/// Fraction of time a transmitter may occupy a channel, kept in parts per
/// million so that off-times are exact integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DutyLimit(u32);

impl DutyLimit {
    pub const UNLIMITED: DutyLimit = DutyLimit(1_000_000);

    pub fn from_fraction(d: f64) -> Option<Self> {
        if !(d > 0.0 && d <= 1.0) {
            return None;
        }
        let ppm = (d * 1e6).round() as u32;
        (ppm > 0).then_some(DutyLimit(ppm))
    }

    pub fn ppm(self) -> u32 {
        self.0
    }

    pub fn fraction(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Mandated silence after a transmission of `air`: `air * (1 - d) / d`.
    pub fn off_time(self, air: SimDuration) -> SimDuration {
        let ppm = self.0 as u128;
        let num = air.0 as u128 * (1_000_000 - ppm);
        SimDuration(num.div_ceil(ppm) as u64)
    }

    /// Airtime budget within a window of length `window`.
    pub fn budget(self, window: SimDuration) -> SimDuration {
        SimDuration((window.0 as u128 * self.0 as u128 / 1_000_000) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channel {
    pub id: ChannelId,
    pub direction: Direction,
    pub duty_cycle_limit: DutyLimit,
}

/// A transmitter/receiver in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entity {
    Node(u32),
    Gateway,
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Node(n) => write!(f, "{n}"),
            Entity::Gateway => f.write_str("gw"),
        }
    }
}

impl FromStr for Entity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gw" => Ok(Entity::Gateway),
            n => n
                .parse()
                .map(Entity::Node)
                .map_err(|_| format!("bad entity `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Destination {
    To(Entity),
    Broadcast,
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::To(e) => e.fmt(f),
            Destination::Broadcast => f.write_str("*"),
        }
    }
}

impl FromStr for Destination {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "*" {
            Ok(Destination::Broadcast)
        } else {
            s.parse().map(Destination::To)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Data,
    Request,
    Grant,
    Ack,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Data => "data",
            FrameKind::Request => "request",
            FrameKind::Grant => "grant",
            FrameKind::Ack => "ack",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameOutcome {
    Delivered,
    Collided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub src: Entity,
    pub dst: Destination,
    pub channel: ChannelId,
    pub payload_bytes: u32,
    pub kind: FrameKind,
    pub t_start: SimTime,
    pub t_end: SimTime,
    pub app_packet_id: Option<u64>,
    pub outcome: FrameOutcome,
}

impl Frame {
    pub fn airtime(&self) -> SimDuration {
        self.t_end - self.t_start
    }

    pub fn overlaps(&self, other: &Frame) -> bool {
        self.t_start < other.t_end && other.t_start < self.t_end
    }
}

/// Shared air interface. Owns the log of every frame ever transmitted.
///
/// Frames must be registered in non-decreasing `t_start` order, which the
/// engine guarantees when `transmit` is called from the frame's start event.
#[derive(Debug)]
pub struct Medium {
    frames: Vec<Frame>,
    active: Vec<Vec<FrameId>>,
    busy_until: HashMap<Entity, SimTime>,
}

impl Medium {
    pub fn new(n_channels: usize) -> Self {
        Medium {
            frames: Vec::new(),
            active: vec![Vec::new(); n_channels],
            busy_until: HashMap::new(),
        }
    }

    pub fn busy_until(&self, entity: Entity) -> SimTime {
        self.busy_until
            .get(&entity)
            .copied()
            .unwrap_or(SimTime::ZERO)
    }

    pub fn is_transmitting(&self, entity: Entity, at: SimTime) -> bool {
        self.busy_until(entity) > at
    }

    /// Registers a frame on its channel. Any temporal overlap with another
    /// frame on the same channel marks both as collided.
    pub fn transmit(&mut self, mut frame: Frame) -> Result<FrameId, SimError> {
        let ch = frame.channel.0 as usize;
        if ch >= self.active.len() {
            return Err(SimError::UnknownChannel(frame.channel));
        }
        let busy = self.busy_until(frame.src);
        if busy > frame.t_start {
            return Err(SimError::HalfDuplexViolation {
                entity: frame.src,
                at: frame.t_start,
                busy_until: busy,
            });
        }
        self.busy_until.insert(frame.src, frame.t_end);

        let frames = &mut self.frames;
        let start = frame.t_start;
        self.active[ch].retain(|id| frames[id.0].t_end > start);
        frame.outcome = FrameOutcome::Delivered;
        for id in &self.active[ch] {
            let other = &mut frames[id.0];
            if other.overlaps(&frame) {
                other.outcome = FrameOutcome::Collided;
                frame.outcome = FrameOutcome::Collided;
            }
        }
        let id = FrameId(frames.len());
        frames.push(frame);
        self.active[ch].push(id);
        Ok(id)
    }

    pub fn frame(&self, id: FrameId) -> &Frame {
        &self.frames[id.0]
    }

    /// Final once every frame that could overlap has been registered, i.e.
    /// by the frame's own end event.
    pub fn outcome(&self, id: FrameId) -> FrameOutcome {
        self.frames[id.0].outcome
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }
}

#[derive(Debug, Default)]
struct DutyAccount {
    history: VecDeque<(SimTime, SimTime)>,
    last: Option<(SimTime, SimDuration)>,
}

/// Per (transmitter, channel) airtime history.
///
/// `duty_check` enforces the post-transmission off-time
/// `T_air * (1 - d) / d` and additionally never lets airtime within any
/// sliding window exceed `d * W`.
#[derive(Debug)]
pub struct DutyCycleLedger {
    window: SimDuration,
    channel_limits: Vec<DutyLimit>,
    gateway_limit: DutyLimit,
    accounts: HashMap<(Entity, ChannelId), DutyAccount>,
}

impl DutyCycleLedger {
    pub fn new(channels: &[Channel], gateway_limit: DutyLimit, window: SimDuration) -> Self {
        DutyCycleLedger {
            window,
            channel_limits: channels.iter().map(|c| c.duty_cycle_limit).collect(),
            gateway_limit,
            accounts: HashMap::new(),
        }
    }

    pub fn window(&self) -> SimDuration {
        self.window
    }

    pub fn limit(&self, tx: Entity, ch: ChannelId) -> DutyLimit {
        match tx {
            Entity::Gateway => self.gateway_limit,
            Entity::Node(_) => self.channel_limits[ch.0 as usize],
        }
    }

    /// Earliest start `>= t` at which `tx` may transmit for `dur` on `ch`,
    /// or [`SimTime::NEVER`] if `dur` exceeds the whole window budget.
    pub fn duty_check(&self, tx: Entity, ch: ChannelId, t: SimTime, dur: SimDuration) -> SimTime {
        let limit = self.limit(tx, ch);
        if dur > limit.budget(self.window) {
            return SimTime::NEVER;
        }
        let Some(acct) = self.accounts.get(&(tx, ch)) else {
            return t;
        };
        let mut earliest = t;
        if let Some((end, air)) = acct.last {
            earliest = earliest.max(end + limit.off_time(air));
        }
        earliest.max(self.window_allowed(acct, limit, dur))
    }

    fn window_allowed(&self, acct: &DutyAccount, limit: DutyLimit, dur: SimDuration) -> SimTime {
        let budget = limit.budget(self.window).0;
        let total: u64 = acct.history.iter().map(|(s, e)| e.0 - s.0).sum();
        if total + dur.0 <= budget {
            return SimTime::ZERO;
        }
        // Slide the window start `s` forward until the airtime still inside
        // [s, ..) leaves room for `dur`.
        let need = budget.saturating_sub(dur.0);
        let mut remaining = total;
        for &(a, b) in &acct.history {
            let len = b.0 - a.0;
            let rest = remaining - len;
            if rest + len <= need {
                break;
            }
            if rest <= need {
                let s = b.0 - (need - rest);
                return SimTime(s + self.window.0 - dur.0);
            }
            remaining = rest;
        }
        // `dur` alone exceeds the budget; the next start after all history.
        let last_end = acct.history.back().map(|x| x.1 .0).unwrap_or(0);
        SimTime(last_end + self.window.0)
    }

    pub fn record(&mut self, tx: Entity, ch: ChannelId, start: SimTime, end: SimTime) {
        let window = self.window;
        let acct = self.accounts.entry((tx, ch)).or_default();
        while let Some(&(_, e)) = acct.history.front() {
            if e.0 + window.0 <= start.0 {
                acct.history.pop_front();
            } else {
                break;
            }
        }
        acct.history.push_back((start, end));
        acct.last = Some((end, end - start));
    }
}
