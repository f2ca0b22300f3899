//! Request/grant MAC with gateway-side traffic differentiation.
//!
//! A node with queued packets sends a request on the shared request channel
//! (unslotted, contention based). The gateway answers with a grant that
//! places each requested slot on one of the data channels at an absolute
//! time. The node sleeps until each slot and transmits exactly inside it;
//! because the gateway never hands out overlapping slots, data frames cannot
//! collide. Consecutive slots of one grant may land on different channels so
//! a bursty node keeps sending while its per-channel off-time runs.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, LpwaParams};
use crate::engine::{EventHandle, RngStream, SimDuration, SimTime, StreamPurpose, TraceEvent};
use crate::error::SimError;
use crate::metrics::PacketId;
use crate::phy::{
    Channel, ChannelId, Destination, DutyCycleLedger, Entity, FrameId, FrameKind, FrameOutcome,
};
use crate::sim::{push_bounded, Ctx, GatewayRadio, MacProtocol, TxRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeFsm {
    Idle,
    BackoffRequest,
    AwaitGrant,
    SleepUntilSlot,
    Transmit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestMsg {
    pub node: u32,
    pub slots_requested: u32,
    pub seq: u32,
}

/// `slot_count` back-to-back slots on one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub channel: ChannelId,
    pub slot_start: SimTime,
    pub slot_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub node: u32,
    pub seq: u32,
    pub allocations: Vec<Allocation>,
    pub slot_len: SimDuration,
}

impl Grant {
    fn from_slots(
        node: u32,
        seq: u32,
        slots: &[(ChannelId, SimTime)],
        slot_len: SimDuration,
    ) -> Self {
        let mut allocations: Vec<Allocation> = Vec::new();
        for &(channel, start) in slots {
            match allocations.last_mut() {
                Some(a)
                    if a.channel == channel
                        && a.slot_start + SimDuration(slot_len.0 * a.slot_count as u64)
                            == start =>
                {
                    a.slot_count += 1
                }
                _ => allocations.push(Allocation {
                    channel,
                    slot_start: start,
                    slot_count: 1,
                }),
            }
        }
        Grant {
            node,
            seq,
            allocations,
            slot_len,
        }
    }

    /// Every slot as `(channel, start)` in transmission order.
    pub fn slots(&self) -> Vec<(ChannelId, SimTime)> {
        self.allocations
            .iter()
            .flat_map(|a| {
                (0..a.slot_count as u64)
                    .map(move |k| (a.channel, a.slot_start + SimDuration(self.slot_len.0 * k)))
            })
            .collect()
    }

    pub fn slot_count(&self) -> u32 {
        self.allocations.iter().map(|a| a.slot_count).sum()
    }

    /// True if `[start, end)` on `channel` lies inside one granted slot.
    pub fn covers(&self, channel: ChannelId, start: SimTime, end: SimTime) -> bool {
        self.slots()
            .iter()
            .any(|&(c, s)| c == channel && s <= start && end <= s + self.slot_len)
    }
}

/// Gateway view of the data channels: reserved slot intervals per channel
/// plus a mirror of each node's duty-cycle ledger for the slots it granted.
#[derive(Debug)]
pub struct GatewaySchedule {
    data_channels: Vec<ChannelId>,
    reservations: Vec<Vec<(SimTime, SimTime)>>,
    node_duty: DutyCycleLedger,
}

impl GatewaySchedule {
    pub fn new(
        data_channels: Vec<ChannelId>,
        all_channels: &[Channel],
        window: SimDuration,
    ) -> Self {
        let n = data_channels.len();
        GatewaySchedule {
            data_channels,
            reservations: vec![Vec::new(); n],
            // the gateway limit is irrelevant for a ledger that only tracks nodes
            node_duty: DutyCycleLedger::new(all_channels, crate::phy::DutyLimit::UNLIMITED, window),
        }
    }

    pub fn data_channels(&self) -> &[ChannelId] {
        &self.data_channels
    }

    pub fn reservations(&self, idx: usize) -> &[(SimTime, SimTime)] {
        &self.reservations[idx]
    }

    /// Earliest start `>= lower` of a free gap of length `len`.
    fn first_fit(list: &[(SimTime, SimTime)], lower: SimTime, len: SimDuration) -> SimTime {
        let from = list.partition_point(|&(_, e)| e <= lower);
        let mut cand = lower;
        for &(s, e) in &list[from..] {
            if cand + len <= s {
                break;
            }
            cand = cand.max(e);
        }
        cand
    }

    fn prune(&mut self, now: SimTime) {
        for list in &mut self.reservations {
            let cut = list.partition_point(|&(_, e)| e <= now);
            list.drain(..cut);
        }
    }

    /// Places up to `slots_requested` slots for `node`, each as early as
    /// possible and no earlier than `earliest`. Slot starts later than
    /// `latest` are not granted. Returns `None` if not even the first slot
    /// fits.
    pub fn allocate(
        &mut self,
        req: &RequestMsg,
        now: SimTime,
        earliest: SimTime,
        latest: SimTime,
        air: SimDuration,
        slot_len: SimDuration,
    ) -> Option<Grant> {
        self.prune(now);
        let who = Entity::Node(req.node);
        let mut slots = Vec::new();
        let mut lower = earliest;
        for _ in 0..req.slots_requested {
            let mut best: Option<(SimTime, usize)> = None;
            for (i, &ch) in self.data_channels.iter().enumerate() {
                let duty_ok = self.node_duty.duty_check(who, ch, lower, air);
                let start = Self::first_fit(&self.reservations[i], duty_ok, slot_len);
                if best.is_none_or(|(b, _)| start < b) {
                    best = Some((start, i));
                }
            }
            let (start, i) = best?;
            if start > latest {
                break;
            }
            let ch = self.data_channels[i];
            let list = &mut self.reservations[i];
            let pos = list.partition_point(|&(s, _)| s < start);
            list.insert(pos, (start, start + slot_len));
            self.node_duty.record(who, ch, start, start + air);
            slots.push((ch, start));
            lower = start + slot_len;
        }
        if slots.is_empty() {
            return None;
        }
        Some(Grant::from_slots(req.node, req.seq, &slots, slot_len))
    }
}

#[derive(Debug)]
pub struct LpwaNode {
    pub state: NodeFsm,
    pub queue: VecDeque<PacketId>,
    pub retry_count: u32,
    pub current_grant: Option<Grant>,
    covered: Vec<PacketId>,
    req_seq: u32,
    timeout: Option<EventHandle>,
    slots: Vec<(ChannelId, SimTime)>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Downlink {
    Grant(usize),
    Ack { node: u32, packet: PacketId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpwaTimer {
    SendRequest { node: u32 },
    RequestTimeout { node: u32, seq: u32 },
    SlotStart { node: u32, slot: usize },
    GatewayTx { what: Downlink },
}

impl TraceEvent for LpwaTimer {
    fn trace_kind(&self) -> &'static str {
        match self {
            LpwaTimer::SendRequest { .. } => "send_request",
            LpwaTimer::RequestTimeout { .. } => "request_timeout",
            LpwaTimer::SlotStart { .. } => "slot_start",
            LpwaTimer::GatewayTx { .. } => "gateway_tx",
        }
    }

    fn trace_target(&self) -> String {
        match self {
            LpwaTimer::SendRequest { node }
            | LpwaTimer::RequestTimeout { node, .. }
            | LpwaTimer::SlotStart { node, .. } => node.to_string(),
            LpwaTimer::GatewayTx { .. } => "gw".to_string(),
        }
    }
}

/// Counters that are handy when reasoning about a run.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LpwaStats {
    pub requests_sent: u64,
    pub requests_received: u64,
    pub refused_gateway_busy: u64,
    pub refused_no_slot: u64,
    pub grants_accepted: u64,
    pub request_exhaustions: u64,
}

pub struct LpwaMac {
    params: LpwaParams,
    request_ch: ChannelId,
    grant_ch: ChannelId,
    ack_ch: Option<ChannelId>,
    payload_bytes: u32,
    data_air: SimDuration,
    request_air: SimDuration,
    grant_air: SimDuration,
    ack_air: SimDuration,
    slot_len: SimDuration,
    nodes: Vec<LpwaNode>,
    schedule: GatewaySchedule,
    radio: GatewayRadio,
    issued: Vec<Grant>,
    requests_in_air: HashMap<FrameId, RequestMsg>,
    grants_in_air: HashMap<FrameId, usize>,
    pub stats: LpwaStats,
}

impl LpwaMac {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let p = cfg.lpwa.clone();
        let request_ch = ChannelId(0);
        let grant_ch = if p.grants_on_request_channel {
            request_ch
        } else {
            cfg.first_downlink()
                .expect("validated: downlink channel present")
        };
        let data_channels = (1..cfg.channels.uplink).map(ChannelId).collect();
        let data_air = cfg.airtime_of(cfg.payload_bytes);
        let nodes = (0..cfg.n_nodes)
            .map(|n| LpwaNode {
                state: NodeFsm::Idle,
                queue: VecDeque::new(),
                retry_count: 0,
                current_grant: None,
                covered: Vec::new(),
                req_seq: 0,
                timeout: None,
                slots: Vec::new(),
                rng: RngStream::new(cfg.seed, StreamPurpose::Mac, n).rng(),
            })
            .collect();
        LpwaMac {
            request_ch,
            grant_ch,
            ack_ch: cfg.first_downlink(),
            payload_bytes: cfg.payload_bytes,
            data_air,
            request_air: cfg.airtime_of(p.request_bytes),
            grant_air: cfg.airtime_of(p.grant_bytes),
            ack_air: cfg.airtime_of(p.ack_bytes),
            slot_len: data_air + SimDuration::from_millis(p.guard_ms),
            nodes,
            schedule: GatewaySchedule::new(data_channels, &cfg.channel_list(), cfg.duty_window()),
            radio: GatewayRadio::default(),
            issued: Vec::new(),
            requests_in_air: HashMap::new(),
            grants_in_air: HashMap::new(),
            params: p,
            stats: LpwaStats::default(),
        }
    }

    pub fn node(&self, n: u32) -> &LpwaNode {
        &self.nodes[n as usize]
    }

    pub fn slot_len(&self) -> SimDuration {
        self.slot_len
    }

    /// Schedules the next request `backoff` after the request channel's
    /// duty budget allows one. Counting the backoff from the end of the
    /// off-time keeps nodes whose requests collided from retrying in
    /// lockstep.
    fn start_request(
        &mut self,
        ctx: &mut Ctx<'_, LpwaTimer>,
        node: u32,
        backoff: SimDuration,
    ) -> Result<(), SimError> {
        let now = ctx.now();
        let at = ctx
            .ledger
            .duty_check(Entity::Node(node), self.request_ch, now, self.request_air)
            + backoff;
        self.nodes[node as usize].state = NodeFsm::BackoffRequest;
        ctx.schedule(at, LpwaTimer::SendRequest { node })?;
        Ok(())
    }

    fn send_request(&mut self, ctx: &mut Ctx<'_, LpwaTimer>, node: u32) -> Result<(), SimError> {
        let max_slots = self.params.max_slots_per_grant as usize;
        let n = &mut self.nodes[node as usize];
        let k = n.queue.len().min(max_slots);
        if k == 0 {
            n.state = NodeFsm::Idle;
            n.retry_count = 0;
            return Ok(());
        }
        n.req_seq += 1;
        n.covered = n.queue.iter().take(k).copied().collect();
        let msg = RequestMsg {
            node,
            slots_requested: k as u32,
            seq: n.req_seq,
        };
        let id = ctx.transmit(TxRequest {
            src: Entity::Node(node),
            dst: Destination::To(Entity::Gateway),
            channel: self.request_ch,
            kind: FrameKind::Request,
            payload_bytes: self.params.request_bytes,
            air: self.request_air,
            packet: None,
        })?;
        self.requests_in_air.insert(id, msg);
        self.stats.requests_sent += 1;
        Ok(())
    }

    fn on_request_timeout(
        &mut self,
        ctx: &mut Ctx<'_, LpwaTimer>,
        node: u32,
        seq: u32,
    ) -> Result<(), SimError> {
        let max_retries = self.params.max_request_retries;
        let base_us = self.params.backoff_base_ms * 1000;
        let n = &mut self.nodes[node as usize];
        if n.state != NodeFsm::AwaitGrant || n.req_seq != seq {
            return Ok(());
        }
        n.timeout = None;
        n.retry_count += 1;
        if n.retry_count > max_retries {
            self.stats.request_exhaustions += 1;
            let covered = std::mem::take(&mut n.covered);
            n.queue.retain(|p| !covered.contains(p));
            for p in covered {
                ctx.packets.drop_packet(p);
            }
            n.retry_count = 0;
            if n.queue.is_empty() {
                n.state = NodeFsm::Idle;
                return Ok(());
            }
            return self.start_request(ctx, node, SimDuration::ZERO);
        }
        let window = base_us << n.retry_count;
        let backoff = n.rng.random_range(0..window.max(1));
        self.start_request(ctx, node, SimDuration(backoff))
    }

    fn gateway_on_request(
        &mut self,
        ctx: &mut Ctx<'_, LpwaTimer>,
        req: RequestMsg,
    ) -> Result<(), SimError> {
        self.stats.requests_received += 1;
        let now = ctx.now();
        let tx_at = self
            .radio
            .earliest(ctx.ledger, self.grant_ch, now, self.grant_air);
        let deadline = now + SimDuration::from_millis(self.params.request_timeout_ms);
        if tx_at + self.grant_air >= deadline {
            // the requester would have given up before the grant arrives
            self.stats.refused_gateway_busy += 1;
            return Ok(());
        }
        let earliest = tx_at + self.grant_air + SimDuration::from_millis(self.params.turnaround_ms);
        let latest = now + SimDuration::from_secs(self.params.horizon_max_s);
        let Some(grant) =
            self.schedule
                .allocate(&req, now, earliest, latest, self.data_air, self.slot_len)
        else {
            self.stats.refused_no_slot += 1;
            return Ok(());
        };
        self.radio
            .commit(ctx.ledger, self.grant_ch, tx_at, self.grant_air);
        self.issued.push(grant);
        ctx.schedule(
            tx_at,
            LpwaTimer::GatewayTx {
                what: Downlink::Grant(self.issued.len() - 1),
            },
        )?;
        Ok(())
    }

    fn gateway_transmit(
        &mut self,
        ctx: &mut Ctx<'_, LpwaTimer>,
        what: Downlink,
    ) -> Result<(), SimError> {
        match what {
            Downlink::Grant(idx) => {
                let node = self.issued[idx].node;
                let id = ctx.transmit_committed(TxRequest {
                    src: Entity::Gateway,
                    dst: Destination::To(Entity::Node(node)),
                    channel: self.grant_ch,
                    kind: FrameKind::Grant,
                    payload_bytes: self.params.grant_bytes,
                    air: self.grant_air,
                    packet: None,
                })?;
                self.grants_in_air.insert(id, idx);
            }
            Downlink::Ack { node, packet } => {
                let ch = self.ack_ch.expect("validated: acks need a downlink");
                ctx.transmit_committed(TxRequest {
                    src: Entity::Gateway,
                    dst: Destination::To(Entity::Node(node)),
                    channel: ch,
                    kind: FrameKind::Ack,
                    payload_bytes: self.params.ack_bytes,
                    air: self.ack_air,
                    packet: Some(packet),
                })?;
            }
        }
        Ok(())
    }

    fn node_on_grant(
        &mut self,
        ctx: &mut Ctx<'_, LpwaTimer>,
        grant: Grant,
    ) -> Result<(), SimError> {
        let node = grant.node;
        let n = &mut self.nodes[node as usize];
        if n.state != NodeFsm::AwaitGrant || n.req_seq != grant.seq {
            return Ok(());
        }
        if let Some(h) = n.timeout.take() {
            ctx.cancel(h);
        }
        n.retry_count = 0;
        n.covered.clear();
        n.state = NodeFsm::SleepUntilSlot;
        n.slots = grant.slots();
        for (i, &(_, start)) in n.slots.iter().enumerate() {
            ctx.schedule(start, LpwaTimer::SlotStart { node, slot: i })?;
        }
        n.current_grant = Some(grant);
        self.stats.grants_accepted += 1;
        Ok(())
    }

    fn on_slot(
        &mut self,
        ctx: &mut Ctx<'_, LpwaTimer>,
        node: u32,
        slot: usize,
    ) -> Result<(), SimError> {
        let n = &mut self.nodes[node as usize];
        let (channel, _) = n.slots[slot];
        let last = slot + 1 == n.slots.len();
        let Some(pkt) = n.queue.pop_front() else {
            if last {
                return self.finish_grant(ctx, node);
            }
            return Ok(());
        };
        n.state = NodeFsm::Transmit;
        ctx.packets.attempt(pkt);
        ctx.transmit(TxRequest {
            src: Entity::Node(node),
            dst: Destination::To(Entity::Gateway),
            channel,
            kind: FrameKind::Data,
            payload_bytes: self.payload_bytes,
            air: self.data_air,
            packet: Some(pkt),
        })?;
        Ok(())
    }

    fn finish_grant(&mut self, ctx: &mut Ctx<'_, LpwaTimer>, node: u32) -> Result<(), SimError> {
        let n = &mut self.nodes[node as usize];
        n.current_grant = None;
        n.slots.clear();
        if n.queue.is_empty() {
            n.state = NodeFsm::Idle;
            return Ok(());
        }
        self.start_request(ctx, node, SimDuration::ZERO)
    }

    fn node_on_own_frame_end(
        &mut self,
        ctx: &mut Ctx<'_, LpwaTimer>,
        node: u32,
        kind: FrameKind,
    ) -> Result<(), SimError> {
        match kind {
            FrameKind::Request => {
                let timeout = SimDuration::from_millis(self.params.request_timeout_ms);
                let n = &mut self.nodes[node as usize];
                n.state = NodeFsm::AwaitGrant;
                let seq = n.req_seq;
                let h =
                    ctx.schedule(ctx.now() + timeout, LpwaTimer::RequestTimeout { node, seq })?;
                self.nodes[node as usize].timeout = Some(h);
            }
            FrameKind::Data => {
                let n = &mut self.nodes[node as usize];
                let done = n.slots.last().is_none_or(|&(_, start)| ctx.now() >= start);
                if done {
                    self.finish_grant(ctx, node)?;
                } else {
                    n.state = NodeFsm::SleepUntilSlot;
                }
            }
            FrameKind::Grant | FrameKind::Ack => {}
        }
        Ok(())
    }
}

impl MacProtocol for LpwaMac {
    type Timer = LpwaTimer;

    fn on_arrival(
        &mut self,
        ctx: &mut Ctx<'_, LpwaTimer>,
        node: u32,
        pkt: PacketId,
    ) -> Result<(), SimError> {
        let cap = ctx.queue_capacity;
        let n = &mut self.nodes[node as usize];
        push_bounded(&mut n.queue, pkt, cap, ctx.packets);
        if n.state == NodeFsm::Idle {
            self.start_request(ctx, node, SimDuration::ZERO)?;
        }
        Ok(())
    }

    fn on_frame_end(&mut self, ctx: &mut Ctx<'_, LpwaTimer>, id: FrameId) -> Result<(), SimError> {
        let f = ctx.frame(id).clone();
        let delivered = f.outcome == FrameOutcome::Delivered;
        if let Entity::Node(node) = f.src {
            self.node_on_own_frame_end(ctx, node, f.kind)?;
        }
        match f.kind {
            FrameKind::Request => {
                let req = self
                    .requests_in_air
                    .remove(&id)
                    .expect("request registered");
                if delivered {
                    self.gateway_on_request(ctx, req)?;
                }
            }
            FrameKind::Grant => {
                let idx = self.grants_in_air.remove(&id).expect("grant registered");
                if delivered {
                    let grant = self.issued[idx].clone();
                    self.node_on_grant(ctx, grant)?;
                }
            }
            FrameKind::Data => {
                if delivered {
                    let pkt = PacketId(f.app_packet_id.expect("data frames carry a packet"));
                    ctx.packets.deliver(pkt, f.t_end);
                    if self.params.data_acks {
                        let Entity::Node(node) = f.src else {
                            unreachable!()
                        };
                        let ch = self.ack_ch.expect("validated");
                        let at = self.radio.earliest(ctx.ledger, ch, ctx.now(), self.ack_air);
                        let limit =
                            ctx.now() + SimDuration::from_millis(self.params.request_timeout_ms);
                        if at + self.ack_air < limit {
                            self.radio.commit(ctx.ledger, ch, at, self.ack_air);
                            ctx.schedule(
                                at,
                                LpwaTimer::GatewayTx {
                                    what: Downlink::Ack { node, packet: pkt },
                                },
                            )?;
                        }
                    }
                }
            }
            FrameKind::Ack => {}
        }
        Ok(())
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, LpwaTimer>, timer: LpwaTimer) -> Result<(), SimError> {
        match timer {
            LpwaTimer::SendRequest { node } => self.send_request(ctx, node),
            LpwaTimer::RequestTimeout { node, seq } => self.on_request_timeout(ctx, node, seq),
            LpwaTimer::SlotStart { node, slot } => self.on_slot(ctx, node, slot),
            LpwaTimer::GatewayTx { what } => self.gateway_transmit(ctx, what),
        }
    }

    fn grants(&self) -> Vec<Grant> {
        self.issued.clone()
    }
}
