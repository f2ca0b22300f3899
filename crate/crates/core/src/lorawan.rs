//! Pure-ALOHA baseline in the style of a class-A LoRaWAN device sending
//! confirmed uplinks.
//!
//! A node transmits its head-of-line packet as soon as some uplink channel's
//! duty-cycle budget allows, then listens for an ack in a single receive
//! window. Without an ack it backs off and retransmits on a fresh random
//! channel, up to `max_retransmissions` times.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, LoRaWanParams};
use crate::engine::{EventHandle, RngStream, SimDuration, SimTime, StreamPurpose, TraceEvent};
use crate::error::SimError;
use crate::metrics::PacketId;
use crate::phy::{ChannelId, Destination, Entity, FrameId, FrameKind, FrameOutcome};
use crate::sim::{push_bounded, Ctx, GatewayRadio, MacProtocol, TxRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineState {
    Idle,
    WaitDuty,
    Tx,
    AwaitAck,
    RetryBackoff,
}

#[derive(Debug)]
pub struct BaselineNode {
    pub state: BaselineState,
    pub queue: VecDeque<PacketId>,
    pub head: Option<PacketId>,
    pub tx_attempts: u32,
    ack_timer: Option<EventHandle>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoRaWanTimer {
    TrySend {
        node: u32,
    },
    AckTimeout {
        node: u32,
        attempt: u32,
    },
    SendAck {
        node: u32,
        packet: PacketId,
        attempt: u32,
    },
}

impl TraceEvent for LoRaWanTimer {
    fn trace_kind(&self) -> &'static str {
        match self {
            LoRaWanTimer::TrySend { .. } => "try_send",
            LoRaWanTimer::AckTimeout { .. } => "ack_timeout",
            LoRaWanTimer::SendAck { .. } => "send_ack",
        }
    }

    fn trace_target(&self) -> String {
        match self {
            LoRaWanTimer::TrySend { node } | LoRaWanTimer::AckTimeout { node, .. } => {
                node.to_string()
            }
            LoRaWanTimer::SendAck { .. } => "gw".to_string(),
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LoRaWanStats {
    pub transmissions: u64,
    pub acks_sent: u64,
    pub acks_skipped: u64,
    pub retry_exhaustions: u64,
}

pub struct LoRaWanMac {
    params: LoRaWanParams,
    uplinks: Vec<ChannelId>,
    ack_ch: Option<ChannelId>,
    payload_bytes: u32,
    data_air: SimDuration,
    ack_air: SimDuration,
    nodes: Vec<BaselineNode>,
    radio: GatewayRadio,
    /// Attempt number carried by each data frame still in the air.
    attempt_of: std::collections::HashMap<FrameId, u32>,
    pub stats: LoRaWanStats,
}

impl LoRaWanMac {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let nodes = (0..cfg.n_nodes)
            .map(|n| BaselineNode {
                state: BaselineState::Idle,
                queue: VecDeque::new(),
                head: None,
                tx_attempts: 0,
                ack_timer: None,
                rng: RngStream::new(cfg.seed, StreamPurpose::Mac, n).rng(),
            })
            .collect();
        LoRaWanMac {
            params: cfg.lorawan.clone(),
            uplinks: (0..cfg.channels.uplink).map(ChannelId).collect(),
            ack_ch: cfg.first_downlink(),
            payload_bytes: cfg.payload_bytes,
            data_air: cfg.airtime_of(cfg.payload_bytes),
            ack_air: cfg.airtime_of(cfg.lorawan.ack_bytes),
            nodes,
            radio: GatewayRadio::default(),
            attempt_of: Default::default(),
            stats: LoRaWanStats::default(),
        }
    }

    pub fn node(&self, n: u32) -> &BaselineNode {
        &self.nodes[n as usize]
    }

    fn ack_window(&self) -> (SimDuration, SimDuration) {
        let open = SimDuration::from_millis(self.params.rx_delay_ms);
        let close = open + self.ack_air + SimDuration::from_millis(self.params.ack_margin_ms);
        (open, close)
    }

    /// Transmits the head packet now on a random channel whose budget allows
    /// it, or sleeps until the first channel frees up.
    fn try_send(&mut self, ctx: &mut Ctx<'_, LoRaWanTimer>, node: u32) -> Result<(), SimError> {
        let now = ctx.now();
        let who = Entity::Node(node);
        let allowed: Vec<(ChannelId, SimTime)> = self
            .uplinks
            .iter()
            .map(|&c| (c, ctx.ledger.duty_check(who, c, now, self.data_air)))
            .collect();
        let ready: Vec<ChannelId> = allowed
            .iter()
            .filter(|(_, t)| *t == now)
            .map(|(c, _)| *c)
            .collect();
        let n = &mut self.nodes[node as usize];
        let Some(pkt) = n.head else {
            n.state = BaselineState::Idle;
            return Ok(());
        };
        if ready.is_empty() {
            let wake = allowed
                .iter()
                .map(|(_, t)| *t)
                .min()
                .expect("at least one uplink");
            n.state = BaselineState::WaitDuty;
            ctx.schedule(wake, LoRaWanTimer::TrySend { node })?;
            return Ok(());
        }
        let channel = ready[n.rng.random_range(0..ready.len())];
        n.state = BaselineState::Tx;
        n.tx_attempts += 1;
        let attempt = n.tx_attempts;
        ctx.packets.attempt(pkt);
        let id = ctx.transmit(TxRequest {
            src: who,
            dst: Destination::To(Entity::Gateway),
            channel,
            kind: FrameKind::Data,
            payload_bytes: self.payload_bytes,
            air: self.data_air,
            packet: Some(pkt),
        })?;
        self.attempt_of.insert(id, attempt);
        self.stats.transmissions += 1;
        Ok(())
    }

    fn next_packet(&mut self, ctx: &mut Ctx<'_, LoRaWanTimer>, node: u32) -> Result<(), SimError> {
        let n = &mut self.nodes[node as usize];
        n.head = n.queue.pop_front();
        n.tx_attempts = 0;
        if n.head.is_none() {
            n.state = BaselineState::Idle;
            return Ok(());
        }
        self.try_send(ctx, node)
    }

    fn node_tx_done(
        &mut self,
        ctx: &mut Ctx<'_, LoRaWanTimer>,
        node: u32,
        frame: FrameId,
    ) -> Result<(), SimError> {
        if !self.params.confirmed {
            // No feedback in unconfirmed mode; the log still knows the fate.
            let f = ctx.frame(frame);
            if f.outcome == FrameOutcome::Collided {
                let pkt = PacketId(f.app_packet_id.expect("data frame"));
                ctx.packets.drop_packet(pkt);
            }
            return self.next_packet(ctx, node);
        }
        let (_, close) = self.ack_window();
        let n = &mut self.nodes[node as usize];
        n.state = BaselineState::AwaitAck;
        let attempt = n.tx_attempts;
        let h = ctx.schedule(
            ctx.now() + close,
            LoRaWanTimer::AckTimeout { node, attempt },
        )?;
        self.nodes[node as usize].ack_timer = Some(h);
        Ok(())
    }

    fn gateway_rx(
        &mut self,
        ctx: &mut Ctx<'_, LoRaWanTimer>,
        node: u32,
        pkt: PacketId,
        attempt: u32,
    ) -> Result<(), SimError> {
        ctx.packets.deliver(pkt, ctx.now());
        if !self.params.confirmed {
            return Ok(());
        }
        let ch = self
            .ack_ch
            .expect("validated: confirmed mode has a downlink");
        let (open, close) = self.ack_window();
        let now = ctx.now();
        let at = self
            .radio
            .earliest(ctx.ledger, ch, now + open, self.ack_air);
        if at + self.ack_air < now + close {
            self.radio.commit(ctx.ledger, ch, at, self.ack_air);
            ctx.schedule(
                at,
                LoRaWanTimer::SendAck {
                    node,
                    packet: pkt,
                    attempt,
                },
            )?;
            self.stats.acks_sent += 1;
        } else {
            self.stats.acks_skipped += 1;
        }
        Ok(())
    }

    fn on_ack_timeout(
        &mut self,
        ctx: &mut Ctx<'_, LoRaWanTimer>,
        node: u32,
        attempt: u32,
    ) -> Result<(), SimError> {
        let max_tx = 1 + self.params.max_retransmissions;
        let (lo, hi) = (
            self.params.backoff_min_ms * 1000,
            self.params.backoff_max_ms * 1000,
        );
        let n = &mut self.nodes[node as usize];
        if n.state != BaselineState::AwaitAck || n.tx_attempts != attempt {
            return Ok(());
        }
        n.ack_timer = None;
        if n.tx_attempts >= max_tx {
            self.stats.retry_exhaustions += 1;
            if let Some(pkt) = n.head {
                ctx.packets.drop_packet(pkt);
            }
            return self.next_packet(ctx, node);
        }
        n.state = BaselineState::RetryBackoff;
        let backoff = SimDuration(n.rng.random_range(lo..=hi));
        // the backoff runs on top of any duty-cycle wait
        let now = ctx.now();
        let ready = self
            .uplinks
            .iter()
            .map(|&c| {
                ctx.ledger
                    .duty_check(Entity::Node(node), c, now, self.data_air)
            })
            .min()
            .expect("at least one uplink");
        ctx.schedule(ready + backoff, LoRaWanTimer::TrySend { node })?;
        Ok(())
    }

    fn node_on_ack(
        &mut self,
        ctx: &mut Ctx<'_, LoRaWanTimer>,
        node: u32,
        pkt: PacketId,
        attempt: u32,
    ) -> Result<(), SimError> {
        let n = &mut self.nodes[node as usize];
        if n.state != BaselineState::AwaitAck || n.head != Some(pkt) || n.tx_attempts != attempt {
            return Ok(());
        }
        if let Some(h) = n.ack_timer.take() {
            ctx.cancel(h);
        }
        self.next_packet(ctx, node)
    }
}

impl MacProtocol for LoRaWanMac {
    type Timer = LoRaWanTimer;

    fn on_arrival(
        &mut self,
        ctx: &mut Ctx<'_, LoRaWanTimer>,
        node: u32,
        pkt: PacketId,
    ) -> Result<(), SimError> {
        let cap = ctx.queue_capacity;
        let n = &mut self.nodes[node as usize];
        if n.head.is_none() {
            n.head = Some(pkt);
            n.tx_attempts = 0;
            return self.try_send(ctx, node);
        }
        // the head packet occupies one queue place
        push_bounded(&mut n.queue, pkt, cap.saturating_sub(1).max(1), ctx.packets);
        Ok(())
    }

    fn on_frame_end(
        &mut self,
        ctx: &mut Ctx<'_, LoRaWanTimer>,
        id: FrameId,
    ) -> Result<(), SimError> {
        let f = ctx.frame(id).clone();
        match (f.kind, f.src, f.dst) {
            (FrameKind::Data, Entity::Node(node), _) => {
                let attempt = self.attempt_of.remove(&id).expect("data frame registered");
                let pkt = PacketId(f.app_packet_id.expect("data frame carries a packet"));
                self.node_tx_done(ctx, node, id)?;
                if f.outcome == FrameOutcome::Delivered {
                    self.gateway_rx(ctx, node, pkt, attempt)?;
                }
            }
            (FrameKind::Ack, Entity::Gateway, Destination::To(Entity::Node(node))) => {
                if f.outcome == FrameOutcome::Delivered {
                    let pkt = PacketId(f.app_packet_id.expect("ack names its packet"));
                    let attempt = self.attempt_of.remove(&id).expect("ack registered");
                    self.node_on_ack(ctx, node, pkt, attempt)?;
                } else {
                    self.attempt_of.remove(&id);
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn on_timer(
        &mut self,
        ctx: &mut Ctx<'_, LoRaWanTimer>,
        timer: LoRaWanTimer,
    ) -> Result<(), SimError> {
        match timer {
            LoRaWanTimer::TrySend { node } => self.try_send(ctx, node),
            LoRaWanTimer::AckTimeout { node, attempt } => self.on_ack_timeout(ctx, node, attempt),
            LoRaWanTimer::SendAck {
                node,
                packet,
                attempt,
            } => {
                let ch = self.ack_ch.expect("validated");
                let id = ctx.transmit_committed(TxRequest {
                    src: Entity::Gateway,
                    dst: Destination::To(Entity::Node(node)),
                    channel: ch,
                    kind: FrameKind::Ack,
                    payload_bytes: self.params.ack_bytes,
                    air: self.ack_air,
                    packet: Some(packet),
                })?;
                self.attempt_of.insert(id, attempt);
                Ok(())
            }
        }
    }
}
