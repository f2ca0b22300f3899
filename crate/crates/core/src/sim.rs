//! Wires the engine, medium, duty-cycle ledger, traffic sources and one MAC
//! protocol into a single deterministic run.

use std::io::Write;

use crate::config::{ExperimentConfig, Protocol};
use crate::engine::{EventHandle, Scheduler, SimDuration, SimTime, TraceEvent};
use crate::error::{ConfigError, RunError, SimError};
use crate::lorawan::LoRaWanMac;
use crate::lpwa::{Grant, LpwaMac};
use crate::metrics::{
    compute_metrics, MetricsSummary, MetricsWindow, PacketId, PacketLog, PacketRecord,
};
use crate::phy::{
    Channel, ChannelId, Destination, DutyCycleLedger, Entity, Frame, FrameId, FrameKind,
    FrameOutcome, Medium,
};
use crate::traffic::{Arrival, NodeTraffic};

#[derive(Debug, Clone)]
pub enum SimEvent<T> {
    Arrival { node: u32 },
    FrameEnd { frame: FrameId },
    Timer(T),
}

impl<T: TraceEvent> TraceEvent for SimEvent<T> {
    fn trace_kind(&self) -> &'static str {
        match self {
            SimEvent::Arrival { .. } => "arrival",
            SimEvent::FrameEnd { .. } => "frame_end",
            SimEvent::Timer(t) => t.trace_kind(),
        }
    }

    fn trace_target(&self) -> String {
        match self {
            SimEvent::Arrival { node } => node.to_string(),
            SimEvent::FrameEnd { frame } => format!("frame{}", frame.0),
            SimEvent::Timer(t) => t.trace_target(),
        }
    }
}

/// Mutable view of the shared run state handed to protocol handlers.
pub struct Ctx<'a, T> {
    pub sched: &'a mut Scheduler<SimEvent<T>>,
    pub medium: &'a mut Medium,
    pub ledger: &'a mut DutyCycleLedger,
    pub packets: &'a mut PacketLog,
    pub queue_capacity: usize,
}

/// What a transmitter wants to put on air.
#[derive(Debug, Clone, Copy)]
pub struct TxRequest {
    pub src: Entity,
    pub dst: Destination,
    pub channel: ChannelId,
    pub kind: FrameKind,
    pub payload_bytes: u32,
    pub air: SimDuration,
    pub packet: Option<PacketId>,
}

impl<T> Ctx<'_, T> {
    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn schedule(&mut self, at: SimTime, timer: T) -> Result<EventHandle, SimError> {
        self.sched.schedule(at, SimEvent::Timer(timer))
    }

    pub fn cancel(&mut self, h: EventHandle) {
        self.sched.cancel(h);
    }

    fn put_on_air(&mut self, tx: TxRequest) -> Result<FrameId, SimError> {
        let now = self.now();
        let id = self.medium.transmit(Frame {
            src: tx.src,
            dst: tx.dst,
            channel: tx.channel,
            payload_bytes: tx.payload_bytes,
            kind: tx.kind,
            t_start: now,
            t_end: now + tx.air,
            app_packet_id: tx.packet.map(|p| p.0),
            outcome: FrameOutcome::Delivered,
        })?;
        self.sched
            .schedule(now + tx.air, SimEvent::FrameEnd { frame: id })?;
        Ok(id)
    }

    /// Starts a transmission now. The transmitter's duty-cycle budget must
    /// already allow it.
    pub fn transmit(&mut self, tx: TxRequest) -> Result<FrameId, SimError> {
        let now = self.now();
        let allowed = self.ledger.duty_check(tx.src, tx.channel, now, tx.air);
        if allowed > now {
            return Err(SimError::DutyCycleViolation {
                entity: tx.src,
                channel: tx.channel,
                at: now,
                allowed,
            });
        }
        self.ledger.record(tx.src, tx.channel, now, now + tx.air);
        self.put_on_air(tx)
    }

    /// Starts a transmission whose airtime was already booked with
    /// [`GatewayRadio::commit`].
    pub fn transmit_committed(&mut self, tx: TxRequest) -> Result<FrameId, SimError> {
        self.put_on_air(tx)
    }

    pub fn frame(&self, id: FrameId) -> &Frame {
        self.medium.frame(id)
    }
}

/// The gateway's single transmit chain. Downlink airtime is booked in the
/// ledger when a transmission is decided, so later decisions see it even
/// before it starts.
#[derive(Debug, Default)]
pub struct GatewayRadio {
    next_free: SimTime,
}

impl GatewayRadio {
    /// Earliest start `>= earliest` for `air` on `ch`.
    pub fn earliest(
        &self,
        ledger: &DutyCycleLedger,
        ch: ChannelId,
        earliest: SimTime,
        air: SimDuration,
    ) -> SimTime {
        let t = earliest.max(self.next_free);
        ledger.duty_check(Entity::Gateway, ch, t, air)
    }

    pub fn commit(
        &mut self,
        ledger: &mut DutyCycleLedger,
        ch: ChannelId,
        start: SimTime,
        air: SimDuration,
    ) {
        ledger.record(Entity::Gateway, ch, start, start + air);
        self.next_free = start + air;
    }
}

pub trait MacProtocol {
    type Timer: TraceEvent + Clone;

    fn on_arrival(
        &mut self,
        ctx: &mut Ctx<'_, Self::Timer>,
        node: u32,
        pkt: PacketId,
    ) -> Result<(), SimError>;
    fn on_frame_end(
        &mut self,
        ctx: &mut Ctx<'_, Self::Timer>,
        frame: FrameId,
    ) -> Result<(), SimError>;
    fn on_timer(
        &mut self,
        ctx: &mut Ctx<'_, Self::Timer>,
        timer: Self::Timer,
    ) -> Result<(), SimError>;

    /// Grants issued during the run, if the protocol has any.
    fn grants(&self) -> Vec<Grant> {
        Vec::new()
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub channels: Vec<Channel>,
    pub records: Vec<PacketRecord>,
    pub frames: Vec<Frame>,
    pub grants: Vec<Grant>,
    pub summary: MetricsSummary,
    pub events_dispatched: u64,
}

impl RunOutput {
    pub fn metrics_window(&self) -> MetricsWindow {
        metrics_window(&self.config)
    }
}

pub fn metrics_window(cfg: &ExperimentConfig) -> MetricsWindow {
    MetricsWindow {
        horizon: cfg.horizon(),
        warmup_end: cfg.warmup_end(),
        n_channels: cfg.n_channels(),
    }
}

fn run_protocol<P: MacProtocol>(
    cfg: &ExperimentConfig,
    mut mac: P,
    script: Option<&[Arrival]>,
    trace: Option<Box<dyn Write + Send>>,
) -> Result<RunOutput, SimError> {
    let channels = cfg.channel_list();
    let horizon = cfg.horizon();
    let mut sched: Scheduler<SimEvent<P::Timer>> = Scheduler::new();
    if let Some(t) = trace {
        sched.set_trace(t);
    }
    let mut medium = Medium::new(channels.len());
    let mut ledger = DutyCycleLedger::new(&channels, cfg.gateway_duty(), cfg.duty_window());
    let mut packets = PacketLog::new();

    let mut sources: Vec<NodeTraffic> = Vec::new();
    match script {
        Some(arrivals) => {
            for a in arrivals.iter().filter(|a| a.t <= horizon) {
                sched.schedule(a.t, SimEvent::Arrival { node: a.node })?;
            }
        }
        None => {
            let spec = cfg.traffic_spec();
            sources = (0..cfg.n_nodes)
                .map(|n| NodeTraffic::new(&spec, cfg.seed, n))
                .collect();
            for (n, src) in sources.iter_mut().enumerate() {
                let t = src.next_arrival();
                if t <= horizon {
                    sched.schedule(t, SimEvent::Arrival { node: n as u32 })?;
                }
            }
        }
    }

    let queue_capacity = cfg.queue_capacity;
    sched.run_until(horizon, |sched, ev| {
        let mut ctx = Ctx {
            sched,
            medium: &mut medium,
            ledger: &mut ledger,
            packets: &mut packets,
            queue_capacity,
        };
        match ev.kind {
            SimEvent::Arrival { node } => {
                let pkt = ctx.packets.generate(node, ev.fire_at);
                if let Some(src) = sources.get_mut(node as usize) {
                    let next = src.next_arrival();
                    if next <= horizon {
                        ctx.sched.schedule(next, SimEvent::Arrival { node })?;
                    }
                }
                mac.on_arrival(&mut ctx, node, pkt)
            }
            SimEvent::FrameEnd { frame } => mac.on_frame_end(&mut ctx, frame),
            SimEvent::Timer(t) => mac.on_timer(&mut ctx, t),
        }
    })?;

    let records = packets.into_records();
    let frames = medium.into_frames();
    let summary = compute_metrics(&records, &frames, &metrics_window(cfg));
    Ok(RunOutput {
        config: cfg.clone(),
        channels,
        grants: mac.grants(),
        records,
        frames,
        summary,
        events_dispatched: sched.dispatched(),
    })
}

/// Runs one configured simulation to its horizon.
pub fn simulate(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    simulate_traced(cfg, None)
}

pub fn simulate_traced(
    cfg: &ExperimentConfig,
    trace: Option<Box<dyn Write + Send>>,
) -> Result<RunOutput, RunError> {
    dispatch(cfg, None, trace)
}

/// Like [`simulate`], but packets arrive exactly at the given times instead
/// of being drawn from the traffic model. Arrivals for nodes outside
/// `0..n_nodes` are rejected.
pub fn simulate_scripted(
    cfg: &ExperimentConfig,
    arrivals: &[Arrival],
) -> Result<RunOutput, RunError> {
    if let Some(a) = arrivals.iter().find(|a| a.node >= cfg.n_nodes) {
        return Err(ConfigError::new("arrivals", format!("node {} does not exist", a.node)).into());
    }
    dispatch(cfg, Some(arrivals), None)
}

fn dispatch(
    cfg: &ExperimentConfig,
    script: Option<&[Arrival]>,
    trace: Option<Box<dyn Write + Send>>,
) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let out = match cfg.protocol {
        Protocol::LpwaMac => run_protocol(cfg, LpwaMac::new(cfg), script, trace)?,
        Protocol::LoRaWan => run_protocol(cfg, LoRaWanMac::new(cfg), script, trace)?,
    };
    Ok(out)
}

/// Appends `pkt` to a FIFO holding at most `capacity` packets. On overflow the
/// oldest queued packet is dropped and recorded as such.
pub fn push_bounded(
    queue: &mut std::collections::VecDeque<PacketId>,
    pkt: PacketId,
    capacity: usize,
    packets: &mut PacketLog,
) {
    queue.push_back(pkt);
    while queue.len() > capacity {
        if let Some(old) = queue.pop_front() {
            packets.drop_packet(old);
        }
    }
}
