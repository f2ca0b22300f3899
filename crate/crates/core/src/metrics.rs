//! Packet lifecycle records, the frame log, and summary metrics computed
//! from them. Everything here is a pure function of the persisted logs.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::phy::{ChannelId, Destination, Entity, Frame, FrameKind, FrameOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketOutcome {
    Delivered,
    Dropped,
    InFlight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub id: PacketId,
    pub node: u32,
    pub t_generated: SimTime,
    pub t_delivered: Option<SimTime>,
    pub outcome: PacketOutcome,
    pub attempts: u32,
}

/// Owns every packet record of a run, indexed by packet id.
#[derive(Debug, Default)]
pub struct PacketLog {
    records: Vec<PacketRecord>,
}

impl PacketLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn generate(&mut self, node: u32, t: SimTime) -> PacketId {
        let id = PacketId(self.records.len() as u64);
        self.records.push(PacketRecord {
            id,
            node,
            t_generated: t,
            t_delivered: None,
            outcome: PacketOutcome::InFlight,
            attempts: 0,
        });
        id
    }

    pub fn get(&self, id: PacketId) -> &PacketRecord {
        &self.records[id.0 as usize]
    }

    pub fn attempt(&mut self, id: PacketId) {
        self.records[id.0 as usize].attempts += 1;
    }

    /// First reception counts; later duplicates are ignored.
    pub fn deliver(&mut self, id: PacketId, t: SimTime) -> bool {
        let r = &mut self.records[id.0 as usize];
        if r.t_delivered.is_some() {
            return false;
        }
        r.t_delivered = Some(t);
        r.outcome = PacketOutcome::Delivered;
        true
    }

    /// No effect on a packet that already reached the gateway.
    pub fn drop_packet(&mut self, id: PacketId) {
        let r = &mut self.records[id.0 as usize];
        if r.outcome == PacketOutcome::InFlight {
            r.outcome = PacketOutcome::Dropped;
        }
    }

    pub fn is_delivered(&self, id: PacketId) -> bool {
        self.get(id).t_delivered.is_some()
    }

    pub fn records(&self) -> &[PacketRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<PacketRecord> {
        self.records
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    /// Mean generation-to-first-delivery delay in seconds; `None` when no
    /// packet was delivered.
    pub mean_e2e_delay_s: Option<f64>,
    /// delivered / (delivered + dropped); `None` when both are zero.
    pub delivery_ratio: Option<f64>,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub channel_utilization: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsWindow {
    pub horizon: SimTime,
    /// Packets generated before this instant are excluded.
    pub warmup_end: SimTime,
    pub n_channels: usize,
}

pub fn compute_metrics(
    records: &[PacketRecord],
    frames: &[Frame],
    window: &MetricsWindow,
) -> MetricsSummary {
    let mut generated = 0u64;
    let mut delivered = 0u64;
    let mut dropped = 0u64;
    let mut delay_sum_us: u128 = 0;
    for r in records
        .iter()
        .filter(|r| r.t_generated >= window.warmup_end)
    {
        generated += 1;
        match (r.outcome, r.t_delivered) {
            (PacketOutcome::Delivered, Some(t)) => {
                delivered += 1;
                delay_sum_us += (t.0 - r.t_generated.0) as u128;
            }
            (PacketOutcome::Dropped, _) => dropped += 1,
            _ => {}
        }
    }
    let mean_e2e_delay_s = (delivered > 0).then(|| delay_sum_us as f64 / delivered as f64 / 1e6);
    let delivery_ratio =
        (delivered + dropped > 0).then(|| delivered as f64 / (delivered + dropped) as f64);

    let mut busy = vec![0u64; window.n_channels];
    for f in frames {
        let ch = f.channel.0 as usize;
        if ch < busy.len() {
            let end = f.t_end.min(window.horizon);
            busy[ch] += end.0.saturating_sub(f.t_start.0);
        }
    }
    let channel_utilization = busy
        .iter()
        .map(|&b| {
            if window.horizon.0 == 0 {
                0.0
            } else {
                b as f64 / window.horizon.0 as f64
            }
        })
        .collect();

    MetricsSummary {
        mean_e2e_delay_s,
        delivery_ratio,
        generated,
        delivered,
        dropped,
        in_flight: generated - delivered - dropped,
        channel_utilization,
    }
}

/// Text form of an optional metric: the shortest round-trip decimal, or
/// `NaN` when undefined.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "NaN".to_string(),
    }
}

pub fn parse_metric(s: &str) -> Option<f64> {
    match s {
        "NaN" | "" => None,
        s => s.parse().ok(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PacketRow {
    packet_id: u64,
    node_id: u32,
    t_generated_us: u64,
    t_delivered_us: Option<u64>,
    outcome: PacketOutcome,
    attempts: u32,
}

pub fn write_packets_csv<W: Write>(w: W, records: &[PacketRecord]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(PacketRow {
            packet_id: r.id.0,
            node_id: r.node,
            t_generated_us: r.t_generated.0,
            t_delivered_us: r.t_delivered.map(|t| t.0),
            outcome: r.outcome,
            attempts: r.attempts,
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_packets_csv<R: Read>(r: R) -> csv::Result<Vec<PacketRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<PacketRow>()
        .map(|row| {
            row.map(|row| PacketRecord {
                id: PacketId(row.packet_id),
                node: row.node_id,
                t_generated: SimTime(row.t_generated_us),
                t_delivered: row.t_delivered_us.map(SimTime),
                outcome: row.outcome,
                attempts: row.attempts,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRow {
    t_start_us: u64,
    t_end_us: u64,
    channel: u16,
    kind: FrameKind,
    src: String,
    dst: String,
    outcome: FrameOutcome,
}

pub fn write_frames_csv<W: Write>(w: W, frames: &[Frame]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for f in frames {
        wr.serialize(FrameRow {
            t_start_us: f.t_start.0,
            t_end_us: f.t_end.0,
            channel: f.channel.0,
            kind: f.kind,
            src: f.src.to_string(),
            dst: f.dst.to_string(),
            outcome: f.outcome,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a frame log. Payload size and packet id are not persisted and come
/// back as zero / `None`.
pub fn read_frames_csv<R: Read>(r: R) -> anyhow::Result<Vec<Frame>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize::<FrameRow>() {
        let row = row?;
        let src: Entity = row.src.parse().map_err(anyhow::Error::msg)?;
        let dst: Destination = row.dst.parse().map_err(anyhow::Error::msg)?;
        out.push(Frame {
            src,
            dst,
            channel: ChannelId(row.channel),
            payload_bytes: 0,
            kind: row.kind,
            t_start: SimTime(row.t_start_us),
            t_end: SimTime(row.t_end_us),
            app_packet_id: None,
            outcome: row.outcome,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(h: u64) -> MetricsWindow {
        MetricsWindow {
            horizon: SimTime(h),
            warmup_end: SimTime::ZERO,
            n_channels: 2,
        }
    }

    #[test]
    fn one_delivered_packet() {
        let mut log = PacketLog::new();
        let p = log.generate(0, SimTime::ZERO);
        log.deliver(p, SimTime(82_176));
        let m = compute_metrics(log.records(), &[], &window(1_000_000));
        assert_eq!(m.mean_e2e_delay_s, Some(0.082176));
        assert_eq!(m.delivery_ratio, Some(1.0));
    }

    #[test]
    fn delivery_ratio_counts_drops() {
        let mut log = PacketLog::new();
        for i in 0..10 {
            let p = log.generate(0, SimTime(i));
            if i < 8 {
                log.deliver(p, SimTime(i + 5));
            } else {
                log.drop_packet(p);
            }
        }
        let m = compute_metrics(log.records(), &[], &window(100));
        assert_eq!(m.delivery_ratio, Some(0.8));
        assert_eq!((m.generated, m.delivered, m.dropped), (10, 8, 2));
    }

    #[test]
    fn empty_run_has_undefined_metrics() {
        let m = compute_metrics(&[], &[], &window(0));
        assert_eq!(m.generated, 0);
        assert_eq!(m.delivery_ratio, None);
        assert_eq!(m.mean_e2e_delay_s, None);
        assert_eq!(fmt_metric(m.mean_e2e_delay_s), "NaN");
        assert_eq!(m.channel_utilization, vec![0.0, 0.0]);
    }

    #[test]
    fn in_flight_excluded_from_ratio_and_warmup_from_everything() {
        let mut log = PacketLog::new();
        let early = log.generate(0, SimTime(1));
        log.drop_packet(early);
        let a = log.generate(0, SimTime(50));
        log.deliver(a, SimTime(60));
        log.generate(1, SimTime(70));
        let w = MetricsWindow {
            warmup_end: SimTime(10),
            ..window(100)
        };
        let m = compute_metrics(log.records(), &[], &w);
        assert_eq!(
            (m.generated, m.delivered, m.dropped, m.in_flight),
            (2, 1, 0, 1)
        );
        assert_eq!(m.delivery_ratio, Some(1.0));
    }

    #[test]
    fn first_delivery_wins_and_drop_after_delivery_is_ignored() {
        let mut log = PacketLog::new();
        let p = log.generate(0, SimTime(0));
        assert!(log.deliver(p, SimTime(10)));
        assert!(!log.deliver(p, SimTime(20)));
        log.drop_packet(p);
        assert_eq!(log.get(p).outcome, PacketOutcome::Delivered);
        assert_eq!(log.get(p).t_delivered, Some(SimTime(10)));
    }

    #[test]
    fn utilization_clips_to_horizon() {
        let f = Frame {
            src: Entity::Node(0),
            dst: Destination::To(Entity::Gateway),
            channel: ChannelId(1),
            payload_bytes: 40,
            kind: FrameKind::Data,
            t_start: SimTime(900),
            t_end: SimTime(1_100),
            app_packet_id: None,
            outcome: FrameOutcome::Delivered,
        };
        let m = compute_metrics(&[], &[f], &window(1_000));
        assert_eq!(m.channel_utilization, vec![0.0, 0.1]);
    }

    #[test]
    fn packet_csv_schema() {
        let mut log = PacketLog::new();
        let a = log.generate(3, SimTime(5));
        log.attempt(a);
        log.deliver(a, SimTime(9));
        let b = log.generate(4, SimTime(6));
        log.drop_packet(b);
        let mut buf = Vec::new();
        write_packets_csv(&mut buf, log.records()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "packet_id,node_id,t_generated_us,t_delivered_us,outcome,attempts\n\
             0,3,5,9,delivered,1\n\
             1,4,6,,dropped,0\n"
        );
        assert_eq!(read_packets_csv(&buf[..]).unwrap(), log.records());
    }

    #[test]
    fn frame_csv_schema() {
        let f = Frame {
            src: Entity::Gateway,
            dst: Destination::To(Entity::Node(7)),
            channel: ChannelId(3),
            payload_bytes: 16,
            kind: FrameKind::Grant,
            t_start: SimTime(10),
            t_end: SimTime(20),
            app_packet_id: None,
            outcome: FrameOutcome::Delivered,
        };
        let mut buf = Vec::new();
        write_frames_csv(&mut buf, std::slice::from_ref(&f)).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "t_start_us,t_end_us,channel,kind,src,dst,outcome\n10,20,3,grant,gw,7,delivered\n"
        );
        let back = read_frames_csv(&buf[..]).unwrap();
        assert_eq!(back[0].t_end, f.t_end);
        assert_eq!(back[0].dst, f.dst);
    }
}
