//! Hand-traced scenarios for the confirmed-ALOHA baseline, driven by
//! scripted arrivals.

use lpwa_core::metrics::PacketOutcome;
use lpwa_core::phy::{ChannelId, Entity, Frame, FrameKind, FrameOutcome};
use lpwa_core::traffic::Arrival;
use lpwa_core::{simulate_scripted, ExperimentConfig, Protocol, RunOutput, SimTime};

const DATA_AIR: u64 = 82_176;
const ACK_AIR: u64 = 36_096;

fn cfg(n_nodes: u32) -> ExperimentConfig {
    ExperimentConfig {
        protocol: Protocol::LoRaWan,
        n_nodes,
        horizon_s: 200.0,
        ..Default::default()
    }
}

fn at(us: u64, node: u32) -> Arrival {
    Arrival {
        t: SimTime(us),
        node,
    }
}

fn kind(out: &RunOutput, k: FrameKind) -> Vec<&Frame> {
    out.frames.iter().filter(|f| f.kind == k).collect()
}

fn data_of(out: &RunOutput, node: u32) -> Vec<&Frame> {
    out.frames
        .iter()
        .filter(|f| f.kind == FrameKind::Data && f.src == Entity::Node(node))
        .collect()
}

#[test]
fn lone_packet_is_delivered_after_one_airtime_and_acked_one_second_later() {
    let out = simulate_scripted(&cfg(1), &[at(20_000_000, 0)]).unwrap();
    let data = kind(&out, FrameKind::Data);
    assert_eq!(data.len(), 1);
    assert_eq!(data[0].t_start, SimTime(20_000_000));
    assert_eq!(data[0].t_end, SimTime(20_000_000 + DATA_AIR));
    assert_eq!(out.records[0].outcome, PacketOutcome::Delivered);
    assert_eq!(
        out.records[0].t_delivered,
        Some(SimTime(20_000_000 + DATA_AIR))
    );
    assert_eq!(out.summary.mean_e2e_delay_s, Some(0.082176));

    let acks = kind(&out, FrameKind::Ack);
    assert_eq!(acks.len(), 1);
    assert_eq!(acks[0].channel, ChannelId(3));
    assert_eq!(acks[0].t_start, SimTime(20_000_000 + DATA_AIR + 1_000_000));
    assert_eq!(acks[0].outcome, FrameOutcome::Delivered);
}

#[test]
fn overlapping_frames_collide_and_both_retransmit() {
    let mut c = cfg(2);
    c.channels.uplink = 1;
    // with a single channel the off-time would outlast the backoff and
    // line the retries up again
    c.channels.node_duty_cycle = 1.0;
    let out = simulate_scripted(&c, &[at(10_000_000, 0), at(10_000_000, 1)]).unwrap();
    for node in 0..2 {
        let frames = data_of(&out, node);
        assert!(frames.len() >= 2, "node {node} sent {}", frames.len());
        assert_eq!(frames[0].outcome, FrameOutcome::Collided);
        // retry waits out the ack window and a 1..3 s backoff
        let gap = frames[1].t_start.0 - frames[0].t_end.0;
        let close = 1_000_000 + ACK_AIR + 100_000;
        assert!(
            (close + 1_000_000..=close + 3_000_000).contains(&gap),
            "gap {gap}"
        );
    }
    assert!(out
        .records
        .iter()
        .all(|r| r.outcome == PacketOutcome::Delivered));
}

#[test]
fn retry_backoff_starts_after_the_off_time() {
    let mut c = cfg(2);
    c.channels.uplink = 1;
    let out = simulate_scripted(&c, &[at(10_000_000, 0), at(10_000_000, 1)]).unwrap();
    let (a, b) = (data_of(&out, 0), data_of(&out, 1));
    for frames in [&a, &b] {
        let gap = frames[1].t_start.0 - frames[0].t_end.0;
        let off = DATA_AIR * 99;
        assert!(
            (off + 1_000_000..=off + 3_000_000).contains(&gap),
            "gap {gap}"
        );
    }
    assert_ne!(a[1].t_start, b[1].t_start);
    assert!(out
        .records
        .iter()
        .all(|r| r.outcome == PacketOutcome::Delivered));
}

#[test]
fn unacknowledged_packet_stops_after_nine_transmissions() {
    let mut c = cfg(1);
    c.horizon_s = 400.0;
    // a gateway this starved cannot afford a single ack
    c.channels.gateway_duty_cycle = 1e-6;
    let out = simulate_scripted(&c, &[at(1_000_000, 0)]).unwrap();
    assert_eq!(data_of(&out, 0).len(), 9);
    assert!(kind(&out, FrameKind::Ack).is_empty());
    // it reached the gateway the first time, so it still counts
    assert_eq!(out.records[0].outcome, PacketOutcome::Delivered);
    assert_eq!(out.records[0].attempts, 9);
}

#[test]
fn packet_lost_on_every_attempt_is_dropped() {
    let mut c = cfg(2);
    c.channels.uplink = 1;
    c.lorawan.max_retransmissions = 0;
    let out = simulate_scripted(&c, &[at(1_000_000, 0), at(1_000_000, 1)]).unwrap();
    assert_eq!(kind(&out, FrameKind::Data).len(), 2);
    for r in &out.records {
        assert_eq!(r.outcome, PacketOutcome::Dropped);
        assert_eq!(r.attempts, 1);
    }
}

/// Finds two nodes' packets whose first transmissions land on different
/// channels 10 ms apart.
fn two_deliveries(c: &ExperimentConfig) -> RunOutput {
    let out = simulate_scripted(c, &[at(5_000_000, 0), at(5_010_000, 1)]).unwrap();
    let (a, b) = (data_of(&out, 0)[0], data_of(&out, 1)[0]);
    assert_ne!(a.channel, b.channel, "pick another seed");
    assert_eq!(a.outcome, FrameOutcome::Delivered);
    assert_eq!(b.outcome, FrameOutcome::Delivered);
    out
}

#[test]
fn acks_to_near_simultaneous_deliveries_are_serialized() {
    let mut c = cfg(2);
    c.channels.gateway_duty_cycle = 1.0;
    let out = two_deliveries(&c);
    let acks = kind(&out, FrameKind::Ack);
    assert_eq!(acks.len(), 2);
    let first_rx = 5_000_000 + DATA_AIR;
    assert_eq!(acks[0].t_start, SimTime(first_rx + 1_000_000));
    // the second one wanted first_rx + 10 ms + 1 s but the radio was busy
    assert_eq!(acks[1].t_start, acks[0].t_end);
    assert_eq!(
        acks[1].dst,
        lpwa_core::phy::Destination::To(Entity::Node(1))
    );
    assert_eq!(data_of(&out, 1).len(), 1);
}

#[test]
fn ack_skipped_when_gateway_budget_is_spent() {
    let out = two_deliveries(&cfg(2));
    let acks = kind(&out, FrameKind::Ack);
    let retries = data_of(&out, 1);
    assert!(retries.len() >= 2);
    // at 1% the first ack blocks the downlink for 99 ack airtimes, so
    // nothing answers node 1 until its retransmission
    assert_eq!(
        acks[0].dst,
        lpwa_core::phy::Destination::To(Entity::Node(0))
    );
    assert!(acks[1..].iter().all(|a| a.t_start >= retries[1].t_end));
    assert!(acks[1].t_start.0 - acks[0].t_end.0 >= ACK_AIR * 99);
    let r = &out.records[1];
    assert_eq!(r.outcome, PacketOutcome::Delivered);
    assert_eq!(r.t_delivered, Some(retries[0].t_end));
}

#[test]
fn queue_is_served_in_arrival_order() {
    let out = simulate_scripted(
        &cfg(1),
        &[at(1_000_000, 0), at(1_000_001, 0), at(1_000_002, 0)],
    )
    .unwrap();
    let ids: Vec<u64> = data_of(&out, 0)
        .iter()
        .filter_map(|f| f.app_packet_id)
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert!(out
        .records
        .iter()
        .all(|r| r.outcome == PacketOutcome::Delivered));
}
