//! Hand-traced request/grant scenarios with scripted arrivals.

use lpwa_core::metrics::PacketOutcome;
use lpwa_core::phy::{ChannelId, Destination, Entity, Frame, FrameKind, FrameOutcome};
use lpwa_core::traffic::Arrival;
use lpwa_core::verify::{data_outside_grants, overlapping_data_frames};
use lpwa_core::{simulate_scripted, ExperimentConfig, RunOutput, SimTime};

const DATA: u64 = 82_176;
const REQ: u64 = 41_216;
const GRANT: u64 = 51_456;
const SLOT: u64 = DATA + 10_000;
const TURN: u64 = 50_000;
const T0: u64 = 10_000_000;

fn cfg(n_nodes: u32) -> ExperimentConfig {
    ExperimentConfig {
        n_nodes,
        horizon_s: 300.0,
        ..Default::default()
    }
}

fn at(us: u64, node: u32) -> Arrival {
    Arrival {
        t: SimTime(us),
        node,
    }
}

fn frames(out: &RunOutput, k: FrameKind) -> Vec<&Frame> {
    out.frames.iter().filter(|f| f.kind == k).collect()
}

fn run(c: &ExperimentConfig, arrivals: &[Arrival]) -> RunOutput {
    let out = simulate_scripted(c, arrivals).unwrap();
    assert_eq!(overlapping_data_frames(&out.frames), 0);
    assert_eq!(data_outside_grants(&out.frames, &out.grants), 0);
    out
}

#[test]
fn lone_request_is_granted_and_sent_on_lowest_data_channel() {
    let out = run(&cfg(1), &[at(T0, 0)]);
    let req = frames(&out, FrameKind::Request);
    assert_eq!(req.len(), 1);
    assert_eq!(
        (req[0].channel, req[0].t_start),
        (ChannelId(0), SimTime(T0))
    );

    let grant = frames(&out, FrameKind::Grant);
    assert_eq!(grant.len(), 1);
    assert_eq!(grant[0].channel, ChannelId(3));
    assert_eq!(grant[0].t_start, SimTime(T0 + REQ));
    assert_eq!(grant[0].dst, Destination::To(Entity::Node(0)));

    let data = frames(&out, FrameKind::Data);
    assert_eq!(data.len(), 1);
    let start = T0 + REQ + GRANT + TURN;
    assert_eq!(
        (data[0].channel, data[0].t_start),
        (ChannelId(1), SimTime(start))
    );
    assert_eq!(data[0].t_end, SimTime(start + DATA));
    assert_eq!(out.records[0].t_delivered, Some(SimTime(start + DATA)));
    assert_eq!(out.grants[0].slot_count(), 1);
}

#[test]
fn simultaneous_packets_share_one_request_and_hop_channels() {
    let out = run(&cfg(1), &[at(T0, 0), at(T0, 0), at(T0, 0)]);
    assert_eq!(frames(&out, FrameKind::Request).len(), 1);
    assert_eq!(out.grants.len(), 1);
    assert_eq!(out.grants[0].slot_count(), 3);

    let e = T0 + REQ + GRANT + TURN;
    let got: Vec<(ChannelId, SimTime, Option<u64>)> = frames(&out, FrameKind::Data)
        .iter()
        .map(|f| (f.channel, f.t_start, f.app_packet_id))
        .collect();
    assert_eq!(
        got,
        vec![
            (ChannelId(1), SimTime(e), Some(0)),
            (ChannelId(2), SimTime(e + SLOT), Some(1)),
            // both channels are in off-time; channel 1 frees up first
            (ChannelId(1), SimTime(e + DATA * 100), Some(2)),
        ]
    );
}

#[test]
fn packet_arriving_during_sleep_waits_for_the_next_request() {
    let c = cfg(1);
    let out = run(&c, &[at(T0, 0), at(T0 + 100_000, 0)]);
    let req = frames(&out, FrameKind::Request);
    assert!(req.len() >= 2);
    assert_eq!(out.grants[0].slot_count(), 1);
    // follow-up request as soon as the request channel's off-time ends
    assert_eq!(req[1].t_start, SimTime(T0 + REQ * 100));
    assert!(out
        .records
        .iter()
        .all(|r| r.outcome == PacketOutcome::Delivered));
}

#[test]
fn request_the_gateway_cannot_answer_in_time_is_ignored() {
    let out = run(&cfg(1), &[at(T0, 0), at(T0 + 100_000, 0)]);
    let req = frames(&out, FrameKind::Request);
    let grants = frames(&out, FrameKind::Grant);
    // the downlink is in off-time until T0 + REQ + 100 * GRANT, past the
    // second request's timeout
    let downlink_free = T0 + REQ + GRANT * 100;
    assert!(req[1].t_end.0 + 500_000 < downlink_free);
    assert_eq!(grants.len(), 2);
    assert!(grants[1].t_start.0 >= downlink_free);
    assert!(req.len() >= 3);
}

#[test]
fn colliding_requests_back_off_and_both_get_through() {
    let out = run(&cfg(2), &[at(T0, 0), at(T0, 1)]);
    let req = frames(&out, FrameKind::Request);
    assert_eq!(req[0].outcome, FrameOutcome::Collided);
    assert_eq!(req[1].outcome, FrameOutcome::Collided);
    assert_eq!(req[0].t_start, req[1].t_start);
    for r in &req[2..4] {
        // timeout then off-time then backoff
        assert!(r.t_start.0 >= req[0].t_end.0 + REQ * 99);
    }
    assert!(out
        .records
        .iter()
        .all(|r| r.outcome == PacketOutcome::Delivered));
}

#[test]
fn requests_exhausted_drop_the_covered_packets() {
    let mut c = cfg(2);
    // one grant uses up the downlink for the whole run
    c.channels.gateway_duty_cycle = 0.0001;
    c.horizon_s = 200.0;
    let out = run(&c, &[at(T0, 0), at(T0 + 1_000_000, 1)]);
    assert_eq!(frames(&out, FrameKind::Grant).len(), 1);
    assert_eq!(out.records[0].outcome, PacketOutcome::Delivered);
    assert_eq!(out.records[1].outcome, PacketOutcome::Dropped);
    let from_1 = out
        .frames
        .iter()
        .filter(|f| f.kind == FrameKind::Request && f.src == Entity::Node(1))
        .count();
    assert_eq!(from_1, 9);
}

#[test]
fn grant_covers_at_most_sixteen_packets() {
    let burst: Vec<Arrival> = (0..20).map(|_| at(T0, 0)).collect();
    let out = run(&cfg(1), &burst);
    assert_eq!(out.grants[0].slot_count(), 16);
    assert!(out.grants.len() >= 2);
    assert_eq!(out.grants[1].slot_count(), 4);
    let ids: Vec<u64> = frames(&out, FrameKind::Data)
        .iter()
        .filter_map(|f| f.app_packet_id)
        .collect();
    assert_eq!(ids, (0..20).collect::<Vec<_>>());
}

#[test]
fn queue_overflow_drops_oldest() {
    let mut c = cfg(1);
    c.queue_capacity = 4;
    let burst: Vec<Arrival> = (0..6).map(|i| at(T0 + i, 0)).collect();
    let out = run(&c, &burst);
    let outcome: Vec<PacketOutcome> = out.records.iter().map(|r| r.outcome).collect();
    assert_eq!(
        outcome[..2],
        [PacketOutcome::Dropped, PacketOutcome::Dropped]
    );
    assert!(outcome[2..].iter().all(|&o| o == PacketOutcome::Delivered));
}

#[test]
fn data_runs_alongside_another_nodes_request() {
    // node 1 asks while node 0 is mid-slot
    let data_start = T0 + REQ + GRANT + TURN;
    let out = run(&cfg(2), &[at(T0, 0), at(data_start + 10_000, 1)]);
    let d = frames(&out, FrameKind::Data)[0];
    let r = frames(&out, FrameKind::Request)[1];
    assert!(r.t_start < d.t_end && d.t_start < r.t_end);
    assert!(lpwa_core::verify::data_parallel_to_control(&out.frames));
}

#[test]
fn grants_on_request_channel_variant() {
    let mut c = cfg(1);
    c.lpwa.grants_on_request_channel = true;
    let out = run(&c, &[at(T0, 0)]);
    assert_eq!(frames(&out, FrameKind::Grant)[0].channel, ChannelId(0));
    assert_eq!(out.records[0].outcome, PacketOutcome::Delivered);
}
