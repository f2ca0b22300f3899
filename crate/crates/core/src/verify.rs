//! Post-hoc invariant checks over a frame log. These recompute everything
//! from the log alone and share no code with the scheduling paths they
//! audit.

use std::collections::BTreeMap;

use crate::engine::{SimDuration, SimTime};
use crate::lpwa::Grant;
use crate::phy::{ChannelId, Destination, Entity, Frame, FrameKind};

/// Pairs of data frames that overlap in time on the same channel.
pub fn overlapping_data_frames(frames: &[Frame]) -> usize {
    let mut by_channel: BTreeMap<ChannelId, Vec<(SimTime, SimTime)>> = BTreeMap::new();
    for f in frames.iter().filter(|f| f.kind == FrameKind::Data) {
        by_channel
            .entry(f.channel)
            .or_default()
            .push((f.t_start, f.t_end));
    }
    let mut pairs = 0;
    for spans in by_channel.values_mut() {
        spans.sort();
        for (i, &(_, end)) in spans.iter().enumerate() {
            pairs += spans[i + 1..].iter().take_while(|&&(s, _)| s < end).count();
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DutyViolation {
    pub transmitter: Entity,
    pub channel: ChannelId,
    pub at: SimTime,
    pub used: SimDuration,
    pub budget: SimDuration,
}

/// For every (transmitter, channel), at each transmission end `t`, the
/// airtime inside the window `(t - window, t]` must not exceed
/// `limit(transmitter) * window`.
pub fn duty_violations<F>(frames: &[Frame], window: SimDuration, limit: F) -> Vec<DutyViolation>
where
    F: Fn(Entity) -> f64,
{
    let mut groups: BTreeMap<(Entity, ChannelId), Vec<(u64, u64)>> = BTreeMap::new();
    for f in frames {
        groups
            .entry((f.src, f.channel))
            .or_default()
            .push((f.t_start.0, f.t_end.0));
    }
    let mut out = Vec::new();
    for ((tx, ch), mut spans) in groups {
        spans.sort();
        let ppm = (limit(tx) * 1e6).round() as u128;
        let budget = (window.0 as u128 * ppm / 1_000_000) as u64;
        // sliding sum of whole intervals, with the oldest one clipped
        let mut lo = 0usize;
        let mut inside: u64 = 0;
        for i in 0..spans.len() {
            let (s, e) = spans[i];
            inside += e - s;
            let wstart = e.saturating_sub(window.0);
            while spans[lo].1 <= wstart {
                inside -= spans[lo].1 - spans[lo].0;
                lo += 1;
            }
            let clipped = wstart
                .saturating_sub(spans[lo].0)
                .min(spans[lo].1 - spans[lo].0);
            let used = inside - clipped;
            if used > budget {
                out.push(DutyViolation {
                    transmitter: tx,
                    channel: ch,
                    at: SimTime(e),
                    used: SimDuration(used),
                    budget: SimDuration(budget),
                });
            }
        }
    }
    out
}

/// True if some data frame overlaps in time with a request or grant frame on
/// a different channel.
pub fn data_parallel_to_control(frames: &[Frame]) -> bool {
    let mut control: Vec<&Frame> = frames
        .iter()
        .filter(|f| matches!(f.kind, FrameKind::Request | FrameKind::Grant))
        .collect();
    control.sort_by_key(|f| f.t_start);
    let longest = control
        .iter()
        .map(|c| c.t_end - c.t_start)
        .max()
        .unwrap_or_default();
    frames
        .iter()
        .filter(|f| f.kind == FrameKind::Data)
        .any(|d| {
            let from = control.partition_point(|c| c.t_start + longest <= d.t_start);
            control[from..]
                .iter()
                .take_while(|c| c.t_start < d.t_end)
                .any(|c| c.channel != d.channel && c.t_start < d.t_end && d.t_start < c.t_end)
        })
}

/// Data frames that do not fall inside a slot granted to their sender.
pub fn data_outside_grants(frames: &[Frame], grants: &[Grant]) -> usize {
    let mut by_node: BTreeMap<u32, Vec<&Grant>> = BTreeMap::new();
    for g in grants {
        by_node.entry(g.node).or_default().push(g);
    }
    frames
        .iter()
        .filter(|f| f.kind == FrameKind::Data)
        .filter(|f| {
            let Entity::Node(n) = f.src else { return true };
            if f.dst != Destination::To(Entity::Gateway) {
                return true;
            }
            !by_node
                .get(&n)
                .is_some_and(|gs| gs.iter().any(|g| g.covers(f.channel, f.t_start, f.t_end)))
        })
        .count()
}
