//! Deterministic discrete-event core.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is assigned at
//! scheduling time, so two events at the same instant dispatch in the order
//! they were scheduled. Cancellation is lazy: a cancelled entry stays in the
//! heap and is skipped when popped.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::io::Write;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Integer microseconds since simulation start.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

/// A span of simulated time in microseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimDuration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// Later than any reachable instant; arithmetic saturates here.
    pub const NEVER: SimTime = SimTime(u64::MAX);

    pub fn from_secs(secs: u64) -> Self {
        SimTime(secs * 1_000_000)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs * 1e6).round() as u64)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, d: SimDuration) -> SimTime {
        SimTime(self.0.saturating_sub(d.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub fn from_micros(us: u64) -> Self {
        SimDuration(us)
    }

    pub fn from_millis(ms: u64) -> Self {
        SimDuration(ms * 1_000)
    }

    pub fn from_secs(secs: u64) -> Self {
        SimDuration(secs * 1_000_000)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        SimDuration((secs * 1e6).round() as u64)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        SimDuration(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Handle returned by [`Scheduler::schedule`]; permits cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone)]
pub struct Event<K> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub kind: K,
}

struct Entry<K>(Event<K>);

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<K> Eq for Entry<K> {}

impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Entry<K> {
    // BinaryHeap is a max-heap; reverse so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// Something that can describe itself on one trace line.
pub trait TraceEvent {
    fn trace_kind(&self) -> &'static str;
    fn trace_target(&self) -> String;
}

pub struct Scheduler<K> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<K>>,
    pending: HashSet<u64>,
    dispatched: u64,
    trace: Option<Box<dyn Write + Send>>,
}

impl<K> Default for Scheduler<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Scheduler<K> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            pending: HashSet::new(),
            dispatched: 0,
            trace: None,
        }
    }

    /// Emit one line per dispatched event to `sink`.
    pub fn set_trace(&mut self, sink: Box<dyn Write + Send>) {
        self.trace = Some(sink);
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn schedule(&mut self, fire_at: SimTime, kind: K) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast {
                now: self.now,
                fire_at,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event { fire_at, seq, kind }));
        self.pending.insert(seq);
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: SimDuration, kind: K) -> Result<EventHandle, SimError> {
        self.schedule(self.now + delay, kind)
    }

    /// Returns true if the event was still pending. Cancelling a fired or
    /// already-cancelled handle does nothing.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0)
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains(&handle.0)
    }

    /// Pops the next live event with `fire_at <= end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event<K>> {
        loop {
            let top = self.heap.peek()?;
            if top.0.fire_at > end {
                return None;
            }
            let Entry(ev) = self.heap.pop().expect("peeked");
            if !self.pending.remove(&ev.seq) {
                continue;
            }
            self.now = ev.fire_at;
            self.dispatched += 1;
            return Some(ev);
        }
    }

    fn advance_to(&mut self, end: SimTime) {
        if end > self.now {
            self.now = end;
        }
    }
}

impl<K: TraceEvent> Scheduler<K> {
    fn trace_line(&mut self, ev: &Event<K>) {
        if let Some(sink) = self.trace.as_mut() {
            // Trace output is best-effort.
            let _ = writeln!(
                sink,
                "{} {} {}",
                ev.fire_at.0,
                ev.kind.trace_kind(),
                ev.kind.trace_target()
            );
        }
    }

    /// Dispatches every event with `fire_at <= end` to `handler` in order and
    /// leaves the clock at `end`. Returns the number of events dispatched.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> Result<u64, SimError>
    where
        F: FnMut(&mut Scheduler<K>, Event<K>) -> Result<(), SimError>,
    {
        let mut count = 0;
        while let Some(ev) = self.pop_until(end) {
            self.trace_line(&ev);
            count += 1;
            handler(self, ev)?;
        }
        self.advance_to(end);
        if let Some(sink) = self.trace.as_mut() {
            let _ = sink.flush();
        }
        Ok(count)
    }
}

/// Purpose tag mixed into a stream id so that each entity's uses of
/// randomness stay independent of each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Traffic = 1,
    Mac = 2,
    Gateway = 3,
}

/// Per-entity random stream derived from `(master seed, stream id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, purpose: StreamPurpose, entity: u32) -> Self {
        RngStream {
            seed,
            stream_id: ((purpose as u64) << 32) | entity as u64,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
