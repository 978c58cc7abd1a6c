//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is the insertion
//! counter, so two runs that schedule the same events in the same order
//! replay identically. Time is integer seconds.

mod rng;

pub use rng::RngStream;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated instant, in whole seconds since epoch 0.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_secs(secs: u64) -> Self {
        SimTime(secs)
    }

    pub const fn from_mins(mins: u64) -> Self {
        SimTime(mins * 60)
    }

    pub const fn secs(self) -> u64 {
        self.0
    }

    /// Seconds elapsed since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, secs: u64) -> SimTime {
        SimTime(self.0.saturating_add(secs))
    }
}

impl AddAssign<u64> for SimTime {
    fn add_assign(&mut self, secs: u64) {
        self.0 = self.0.saturating_add(secs);
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}s", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(u64);

impl EventId {
    pub fn seq(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled in the past: fire_at {fire_at} < clock {now}")]
    PastEvent { fire_at: SimTime, now: SimTime },
    #[error("cannot advance to {target}: an event is pending at {pending}")]
    PendingBefore { pending: SimTime, target: SimTime },
}

/// An event popped from the queue.
#[derive(Debug, Clone)]
pub struct SimEvent<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub kind: E,
}

struct Queued<E>(SimEvent<E>);

impl<E> PartialEq for Queued<E> {
    fn eq(&self, other: &Self) -> bool {
        self.0.fire_at == other.0.fire_at && self.0.seq == other.0.seq
    }
}

impl<E> Eq for Queued<E> {}

impl<E> PartialOrd for Queued<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Queued<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first.
        other
            .0
            .fire_at
            .cmp(&self.0.fire_at)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Single-threaded event loop with a virtual clock.
///
/// Every fired event is folded into a running trace digest over
/// `(fire_at, seq, variant)`, which two runs can compare for determinism.
pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<E>>,
    fired: u64,
    digest: Fnv64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            fired: 0,
            digest: Fnv64::default(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn trace_digest(&self) -> u64 {
        self.digest.finish()
    }

    /// Enqueue `kind` to fire at `fire_at`. Rejects instants before the clock.
    pub fn schedule(&mut self, fire_at: SimTime, kind: E) -> Result<EventId, SimError> {
        if fire_at < self.now {
            return Err(SimError::PastEvent {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(SimEvent { fire_at, seq, kind }));
        Ok(EventId(seq))
    }

    /// Enqueue `kind` to fire `delay` seconds from now.
    pub fn schedule_in(&mut self, delay: u64, kind: E) -> EventId {
        let at = self.now + delay;
        self.schedule(at, kind)
            .expect("relative schedule cannot land in the past")
    }

    /// Time of the next pending event, if any.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|q| q.0.fire_at)
    }

    /// Pop the next event if it fires at or before `limit`, advancing the clock.
    pub fn next_until(&mut self, limit: SimTime) -> Option<SimEvent<E>> {
        if self.peek_time()? > limit {
            return None;
        }
        let Queued(ev) = self.queue.pop()?;
        debug_assert!(ev.fire_at >= self.now);
        self.now = ev.fire_at;
        self.fired += 1;
        self.digest.write_u64(ev.fire_at.secs());
        self.digest.write_u64(ev.seq);
        std::mem::discriminant(&ev.kind).hash(&mut self.digest);
        Some(ev)
    }

    /// Move the clock forward to `t` without firing anything. Fails if `t` is
    /// in the past or an event is due before `t`.
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), SimError> {
        if t < self.now {
            return Err(SimError::PastEvent {
                fire_at: t,
                now: self.now,
            });
        }
        if let Some(next) = self.peek_time() {
            if next < t {
                return Err(SimError::PendingBefore { pending: next, target: t });
            }
        }
        self.now = t;
        Ok(())
    }

    /// Fire every event with `fire_at <= limit`, handing each to `handler`.
    ///
    /// The clock ends at the time of the last fired event, never past `limit`.
    pub fn run_until<F>(&mut self, limit: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Engine<E>, SimEvent<E>),
    {
        while let Some(ev) = self.next_until(limit) {
            handler(self, ev);
        }
        self.now
    }
}

/// FNV-1a, used for stable digests and stream-id hashing.
#[derive(Clone, Copy)]
pub(crate) struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv64 {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
