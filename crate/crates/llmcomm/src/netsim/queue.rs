//! Deterministic future-event queue.
//!
//! Events pop in `(at, seq)` order: time first, then insertion sequence, so
//! simultaneous events replay in exactly the order they were scheduled.
//! Scheduling into the past (relative to the last pop) is a logic error and
//! is rejected at insertion.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("event time must be finite (got {0})")]
    NonFiniteTime(f64),
    #[error("event at {at} is in the past (now {now})")]
    PastEvent { at: f64, now: f64 },
}

struct Entry<T> {
    at: f64,
    seq: u64,
    payload: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.at.total_cmp(&other.at).is_eq() && self.seq == other.seq
    }
}
impl<T> Eq for Entry<T> {}
impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.at.total_cmp(&other.at).then(self.seq.cmp(&other.seq))
    }
}
impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-heap of timed events with a monotone clock.
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<Entry<T>>>,
    next_seq: u64,
    now: f64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0, now: 0.0 }
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        EventQueue::default()
    }

    /// Current simulation time: the timestamp of the last popped event.
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `payload` at `at`, returning its sequence number.
    pub fn push(&mut self, at: f64, payload: T) -> Result<u64, QueueError> {
        if !at.is_finite() {
            return Err(QueueError::NonFiniteTime(at));
        }
        if at < self.now {
            return Err(QueueError::PastEvent { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { at, seq, payload }));
        Ok(seq)
    }

    /// Pops the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(f64, u64, T)> {
        let Reverse(e) = self.heap.pop()?;
        self.now = e.at;
        Some((e.at, e.seq, e.payload))
    }
}
