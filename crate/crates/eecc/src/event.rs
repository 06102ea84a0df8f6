//! Sensor events and the fixed-capacity FIFO buffer the tracker slides over
//! the stream.

use thiserror::Error;

use crate::mat::Vec2;

/// A single change event. Timestamps are integer microseconds to avoid float
/// drift over long streams; positions are real-valued pixels in the rectified
/// image plane. Polarity is carried through but never used by the tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t_us: i64,
    pub x: f64,
    pub y: f64,
    pub polarity: i8,
}

impl Event {
    pub fn new(t_us: i64, x: f64, y: f64, polarity: i8) -> Self {
        Self { t_us, x, y, polarity }
    }

    #[inline]
    pub fn position(&self) -> Vec2 {
        [self.x, self.y]
    }

    #[inline]
    pub fn t_secs(&self) -> f64 {
        self.t_us as f64 * 1e-6
    }
}

/// Convert decimal seconds into integer microseconds, rounding to nearest.
#[inline]
pub fn secs_to_us(t_secs: f64) -> i64 {
    (t_secs * 1e6).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("event timestamp {incoming_us} us precedes newest buffered timestamp {newest_us} us")]
pub struct OutOfOrderTimestamp {
    pub incoming_us: i64,
    pub newest_us: i64,
}

/// Circular buffer holding the `2M+1` most recent accepted events in FIFO
/// order. Pushing into a full buffer evicts exactly the oldest entry; the
/// central event is the `M`-th oldest.
#[derive(Debug, Clone)]
pub struct EventBuffer {
    slots: Vec<Event>,
    capacity: usize,
    head: usize,
}

impl EventBuffer {
    /// `capacity` must be odd (the buffer is `2M+1` events) and at least 3.
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity >= 3 && capacity % 2 == 1, "buffer capacity must be odd and >= 3");
        Self {
            slots: Vec::with_capacity(capacity),
            capacity,
            head: 0,
        }
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `M`, the half-size: `capacity = 2M + 1`.
    #[inline]
    pub fn half_size(&self) -> usize {
        (self.capacity - 1) / 2
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    /// `i`-th oldest buffered event.
    #[inline]
    pub fn nth_oldest(&self, i: usize) -> Option<&Event> {
        if i >= self.slots.len() {
            return None;
        }
        let idx = if self.is_full() { (self.head + i) % self.capacity } else { i };
        self.slots.get(idx)
    }

    pub fn oldest(&self) -> Option<&Event> {
        self.nth_oldest(0)
    }

    pub fn newest(&self) -> Option<&Event> {
        self.nth_oldest(self.len().checked_sub(1)?)
    }

    /// The central (`M`-th oldest) event; defined once more than `M` events
    /// are buffered.
    pub fn central(&self) -> Option<&Event> {
        self.nth_oldest(self.half_size())
    }

    /// Append an event, evicting and returning the oldest entry iff the
    /// buffer was full. Events older than the newest buffered timestamp are
    /// rejected without mutating the buffer.
    pub fn push(&mut self, event: Event) -> Result<Option<Event>, OutOfOrderTimestamp> {
        if let Some(newest) = self.newest() {
            if event.t_us < newest.t_us {
                return Err(OutOfOrderTimestamp {
                    incoming_us: event.t_us,
                    newest_us: newest.t_us,
                });
            }
        }
        if self.slots.len() < self.capacity {
            self.slots.push(event);
            return Ok(None);
        }
        let evicted = std::mem::replace(&mut self.slots[self.head], event);
        self.head = (self.head + 1) % self.capacity;
        Ok(Some(evicted))
    }

    /// Iterate oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Event> + '_ {
        let (tail, head) = if self.is_full() {
            (&self.slots[self.head..], &self.slots[..self.head])
        } else {
            (&self.slots[..], &self.slots[..0])
        };
        tail.iter().chain(head.iter())
    }
}
