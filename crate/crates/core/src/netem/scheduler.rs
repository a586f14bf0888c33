use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::Nanos;

/// Clock used by the emulator and the nodes it drives.
#[derive(Clone, Debug)]
pub enum TimeSource {
    /// Unix time in ns, advanced by a monotonic clock so processes on one
    /// host share a timeline.
    Wall { origin: Instant, epoch: Nanos },
    /// Advances only through [`TimeSource::advance_to`].
    Virtual { now: Nanos },
}

impl TimeSource {
    pub fn wall() -> Self {
        let epoch = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as Nanos);
        TimeSource::Wall {
            origin: Instant::now(),
            epoch,
        }
    }

    pub fn virtual_at(now: Nanos) -> Self {
        TimeSource::Virtual { now }
    }

    pub fn now(&self) -> Nanos {
        match self {
            TimeSource::Wall { origin, epoch } => epoch + origin.elapsed().as_nanos() as Nanos,
            TimeSource::Virtual { now } => *now,
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, TimeSource::Virtual { .. })
    }

    /// Moves virtual time forward; never backwards. No effect on wall time.
    pub fn advance_to(&mut self, t: Nanos) {
        if let TimeSource::Virtual { now } = self {
            *now = (*now).max(t);
        }
    }
}

struct Entry<E> {
    at: Nanos,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Timestamp-ordered event queue; ties fire in insertion order.
pub struct Scheduler<E> {
    heap: BinaryHeap<Entry<E>>,
    seq: u64,
    clock: TimeSource,
}

impl<E> Scheduler<E> {
    pub fn new(clock: TimeSource) -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
            clock,
        }
    }

    pub fn virtual_at(now: Nanos) -> Self {
        Self::new(TimeSource::virtual_at(now))
    }

    pub fn now(&self) -> Nanos {
        self.clock.now()
    }

    pub fn schedule(&mut self, at: Nanos, event: E) {
        self.heap.push(Entry {
            at,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    pub fn peek_time(&self) -> Option<Nanos> {
        self.heap.peek().map(|e| e.at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Pops the next event due at or before `until`, advancing virtual time
    /// to it. Events scheduled in the past fire at the current time.
    pub fn pop_until(&mut self, until: Nanos) -> Option<(Nanos, E)> {
        if self.heap.peek()?.at > until {
            return None;
        }
        let e = self.heap.pop()?;
        self.clock.advance_to(e.at);
        Some((self.clock.now(), e.event))
    }

    /// Fires every event due at or before `until`, then advances virtual
    /// time to `until`.
    pub fn step_virtual(&mut self, until: Nanos) -> Vec<(Nanos, E)> {
        let mut fired = Vec::new();
        while let Some(item) = self.pop_until(until) {
            fired.push(item);
        }
        self.clock.advance_to(until);
        fired
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_in_time_order() {
        let mut s = Scheduler::virtual_at(0);
        s.schedule(5, 'a');
        s.schedule(3, 'b');
        s.schedule(7, 'c');
        let fired: Vec<char> = s.step_virtual(6).into_iter().map(|(_, e)| e).collect();
        assert_eq!(fired, vec!['b', 'a']);
        assert_eq!(s.now(), 6);
    }

    #[test]
    fn idle_step_only_advances() {
        let mut s: Scheduler<()> = Scheduler::virtual_at(0);
        assert!(s.step_virtual(2).is_empty());
        assert_eq!(s.now(), 2);
    }

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut s = Scheduler::virtual_at(0);
        for i in 0..10 {
            s.schedule(4, i);
        }
        let fired: Vec<i32> = s.step_virtual(4).into_iter().map(|(_, e)| e).collect();
        assert_eq!(fired, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn virtual_time_never_goes_back() {
        let mut s = Scheduler::virtual_at(10);
        s.schedule(3, ());
        let (at, ()) = s.pop_until(20).unwrap();
        assert_eq!(at, 10);
        let mut t = TimeSource::virtual_at(5);
        t.advance_to(2);
        assert_eq!(t.now(), 5);
    }
}
