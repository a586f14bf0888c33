use std::collections::VecDeque;
use std::sync::Arc;

use super::frame::EncodedFrame;
use super::MediaError;
use crate::Nanos;

pub const DEFAULT_PREROLL: Nanos = 15_000_000_000;

/// Rolling window of the most recent frames, kept for pre-roll replay.
///
/// Frames are shared behind `Arc`, so a snapshot is a cheap copy of the
/// current contents that later pushes do not disturb.
#[derive(Clone, Debug)]
pub struct FrameRingBuffer {
    capacity: Nanos,
    frames: VecDeque<Arc<EncodedFrame>>,
}

impl Default for FrameRingBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_PREROLL)
    }
}

impl FrameRingBuffer {
    pub fn new(capacity: Nanos) -> Self {
        Self {
            capacity,
            frames: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> Nanos {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Time between oldest and newest retained capture.
    pub fn span(&self) -> Nanos {
        match (self.frames.front(), self.frames.back()) {
            (Some(a), Some(b)) => b.capture_ts - a.capture_ts,
            _ => 0,
        }
    }

    pub fn push(&mut self, frame: impl Into<Arc<EncodedFrame>>) -> Result<(), MediaError> {
        let frame = frame.into();
        if let Some(newest) = self.frames.back() {
            if frame.capture_ts < newest.capture_ts {
                return Err(MediaError::OutOfOrderFrame {
                    newest: newest.capture_ts,
                    got: frame.capture_ts,
                });
            }
        }
        let horizon = frame.capture_ts - self.capacity;
        while self.frames.front().is_some_and(|f| f.capture_ts < horizon) {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
        Ok(())
    }

    /// Retained frames starting at the oldest IDR, so the replay is decodable.
    pub fn snapshot(&self) -> Result<Vec<Arc<EncodedFrame>>, MediaError> {
        let start = self
            .frames
            .iter()
            .position(|f| f.is_idr())
            .ok_or(MediaError::EmptyBuffer)?;
        Ok(self.frames.iter().skip(start).cloned().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::nal::NalUnit;

    const S: Nanos = 1_000_000_000;

    fn frame(id: u64, ts: Nanos, idr: bool) -> EncodedFrame {
        let header = if idr { 0x65 } else { 0x41 };
        EncodedFrame::build(id, ts, vec![NalUnit::new(header, vec![1])]).unwrap()
    }

    #[test]
    fn evicts_older_than_capacity() {
        let mut ring = FrameRingBuffer::new(15 * S);
        for t in 0..=20 {
            ring.push(frame(t as u64, t * S, t % 5 == 0)).unwrap();
        }
        let kept: Vec<Nanos> = ring.frames.iter().map(|f| f.capture_ts / S).collect();
        assert_eq!(kept, (5..=20).collect::<Vec<_>>());
        assert!(ring.span() <= ring.capacity());
    }

    #[test]
    fn single_push() {
        let mut ring = FrameRingBuffer::default();
        ring.push(frame(0, 0, true)).unwrap();
        assert_eq!(ring.len(), 1);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut ring = FrameRingBuffer::default();
        ring.push(frame(0, 10, true)).unwrap();
        assert!(matches!(
            ring.push(frame(1, 9, false)),
            Err(MediaError::OutOfOrderFrame { .. })
        ));
        assert_eq!(ring.len(), 1);
    }

    #[test]
    fn snapshot_trims_to_idr() {
        let mut ring = FrameRingBuffer::default();
        ring.push(frame(8, 8, false)).unwrap();
        ring.push(frame(10, 10, true)).unwrap();
        ring.push(frame(11, 11, false)).unwrap();
        ring.push(frame(12, 12, false)).unwrap();
        let ids: Vec<u64> = ring
            .snapshot()
            .unwrap()
            .iter()
            .map(|f| f.frame_id)
            .collect();
        assert_eq!(ids, vec![10, 11, 12]);
        assert_eq!(ring.len(), 4);
    }

    #[test]
    fn snapshot_of_complete_gops_is_everything() {
        let mut ring = FrameRingBuffer::default();
        for id in 0..15 {
            ring.push(frame(id, id as Nanos, id % 5 == 0)).unwrap();
        }
        assert_eq!(ring.snapshot().unwrap().len(), 15);
    }

    #[test]
    fn snapshot_without_idr_fails() {
        let mut ring = FrameRingBuffer::default();
        assert!(matches!(ring.snapshot(), Err(MediaError::EmptyBuffer)));
        ring.push(frame(1, 1, false)).unwrap();
        assert!(matches!(ring.snapshot(), Err(MediaError::EmptyBuffer)));
    }

    #[test]
    fn snapshot_is_stable_across_later_pushes() {
        let mut ring = FrameRingBuffer::new(2);
        ring.push(frame(0, 0, true)).unwrap();
        ring.push(frame(1, 1, false)).unwrap();
        let snap = ring.snapshot().unwrap();
        ring.push(frame(2, 5, true)).unwrap();
        assert_eq!(snap.len(), 2);
        assert_eq!(ring.len(), 1);
    }
}
