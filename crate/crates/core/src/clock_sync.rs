//! NTP-style offset estimation against the server clock.
//!
//! `offset` is server clock minus client clock, so a client timestamp maps to
//! server time as `ts + offset`.

use std::collections::VecDeque;

use crate::Nanos;

pub const DEFAULT_WINDOW: usize = 8;
pub const DEFAULT_SYNC_PERIOD: Nanos = 10 * crate::SECOND;
pub const DEFAULT_ROUND_SIZE: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SyncError {
    #[error("no sync samples collected")]
    NoSamples,
    #[error("sample window must be at least 1")]
    InvalidWindow,
}

/// One request/response exchange: client send, server receive, server send,
/// client receive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncSample {
    pub t0: Nanos,
    pub t1: Nanos,
    pub t2: Nanos,
    pub t3: Nanos,
}

impl SyncSample {
    pub fn new(t0: Nanos, t1: Nanos, t2: Nanos, t3: Nanos) -> Self {
        Self { t0, t1, t2, t3 }
    }

    pub fn offset(&self) -> Nanos {
        ((self.t1 - self.t0) + (self.t2 - self.t3)) / 2
    }

    pub fn rtt(&self) -> Nanos {
        (self.t3 - self.t0) - (self.t2 - self.t1)
    }
}

/// Offset of the minimum-RTT sample among the `k` most recent.
pub fn estimate_offset(samples: &[SyncSample], k: usize) -> Result<Nanos, SyncError> {
    if k == 0 {
        return Err(SyncError::InvalidWindow);
    }
    samples[samples.len().saturating_sub(k)..]
        .iter()
        .min_by_key(|s| s.rtt())
        .map(SyncSample::offset)
        .ok_or(SyncError::NoSamples)
}

/// Rolling window of samples for one client.
#[derive(Clone, Debug)]
pub struct ClockSync {
    window: usize,
    samples: VecDeque<SyncSample>,
}

impl ClockSync {
    pub fn new(window: usize) -> Result<Self, SyncError> {
        if window == 0 {
            return Err(SyncError::InvalidWindow);
        }
        Ok(Self {
            window,
            samples: VecDeque::with_capacity(window),
        })
    }

    pub fn add(&mut self, sample: SyncSample) {
        if self.samples.len() == self.window {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn offset(&self) -> Result<Nanos, SyncError> {
        self.samples
            .iter()
            .min_by_key(|s| s.rtt())
            .map(SyncSample::offset)
            .ok_or(SyncError::NoSamples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_server(&self, local: Nanos) -> Result<Nanos, SyncError> {
        Ok(local + self.offset()?)
    }
}

impl Default for ClockSync {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW).expect("default window is non-zero")
    }
}
