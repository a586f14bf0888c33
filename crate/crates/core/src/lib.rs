//! Low-latency live video relay over emulated mobile links.

pub mod clock_sync;
pub mod config;
pub mod control;
pub mod endpoints;
pub mod experiment;
pub mod media;
pub mod metrics;
pub mod netem;
pub mod recovery;
pub mod relay;
pub mod report;
pub mod rtp;

/// Nanoseconds on whichever clock the caller is using.
pub type Nanos = i64;

pub const MS: Nanos = 1_000_000;
pub const SECOND: Nanos = 1_000_000_000;
