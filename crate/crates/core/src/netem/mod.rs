//! Deterministic network emulation: per-path delay, jitter and loss,
//! scripted handovers, a virtual-time event queue and a wall-clock proxy.

mod emulator;
mod profile;
mod proxy;
mod scheduler;

use std::net::{IpAddr, SocketAddr};

pub use emulator::{AddressChange, Emulator, HostId, NetemStats, PathSampler, TraceEntry, Verdict};
pub use profile::{validate_handovers, HandoverEvent, NetworkProfile, LTE_ONE_WAY};
pub use proxy::{ProxyStats, UdpProxy};
pub use scheduler::{Scheduler, TimeSource};

#[derive(Debug, thiserror::Error)]
pub enum NetemError {
    #[error("destination {0} was never registered")]
    UnknownAddress(SocketAddr),
    #[error("address {0} is already registered")]
    DuplicateAddress(IpAddr),
    #[error("invalid network profile: {0}")]
    InvalidProfile(String),
    #[error("invalid handover schedule: {0}")]
    InvalidHandover(String),
}
