//! Outage detection, session re-establishment and recovery timing.

mod handshake;
mod monitor;

pub use handshake::{Handshake, HandshakeOutput, ReconnectConfig};
pub use monitor::{ConnectivityMonitor, ConnectivityPhase, MonitorAction, MonitorConfig};

use crate::Nanos;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecoveryError {
    #[error("recovery timeout: no session re-established after {} ms and {attempts} requests", elapsed / 1_000_000)]
    RecoveryTimeout { elapsed: Nanos, attempts: u32 },
}

/// Timing of one outage and the session that replaced the lost one. All
/// timestamps are server-referenced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecoveryRecord {
    pub handover_id: u32,
    /// Ground truth from the emulator when available, else detection time.
    pub outage_start: Nanos,
    pub detected: Nanos,
    pub session_established: Nanos,
    pub first_display: Option<Nanos>,
}

impl RecoveryRecord {
    pub fn recovery(&self) -> Nanos {
        self.session_established - self.outage_start
    }

    pub fn recovery_ms(&self) -> f64 {
        self.recovery() as f64 / 1e6
    }

    /// outage_start <= detected <= session_established <= first_display.
    pub fn is_ordered(&self) -> bool {
        self.outage_start <= self.detected
            && self.detected <= self.session_established
            && self
                .first_display
                .is_none_or(|d| self.session_established <= d)
    }
}
