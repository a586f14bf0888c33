use std::fmt;
use std::net::SocketAddr;

use super::message::SessionId;
use super::ControlError;
use crate::Nanos;

pub const DEFAULT_KEEPALIVE_INTERVAL: Nanos = 500_000_000;
pub const DEFAULT_SESSION_TIMEOUT: Nanos = 2_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SessionPhase {
    Init,
    Ready,
    Playing,
    Dead,
}

impl fmt::Display for SessionPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SessionEvent {
    SetupOk,
    PlayOk,
    Teardown,
    Timeout,
    PeerAddressChanged,
}

/// Pure transition function. `Dead` is absorbing.
pub fn session_transition(
    from: SessionPhase,
    event: SessionEvent,
) -> Result<SessionPhase, ControlError> {
    use SessionEvent::*;
    use SessionPhase::*;
    match (from, event) {
        (Dead, _) => Err(ControlError::IllegalTransition { from, event }),
        (Init, SetupOk) => Ok(Ready),
        (Ready, PlayOk) => Ok(Playing),
        (_, Teardown | Timeout | PeerAddressChanged) => Ok(Dead),
        _ => Err(ControlError::IllegalTransition { from, event }),
    }
}

/// Keepalive cadence. `interval < timeout` always holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeepalivePolicy {
    interval: Nanos,
    timeout: Nanos,
}

impl KeepalivePolicy {
    pub fn new(interval: Nanos, timeout: Nanos) -> Result<Self, ControlError> {
        if interval <= 0 || interval >= timeout {
            return Err(ControlError::InvalidConfig(format!(
                "keepalive interval {interval} ns must be positive and below timeout {timeout} ns"
            )));
        }
        Ok(Self { interval, timeout })
    }

    pub fn interval(&self) -> Nanos {
        self.interval
    }

    pub fn timeout(&self) -> Nanos {
        self.timeout
    }

    pub fn keepalive_due(&self, last_sent: Nanos, now: Nanos) -> bool {
        now - last_sent >= self.interval
    }

    pub fn expired(&self, last_activity: Nanos, now: Nanos) -> bool {
        now - last_activity > self.timeout
    }
}

impl Default for KeepalivePolicy {
    fn default() -> Self {
        Self {
            interval: DEFAULT_KEEPALIVE_INTERVAL,
            timeout: DEFAULT_SESSION_TIMEOUT,
        }
    }
}

/// Server-side record of one client session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionState {
    pub id: SessionId,
    pub phase: SessionPhase,
    /// Control-plane address the session is bound to.
    pub peer: SocketAddr,
    /// Where RTP for this session is sent.
    pub rtp_dest: SocketAddr,
    pub stream: String,
    pub created_at: Nanos,
    pub last_activity: Nanos,
}

impl SessionState {
    pub fn new(
        id: SessionId,
        stream: String,
        peer: SocketAddr,
        rtp_dest: SocketAddr,
        now: Nanos,
    ) -> Self {
        Self {
            id,
            phase: SessionPhase::Init,
            peer,
            rtp_dest,
            stream,
            created_at: now,
            last_activity: now,
        }
    }

    pub fn apply(&mut self, event: SessionEvent) -> Result<SessionPhase, ControlError> {
        self.phase = session_transition(self.phase, event)?;
        Ok(self.phase)
    }

    pub fn touch(&mut self, now: Nanos) {
        self.last_activity = self.last_activity.max(now);
    }

    pub fn is_live(&self) -> bool {
        self.phase != SessionPhase::Dead
    }
}
