//! Text control protocol and the per-session state machine.

mod message;
mod session;

pub use message::{
    status, ControlMessage, Method, SessionId, StartLine, SyncStamps, Transport, PROTOCOL,
};
pub use session::{
    session_transition, KeepalivePolicy, SessionEvent, SessionPhase, SessionState,
    DEFAULT_KEEPALIVE_INTERVAL, DEFAULT_SESSION_TIMEOUT,
};

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("malformed control message: {0}")]
    MalformedMessage(String),
    #[error("illegal session transition from {from} on {event:?}")]
    IllegalTransition {
        from: SessionPhase,
        event: SessionEvent,
    },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("invalid control configuration: {0}")]
    InvalidConfig(String),
}
