//! Sender, server and receiver entities as sans-IO state machines.

mod live;
mod node;
mod playout;
mod receiver;
mod sender;
mod server;

pub use live::{LiveDriver, LiveError};
pub use node::{Node, Outgoing, SyncClient, SyncConfig};
pub use playout::{
    playout_decide, DecoderStub, PlayoutDecision, PlayoutMode, PlayoutPolicy,
    DEFAULT_TARGET_LATENCY,
};
pub use receiver::{
    FrameEvent, ReceiverConfig, ReceiverNode, ReceiverNodeConfig, ReceiverPipeline,
};
pub use sender::{
    PrerollFrame, SenderConfig, SenderNode, SenderNodeConfig, SenderPipeline, TickOutput,
    DEFAULT_LIVE_SSRC, DEFAULT_PREROLL_SSRC,
};
pub use server::{ServerNode, ServerNodeConfig};

use crate::media::MediaError;
use crate::metrics::MetricsError;
use crate::recovery::RecoveryError;
use crate::rtp::RtpError;

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Rtp(#[from] RtpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error("invalid endpoint configuration: {0}")]
    InvalidConfig(String),
}
