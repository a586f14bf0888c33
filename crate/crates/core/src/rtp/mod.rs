//! RTP wire codec and H.264 payloading (single NAL unit and FU-A modes).

mod depacketizer;
mod packet;
mod packetizer;

pub use depacketizer::{Depacketizer, DepacketizerConfig, DepacketizerStats, FrameAssembly};
pub use packet::{
    carries_idr, seq_newer, starts_idr, starts_nal, ts_newer, RtpPacket, DEFAULT_PAYLOAD_TYPE,
    RTP_CLOCK_RATE, RTP_HEADER_LEN, RTP_VERSION,
};
pub use packetizer::{ticks_per_frame, Packetizer, DEFAULT_MAX_PAYLOAD, FU_A_TYPE};

#[derive(Debug, thiserror::Error)]
pub enum RtpError {
    #[error("datagram of {0} bytes is too short for an RTP packet")]
    TruncatedPacket(usize),
    #[error("unsupported RTP version {0}")]
    BadVersion(u8),
    #[error("inconsistent RTP padding")]
    BadPadding,
    #[error("invalid packetizer configuration: {0}")]
    InvalidConfig(String),
}
