//! Synthetic H.264-shaped media: NAL units, Annex-B framing, the encoder
//! stub and the pre-roll ring buffer.

mod encoder;
mod frame;
mod nal;
mod ring;
mod source;

pub use encoder::{generate_frame, EncoderConfig, SyntheticEncoder, MIN_FRAME_SIZE};
pub use frame::{media_checksum, EncodedFrame, FrameKind, PictureHeader, PICTURE_HEADER_LEN};
pub use nal::{
    escape_rbsp, parse_annex_b, serialize_annex_b, NalUnit, NAL_TYPE_IDR, NAL_TYPE_NON_IDR,
};
pub use ring::{FrameRingBuffer, DEFAULT_PREROLL};
pub use source::{AnnexBFileSource, FrameSource};

use crate::Nanos;

#[derive(Debug, thiserror::Error)]
pub enum MediaError {
    #[error("malformed Annex-B bitstream: {0}")]
    MalformedBitstream(String),
    #[error("frame captured at {got} is older than newest buffered frame at {newest}")]
    OutOfOrderFrame { newest: Nanos, got: Nanos },
    #[error("no decodable (IDR-led) frames buffered")]
    EmptyBuffer,
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("payload checksum mismatch: expected {expected:08x}, got {actual:08x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
}
