use std::path::Path;

use super::encoder::SyntheticEncoder;
use super::frame::EncodedFrame;
use super::nal::{parse_annex_b, NalUnit, NAL_TYPE_IDR, NAL_TYPE_NON_IDR};
use super::MediaError;
use crate::Nanos;

/// Anything that can hand the sender its next compressed frame.
pub trait FrameSource {
    fn next_frame(&mut self, capture_ts: Nanos) -> EncodedFrame;
}

impl FrameSource for SyntheticEncoder {
    fn next_frame(&mut self, capture_ts: Nanos) -> EncodedFrame {
        self.generate_frame(capture_ts)
    }
}

/// Replays the slices of a raw Annex-B file as frames, looping at the end.
///
/// Each IDR or non-IDR slice NAL becomes one frame; parameter sets and other
/// non-slice units are skipped. The loop restarts at the first IDR so the
/// replay stays decodable.
#[derive(Debug)]
pub struct AnnexBFileSource {
    slices: Vec<NalUnit>,
    loop_start: usize,
    cursor: usize,
    next_frame_id: u64,
}

impl AnnexBFileSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MediaError> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| {
            MediaError::MalformedBitstream(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bitstream: &[u8]) -> Result<Self, MediaError> {
        let slices: Vec<NalUnit> = parse_annex_b(bitstream)?
            .into_iter()
            .filter(|n| matches!(n.nal_unit_type(), NAL_TYPE_IDR | NAL_TYPE_NON_IDR))
            .collect();
        let loop_start = slices
            .iter()
            .position(NalUnit::is_idr)
            .ok_or(MediaError::EmptyBuffer)?;
        Ok(Self {
            slices,
            loop_start,
            cursor: loop_start,
            next_frame_id: 0,
        })
    }

    pub fn slice_count(&self) -> usize {
        self.slices.len() - self.loop_start
    }
}

impl FrameSource for AnnexBFileSource {
    fn next_frame(&mut self, capture_ts: Nanos) -> EncodedFrame {
        let nal = self.slices[self.cursor].clone();
        self.cursor += 1;
        if self.cursor == self.slices.len() {
            self.cursor = self.loop_start;
        }
        let id = self.next_frame_id;
        self.next_frame_id += 1;
        EncodedFrame::build(id, capture_ts, vec![nal]).expect("slice NALs carry types 1 or 5")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::FrameKind;

    #[test]
    fn replays_slices_skipping_parameter_sets() {
        let stream = [
            0, 0, 0, 1, 0x67, 0x42, // SPS
            0, 0, 0, 1, 0x68, 0xCE, // PPS
            0, 0, 0, 1, 0x65, 0x88, 0x84, // IDR
            0, 0, 1, 0x41, 0x9A, // P
        ];
        let mut src = AnnexBFileSource::from_bytes(&stream).unwrap();
        assert_eq!(src.slice_count(), 2);
        let kinds: Vec<_> = (0..4).map(|i| src.next_frame(i)).collect();
        assert_eq!(
            kinds.iter().map(|f| f.kind).collect::<Vec<_>>(),
            vec![FrameKind::Idr, FrameKind::P, FrameKind::Idr, FrameKind::P]
        );
        assert_eq!(kinds[3].frame_id, 3);
        assert!(kinds.iter().all(EncodedFrame::verify_checksum));
    }

    #[test]
    fn stream_without_idr_is_rejected() {
        assert!(AnnexBFileSource::from_bytes(&[0, 0, 1, 0x41, 0x01]).is_err());
    }
}
