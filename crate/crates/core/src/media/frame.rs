use super::nal::{NalUnit, NAL_TYPE_IDR, NAL_TYPE_NON_IDR};
use super::MediaError;
use crate::Nanos;

/// Encoded size of a [`PictureHeader`].
pub const PICTURE_HEADER_LEN: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Idr,
    P,
}

/// Per-frame metadata carried at the front of the first NAL payload of every
/// frame: frame id, server-referenced capture time and the payload checksum.
///
/// Integers are written as big-endian 7-bit groups with the top bit set, so
/// the header never contains a zero byte and cannot emulate a start code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PictureHeader {
    pub frame_id: u64,
    pub capture_ts: Nanos,
    pub checksum: u32,
}

fn put_groups(out: &mut Vec<u8>, value: u64, groups: usize) {
    for i in (0..groups).rev() {
        out.push(0x80 | ((value >> (7 * i)) & 0x7f) as u8);
    }
}

fn take_groups(bytes: &[u8]) -> Option<u64> {
    let mut v: u64 = 0;
    for &b in bytes {
        if b & 0x80 == 0 {
            return None;
        }
        v = (v << 7) | u64::from(b & 0x7f);
    }
    Some(v)
}

impl PictureHeader {
    pub fn encode(&self) -> [u8; PICTURE_HEADER_LEN] {
        let mut out = Vec::with_capacity(PICTURE_HEADER_LEN);
        put_groups(&mut out, self.frame_id, 10);
        put_groups(&mut out, self.capture_ts as u64, 10);
        put_groups(&mut out, u64::from(self.checksum), 5);
        out.try_into().expect("fixed layout")
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let bytes = bytes.get(..PICTURE_HEADER_LEN)?;
        // 10 groups carry 70 bits; anything above bit 63 must be clear.
        if bytes[0] & 0x7e != 0 || bytes[10] & 0x7e != 0 {
            return None;
        }
        let frame_id = take_groups(&bytes[0..10])?;
        let capture_ts = take_groups(&bytes[10..20])? as i64;
        let checksum = u32::try_from(take_groups(&bytes[20..25])?).ok()?;
        Some(Self {
            frame_id,
            capture_ts,
            checksum,
        })
    }
}

/// CRC-32 over every NAL payload byte that follows the picture header.
pub fn media_checksum(nals: &[NalUnit]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for (i, nal) in nals.iter().enumerate() {
        let body = if i == 0 {
            nal.payload.get(PICTURE_HEADER_LEN..).unwrap_or(&[])
        } else {
            &nal.payload[..]
        };
        hasher.update(body);
    }
    hasher.finalize()
}

/// One compressed picture as produced by the encoder stub.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedFrame {
    pub frame_id: u64,
    pub kind: FrameKind,
    pub capture_ts: Nanos,
    pub nal_units: Vec<NalUnit>,
    pub payload_checksum: u32,
}

impl EncodedFrame {
    /// Assembles a frame from NAL units whose first unit does not yet carry a
    /// picture header; the header is inserted and the checksum computed.
    pub fn build(
        frame_id: u64,
        capture_ts: Nanos,
        mut nal_units: Vec<NalUnit>,
    ) -> Result<Self, MediaError> {
        let first = nal_units
            .first_mut()
            .ok_or_else(|| MediaError::InvalidFrame("frame has no NAL units".into()))?;
        first
            .payload
            .splice(0..0, std::iter::repeat_n(0x80, PICTURE_HEADER_LEN));
        let checksum = media_checksum(&nal_units);
        let header = PictureHeader {
            frame_id,
            capture_ts,
            checksum,
        };
        nal_units[0].payload[..PICTURE_HEADER_LEN].copy_from_slice(&header.encode());
        let kind = kind_of(&nal_units)?;
        Ok(Self {
            frame_id,
            kind,
            capture_ts,
            nal_units,
            payload_checksum: checksum,
        })
    }

    /// Rebuilds a frame from received NAL units, verifying the picture header
    /// and checksum. This is the decode step of the stubbed decoder.
    pub fn from_nal_units(nal_units: Vec<NalUnit>) -> Result<Self, MediaError> {
        let first = nal_units
            .first()
            .ok_or_else(|| MediaError::InvalidFrame("frame has no NAL units".into()))?;
        let header = PictureHeader::decode(&first.payload)
            .ok_or_else(|| MediaError::InvalidFrame("missing picture header".into()))?;
        let actual = media_checksum(&nal_units);
        if actual != header.checksum {
            return Err(MediaError::ChecksumMismatch {
                expected: header.checksum,
                actual,
            });
        }
        let kind = kind_of(&nal_units)?;
        Ok(Self {
            frame_id: header.frame_id,
            kind,
            capture_ts: header.capture_ts,
            nal_units,
            payload_checksum: header.checksum,
        })
    }

    pub fn picture_header(&self) -> Option<PictureHeader> {
        PictureHeader::decode(&self.nal_units.first()?.payload)
    }

    pub fn verify_checksum(&self) -> bool {
        media_checksum(&self.nal_units) == self.payload_checksum
    }

    pub fn is_idr(&self) -> bool {
        self.kind == FrameKind::Idr
    }

    /// Sum of NAL sizes (header byte included).
    pub fn size(&self) -> usize {
        self.nal_units.iter().map(NalUnit::len).sum()
    }
}

fn kind_of(nals: &[NalUnit]) -> Result<FrameKind, MediaError> {
    if nals.iter().any(NalUnit::forbidden_zero_bit) {
        return Err(MediaError::InvalidFrame("forbidden_zero_bit set".into()));
    }
    if nals[0].nal_unit_type() == NAL_TYPE_IDR {
        return Ok(FrameKind::Idr);
    }
    if nals.iter().all(|n| n.nal_unit_type() == NAL_TYPE_NON_IDR) {
        return Ok(FrameKind::P);
    }
    Err(MediaError::InvalidFrame(format!(
        "unsupported NAL type sequence starting with {}",
        nals[0].nal_unit_type()
    )))
}
