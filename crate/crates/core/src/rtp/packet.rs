use bytes::{BufMut, Bytes, BytesMut};

use super::RtpError;

pub const RTP_VERSION: u8 = 2;
pub const RTP_HEADER_LEN: usize = 12;
pub const DEFAULT_PAYLOAD_TYPE: u8 = 96;
pub const RTP_CLOCK_RATE: u32 = 90_000;

/// A single RTP packet. Version is always 2; CSRCs, header extensions and
/// padding are never emitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RtpPacket {
    pub marker: bool,
    pub payload_type: u8,
    pub seq: u16,
    pub timestamp: u32,
    pub ssrc: u32,
    pub payload: Bytes,
}

impl RtpPacket {
    pub fn encoded_len(&self) -> usize {
        RTP_HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Bytes {
        let mut buf = BytesMut::with_capacity(self.encoded_len());
        buf.put_u8(RTP_VERSION << 6);
        buf.put_u8((u8::from(self.marker) << 7) | (self.payload_type & 0x7f));
        buf.put_u16(self.seq);
        buf.put_u32(self.timestamp);
        buf.put_u32(self.ssrc);
        buf.put_slice(&self.payload);
        buf.freeze()
    }

    /// Parses a datagram. CSRC lists, extensions and padding from other
    /// senders are validated and skipped.
    pub fn decode(datagram: impl Into<Bytes>) -> Result<Self, RtpError> {
        let data: Bytes = datagram.into();
        if data.len() < RTP_HEADER_LEN {
            return Err(RtpError::TruncatedPacket(data.len()));
        }
        let version = data[0] >> 6;
        if version != RTP_VERSION {
            return Err(RtpError::BadVersion(version));
        }
        let padding = data[0] & 0x20 != 0;
        let extension = data[0] & 0x10 != 0;
        let csrc_count = usize::from(data[0] & 0x0f);

        let mut offset = RTP_HEADER_LEN + 4 * csrc_count;
        if extension {
            let ext_words = data
                .get(offset + 2..offset + 4)
                .ok_or(RtpError::TruncatedPacket(data.len()))?;
            offset += 4 + 4 * usize::from(u16::from_be_bytes([ext_words[0], ext_words[1]]));
        }
        let mut end = data.len();
        if padding {
            let pad = usize::from(*data.last().expect("len >= 12"));
            if pad == 0 || pad > end.saturating_sub(offset) {
                return Err(RtpError::BadPadding);
            }
            end -= pad;
        }
        if offset > end {
            return Err(RtpError::TruncatedPacket(data.len()));
        }
        Ok(Self {
            marker: data[1] & 0x80 != 0,
            payload_type: data[1] & 0x7f,
            seq: u16::from_be_bytes([data[2], data[3]]),
            timestamp: u32::from_be_bytes([data[4], data[5], data[6], data[7]]),
            ssrc: u32::from_be_bytes([data[8], data[9], data[10], data[11]]),
            payload: data.slice(offset..end),
        })
    }
}

/// True when `a` is later than `b` in 16-bit serial-number order.
pub fn seq_newer(a: u16, b: u16) -> bool {
    a != b && a.wrapping_sub(b) < 0x8000
}

/// True when `a` is later than `b` in 32-bit timestamp order.
pub fn ts_newer(a: u32, b: u32) -> bool {
    a != b && a.wrapping_sub(b) < 0x8000_0000
}

/// Reads just enough of an H.264 RTP payload to tell whether it opens an IDR
/// picture: a single IDR NAL, or the first FU-A fragment of one.
pub fn starts_idr(payload: &[u8]) -> bool {
    match payload {
        [h, ..] if h & 0x1f == 5 => true,
        [h, fu, ..] if h & 0x1f == 28 => fu & 0x80 != 0 && fu & 0x1f == 5,
        _ => false,
    }
}

/// True when the payload carries any part of an IDR NAL unit.
pub fn carries_idr(payload: &[u8]) -> bool {
    match payload {
        [h, fu, ..] if h & 0x1f == 28 => fu & 0x1f == 5,
        [h, ..] => h & 0x1f == 5,
        [] => false,
    }
}

/// True when the payload begins a NAL unit (single NAL or FU-A start).
pub fn starts_nal(payload: &[u8]) -> bool {
    match payload {
        [h, ..] if (1..=23).contains(&(h & 0x1f)) => true,
        [h, fu, ..] if h & 0x1f == 28 => fu & 0x80 != 0,
        _ => false,
    }
}
