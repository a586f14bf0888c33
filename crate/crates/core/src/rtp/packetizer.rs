use bytes::{BufMut, Bytes, BytesMut};

use super::packet::{RtpPacket, DEFAULT_PAYLOAD_TYPE, RTP_CLOCK_RATE};
use super::RtpError;
use crate::media::EncodedFrame;

pub const DEFAULT_MAX_PAYLOAD: usize = 1200;
pub const FU_A_TYPE: u8 = 28;
const FU_START: u8 = 0x80;
const FU_END: u8 = 0x40;

/// RTP ticks per frame at the given frame rate.
pub fn ticks_per_frame(fps: u32) -> u32 {
    (f64::from(RTP_CLOCK_RATE) / f64::from(fps)).round() as u32
}

/// Turns frames into single-NAL and FU-A packets for one stream.
#[derive(Clone, Debug)]
pub struct Packetizer {
    ssrc: u32,
    next_seq: u16,
    ts_base: u32,
    max_payload: usize,
    payload_type: u8,
}

impl Packetizer {
    pub fn new(
        ssrc: u32,
        initial_seq: u16,
        ts_base: u32,
        max_payload: usize,
    ) -> Result<Self, RtpError> {
        if max_payload < 3 {
            return Err(RtpError::InvalidConfig(format!(
                "max_payload {max_payload} leaves no room for an FU-A fragment"
            )));
        }
        Ok(Self {
            ssrc,
            next_seq: initial_seq,
            ts_base,
            max_payload,
            payload_type: DEFAULT_PAYLOAD_TYPE,
        })
    }

    pub fn ssrc(&self) -> u32 {
        self.ssrc
    }

    pub fn next_seq(&self) -> u16 {
        self.next_seq
    }

    pub fn ts_base(&self) -> u32 {
        self.ts_base
    }

    pub fn max_payload(&self) -> usize {
        self.max_payload
    }

    pub fn rtp_timestamp(&self, frame_id: u64, fps: u32) -> u32 {
        self.ts_base
            .wrapping_add((frame_id as u32).wrapping_mul(ticks_per_frame(fps)))
    }

    pub fn packetize_frame(&mut self, frame: &EncodedFrame, fps: u32) -> Vec<RtpPacket> {
        let timestamp = self.rtp_timestamp(frame.frame_id, fps);
        let mut payloads: Vec<Bytes> = Vec::new();
        for nal in &frame.nal_units {
            if nal.len() <= self.max_payload {
                let mut b = BytesMut::with_capacity(nal.len());
                b.put_u8(nal.header);
                b.put_slice(&nal.payload);
                payloads.push(b.freeze());
                continue;
            }
            let indicator = (nal.header & 0xe0) | FU_A_TYPE;
            let chunks: Vec<&[u8]> = nal.payload.chunks(self.max_payload - 2).collect();
            let last = chunks.len() - 1;
            for (i, chunk) in chunks.into_iter().enumerate() {
                let mut fu_header = nal.header & 0x1f;
                if i == 0 {
                    fu_header |= FU_START;
                }
                if i == last {
                    fu_header |= FU_END;
                }
                let mut b = BytesMut::with_capacity(chunk.len() + 2);
                b.put_u8(indicator);
                b.put_u8(fu_header);
                b.put_slice(chunk);
                payloads.push(b.freeze());
            }
        }
        let count = payloads.len();
        payloads
            .into_iter()
            .enumerate()
            .map(|(i, payload)| {
                let seq = self.next_seq;
                self.next_seq = self.next_seq.wrapping_add(1);
                RtpPacket {
                    marker: i + 1 == count,
                    payload_type: self.payload_type,
                    seq,
                    timestamp,
                    ssrc: self.ssrc,
                    payload,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::NalUnit;

    fn frame_with(id: u64, payload_len: usize) -> EncodedFrame {
        // build() prepends the 25-byte picture header.
        let body = vec![0x11; payload_len - crate::media::PICTURE_HEADER_LEN];
        EncodedFrame::build(id, 0, vec![NalUnit::new(0x65, body)]).unwrap()
    }

    #[test]
    fn small_nal_is_single_packet() {
        let mut p = Packetizer::new(1, 0, 0, 1200).unwrap();
        let f = frame_with(0, 999);
        let pkts = p.packetize_frame(&f, 30);
        assert_eq!(pkts.len(), 1);
        assert_eq!(pkts[0].payload.len(), 1000);
        assert!(pkts[0].marker);
    }

    #[test]
    fn large_nal_is_fragmented() {
        let mut p = Packetizer::new(1, 0, 0, 1200).unwrap();
        let f = frame_with(0, 3000);
        let pkts = p.packetize_frame(&f, 30);
        assert_eq!(pkts.len(), 3);
        assert_eq!(pkts[0].payload[0], 0x60 | 28);
        assert_eq!(pkts[0].payload[1], 0x80 | 5);
        assert_eq!(pkts[1].payload[1], 5);
        assert_eq!(pkts[2].payload[1], 0x40 | 5);
        assert_eq!(pkts.iter().filter(|p| p.marker).count(), 1);
        assert!(pkts[2].marker);
        assert!(pkts.iter().all(|p| p.payload.len() <= 1200));
        let rebuilt: Vec<u8> = pkts.iter().flat_map(|p| p.payload[2..].to_vec()).collect();
        assert_eq!(rebuilt, f.nal_units[0].payload);
    }

    #[test]
    fn timestamps_advance_by_frame_ticks() {
        let mut p = Packetizer::new(1, 0, 1000, 1200).unwrap();
        let a = p.packetize_frame(&frame_with(0, 100), 30);
        let b = p.packetize_frame(&frame_with(1, 100), 30);
        assert_eq!(b[0].timestamp - a[0].timestamp, 3000);
        assert_eq!(ticks_per_frame(25), 3600);
    }

    #[test]
    fn seq_wraps_consecutively() {
        let mut p = Packetizer::new(1, 65534, 0, 1200).unwrap();
        let pkts = p.packetize_frame(&frame_with(0, 3000), 30);
        let seqs: Vec<u16> = pkts.iter().map(|p| p.seq).collect();
        assert_eq!(seqs, vec![65534, 65535, 0]);
        assert_eq!(p.next_seq(), 1);
    }

    #[test]
    fn tiny_max_payload_rejected() {
        assert!(Packetizer::new(1, 0, 0, 2).is_err());
        assert!(Packetizer::new(1, 0, 0, 3).is_ok());
    }
}
