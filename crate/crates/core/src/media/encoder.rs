use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frame::{EncodedFrame, PICTURE_HEADER_LEN};
use super::nal::{NalUnit, NAL_TYPE_IDR, NAL_TYPE_NON_IDR};
use super::MediaError;
use crate::Nanos;

/// Smallest frame the stub can emit: NAL header byte plus picture header.
pub const MIN_FRAME_SIZE: usize = 1 + PICTURE_HEADER_LEN;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub fps: u32,
    pub gop_length: u32,
    /// IDR frame size in bytes, NAL header included.
    pub idr_size: usize,
    /// P frame size in bytes, NAL header included.
    pub p_size: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            fps: 30,
            gop_length: 30,
            idr_size: 20_000,
            p_size: 4_000,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), MediaError> {
        if self.fps == 0 {
            return Err(MediaError::InvalidConfig("fps must be > 0".into()));
        }
        if self.gop_length == 0 {
            return Err(MediaError::InvalidConfig("gop_length must be >= 1".into()));
        }
        if self.idr_size < MIN_FRAME_SIZE || self.p_size < MIN_FRAME_SIZE {
            return Err(MediaError::InvalidConfig(format!(
                "frame sizes must be >= {MIN_FRAME_SIZE} bytes"
            )));
        }
        Ok(())
    }

    /// Nominal capture interval.
    pub fn frame_interval(&self) -> Nanos {
        1_000_000_000 / i64::from(self.fps)
    }

    /// Capture time of `frame_id` relative to the stream start, rounded to ns.
    pub fn frame_offset(&self, frame_id: u64) -> Nanos {
        ((frame_id as i128 * 1_000_000_000) / i128::from(self.fps)) as Nanos
    }
}

/// Deterministic stand-in for the hardware encoder.
///
/// Frame `n` is IDR iff `n mod gop_length == 0`; its payload fill is drawn
/// from a ChaCha stream keyed by `(seed, n)`, so the same configuration always
/// yields the same bytes for the same frame.
#[derive(Debug)]
pub struct SyntheticEncoder {
    config: EncoderConfig,
    next_frame_id: u64,
}

impl SyntheticEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self, MediaError> {
        config.validate()?;
        Ok(Self {
            config,
            next_frame_id: 0,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn next_frame_id(&self) -> u64 {
        self.next_frame_id
    }

    pub fn generate_frame(&mut self, now: Nanos) -> EncodedFrame {
        let frame = generate_frame(&self.config, self.next_frame_id, now);
        self.next_frame_id += 1;
        frame
    }
}

/// Pure form of the encoder: the frame a given configuration produces for
/// `frame_id` captured at `capture_ts`.
pub fn generate_frame(config: &EncoderConfig, frame_id: u64, capture_ts: Nanos) -> EncodedFrame {
    let idr = frame_id.is_multiple_of(u64::from(config.gop_length));
    let (size, header) = if idr {
        (config.idr_size, NalUnit::header_byte(3, NAL_TYPE_IDR))
    } else {
        (config.p_size, NalUnit::header_byte(2, NAL_TYPE_NON_IDR))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(frame_id);
    // Zero-free fill keeps the payload framable without escaping.
    let fill: Vec<u8> = (0..size - MIN_FRAME_SIZE)
        .map(|_| rng.random_range(1..=255u8))
        .collect();
    EncodedFrame::build(frame_id, capture_ts, vec![NalUnit::new(header, fill)])
        .expect("stub frames are well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::FrameKind;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            gop_length: 10,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn gop_structure() {
        let c = cfg();
        assert_eq!(generate_frame(&c, 0, 0).kind, FrameKind::Idr);
        assert_eq!(generate_frame(&c, 7, 0).kind, FrameKind::P);
        assert_eq!(generate_frame(&c, 10, 0).kind, FrameKind::Idr);
    }

    #[test]
    fn sizes_match_config() {
        let c = cfg();
        assert_eq!(generate_frame(&c, 0, 0).size(), 20_000);
        assert_eq!(generate_frame(&c, 1, 0).size(), 4_000);
    }

    #[test]
    fn deterministic_per_seed_and_id() {
        let c = cfg();
        let a = generate_frame(&c, 42, 1_000);
        let b = generate_frame(&c, 42, 1_000);
        assert_eq!(a, b);
        assert_eq!(a.payload_checksum, b.payload_checksum);
        let other_seed = EncoderConfig {
            seed: 1,
            ..c.clone()
        };
        assert_ne!(
            a.nal_units,
            generate_frame(&other_seed, 42, 1_000).nal_units
        );
        assert_ne!(a.nal_units, generate_frame(&c, 43, 1_000).nal_units);
    }

    #[test]
    fn stateful_encoder_counts_and_stamps() {
        let mut enc = SyntheticEncoder::new(cfg()).unwrap();
        let f0 = enc.generate_frame(5);
        let f1 = enc.generate_frame(9);
        assert_eq!((f0.frame_id, f0.capture_ts), (0, 5));
        assert_eq!((f1.frame_id, f1.capture_ts), (1, 9));
        assert!(f0.verify_checksum() && f1.verify_checksum());
        assert!(f1.nal_units.iter().all(|n| n.is_framable()));
    }

    #[test]
    fn exactly_one_idr_per_gop_window() {
        let c = cfg();
        for start in 0..25u64 {
            let idrs = (start..start + 10)
                .filter(|&id| generate_frame(&c, id, 0).is_idr())
                .count();
            assert_eq!(idrs, 1, "window starting at {start}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SyntheticEncoder::new(EncoderConfig { fps: 0, ..cfg() }).is_err());
        assert!(SyntheticEncoder::new(EncoderConfig {
            gop_length: 0,
            ..cfg()
        })
        .is_err());
        assert!(SyntheticEncoder::new(EncoderConfig { p_size: 2, ..cfg() }).is_err());
        assert!(SyntheticEncoder::new(EncoderConfig {
            p_size: MIN_FRAME_SIZE,
            ..cfg()
        })
        .is_ok());
    }

    #[test]
    fn frame_offsets_follow_cadence() {
        let c = cfg();
        assert_eq!(c.frame_offset(0), 0);
        assert_eq!(c.frame_offset(1), 33_333_333);
        assert_eq!(c.frame_offset(3), 100_000_000);
    }
}
