use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use roamstream::media::{generate_frame, EncodedFrame, EncoderConfig, FrameRingBuffer, MediaError};
use roamstream::rtp::{Depacketizer, Packetizer, RtpPacket, FU_A_TYPE};
use roamstream::{Nanos, MS};

fn encoder(gop: u32, idr: usize, p: usize) -> EncoderConfig {
    EncoderConfig {
        gop_length: gop,
        idr_size: idr,
        p_size: p,
        ..EncoderConfig::default()
    }
}

fn frames(cfg: &EncoderConfig, n: u64) -> Vec<EncodedFrame> {
    (0..n)
        .map(|id| generate_frame(cfg, id, cfg.frame_offset(id)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn encoder_is_deterministic_with_one_idr_per_gop(gop in 1u32..40, start in 0u64..500) {
        let cfg = encoder(gop, 3000, 800);
        let a: Vec<EncodedFrame> = (start..start + 3 * u64::from(gop)).map(|id| generate_frame(&cfg, id, id as Nanos)).collect();
        let b: Vec<EncodedFrame> = (start..start + 3 * u64::from(gop)).map(|id| generate_frame(&cfg, id, id as Nanos)).collect();
        prop_assert_eq!(&a, &b);
        for w in a.windows(gop as usize) {
            prop_assert_eq!(w.iter().filter(|f| f.is_idr()).count(), 1);
        }
        prop_assert!(a.iter().all(EncodedFrame::verify_checksum));
    }

    #[test]
    fn seq_is_consecutive_across_frames(initial in any::<u16>(), n in 1u64..40, max_payload in 200usize..1500) {
        let cfg = encoder(10, 5000, 900);
        let mut pk = Packetizer::new(7, initial, 0, max_payload).unwrap();
        let pkts: Vec<RtpPacket> = frames(&cfg, n).iter().flat_map(|f| pk.packetize_frame(f, cfg.fps)).collect();
        prop_assert_eq!(pkts[0].seq, initial);
        for w in pkts.windows(2) {
            prop_assert_eq!(w[1].seq, w[0].seq.wrapping_add(1));
        }
        prop_assert_eq!(pk.next_seq(), initial.wrapping_add(pkts.len() as u16));
        // One marker per frame, on its last packet.
        prop_assert_eq!(pkts.iter().filter(|p| p.marker).count() as u64, n);
        for p in pkts.iter().filter(|p| p.payload[0] & 0x1f == FU_A_TYPE) {
            let fu = p.payload[1];
            prop_assert!(fu & 0xc0 != 0xc0, "fragment with both S and E");
        }
    }

    #[test]
    fn any_arrival_order_reassembles(
        idr in 26usize..20_000,
        p in 26usize..5_000,
        order in any::<u64>(),
        initial in any::<u16>(),
    ) {
        let cfg = encoder(4, idr, p);
        let mut pk = Packetizer::new(7, initial, 90, 1000).unwrap();
        let mut depack = Depacketizer::default();
        for f in frames(&cfg, 6) {
            let mut pkts = pk.packetize_frame(&f, cfg.fps);
            let runner_seed = order ^ f.frame_id;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(runner_seed);
            rand::seq::SliceRandom::shuffle(&mut pkts[..], &mut rng);
            let out: Vec<_> = pkts.into_iter().flat_map(|q| depack.push(q, 0)).collect();
            prop_assert_eq!(out.len(), 1);
            prop_assert!(out[0].complete && !out[0].loss_detected);
            prop_assert_eq!(&out[0].nal_units, &f.nal_units);
            prop_assert_eq!(EncodedFrame::from_nal_units(out[0].nal_units.clone()).unwrap(), f);
        }
    }

    #[test]
    fn loss_is_detected_exactly(drops in prop::collection::btree_set(0usize..400, 0..20)) {
        let cfg = encoder(5, 4000, 1500);
        let mut pk = Packetizer::new(7, 65_500, 0, 1000).unwrap();
        let all: Vec<RtpPacket> = frames(&cfg, 20).iter().flat_map(|f| pk.packetize_frame(f, cfg.fps)).collect();
        // The first frame anchors the sequence space and is never damaged.
        let first_ts = all[0].timestamp;
        let anchor = all.iter().take_while(|q| q.timestamp == first_ts).count();
        let dropped: BTreeSet<usize> = drops.into_iter().filter(|&i| i >= anchor && i < all.len()).collect();
        let mut last_index: BTreeMap<u32, usize> = BTreeMap::new();
        for (i, q) in all.iter().enumerate() {
            last_index.insert(q.timestamp, i);
        }
        let mut depack = Depacketizer::default();
        let mut out = Vec::new();
        for (i, q) in all.into_iter().enumerate() {
            if !dropped.contains(&i) {
                out.extend(depack.push(q, 0));
            }
        }
        out.extend(depack.flush());
        let seen: BTreeSet<u32> = out.iter().map(|a| a.rtp_timestamp).collect();
        prop_assert_eq!(seen.len(), out.len(), "a frame was emitted twice");
        // A receiver sees a frame as everything after the previous emitted
        // frame up to its own last packet, so a wholly lost frame counts
        // against its successor.
        let mut prev_end: Option<usize> = None;
        for a in &out {
            let end = last_index[&a.rtp_timestamp];
            let start = prev_end.map_or(0, |e| e + 1);
            let expected = dropped.range(start..=end).next().is_some();
            prop_assert_eq!(a.loss_detected, expected, "ts {}", a.rtp_timestamp);
            prop_assert_eq!(a.complete, !a.loss_detected);
            prev_end = Some(end);
        }
    }

    #[test]
    fn ring_span_is_bounded_and_snapshots_start_at_idr(
        gaps in prop::collection::vec(0i64..400, 1..300),
        capacity_ms in 1i64..3_000,
        gop in 1u32..50,
    ) {
        let cfg = encoder(gop, 100, 40);
        let mut ring = FrameRingBuffer::new(capacity_ms * MS);
        let mut t = 0;
        for (id, gap) in gaps.iter().enumerate() {
            t += gap * MS;
            ring.push(generate_frame(&cfg, id as u64, t)).unwrap();
            prop_assert!(ring.span() <= capacity_ms * MS);
            match ring.snapshot() {
                Ok(s) => {
                    prop_assert!(s[0].is_idr());
                    prop_assert!(s.windows(2).all(|w| w[0].capture_ts <= w[1].capture_ts));
                }
                Err(MediaError::EmptyBuffer) => prop_assert!(ring.snapshot().is_err()),
                Err(e) => prop_assert!(false, "unexpected {}", e),
            }
        }
    }
}

#[test]
fn ring_keeps_the_last_fifteen_seconds() {
    let cfg = encoder(30, 100, 40);
    let mut ring = FrameRingBuffer::default();
    for id in 0..=600u64 {
        ring.push(generate_frame(&cfg, id, cfg.frame_offset(id)))
            .unwrap();
    }
    // Frames 150..=600 have capture times in [5 s, 20 s].
    assert_eq!(ring.len(), 451);
    let snap = ring.snapshot().unwrap();
    assert_eq!(snap[0].frame_id, 150);
    assert_eq!(snap.last().unwrap().frame_id, 600);
}
