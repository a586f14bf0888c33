use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Instant;

use proptest::prelude::*;

use roamstream::control::{ControlMessage, Method, SessionId};
use roamstream::media::{generate_frame, EncoderConfig};
use roamstream::relay::{Relay, RelayConfig};
use roamstream::rtp::{carries_idr, starts_idr, starts_nal, Packetizer, RtpPacket};
use roamstream::{Nanos, MS};

const LIVE: u32 = 0x5EED_0001;

fn stream(frames: u64, gop: u32) -> Vec<RtpPacket> {
    let cfg = EncoderConfig {
        gop_length: gop,
        idr_size: 6_000,
        p_size: 1_500,
        ..EncoderConfig::default()
    };
    let mut pk = Packetizer::new(LIVE, 40_000, 0, 1200).unwrap();
    (0..frames)
        .flat_map(|id| {
            pk.packetize_frame(&generate_frame(&cfg, id, id as Nanos * 33 * MS), cfg.fps)
        })
        .collect()
}

fn addr(i: usize) -> SocketAddr {
    format!("10.0.{}.3:7000", i + 1).parse().unwrap()
}

fn subscribe(r: &mut Relay, peer: SocketAddr, now: Nanos) -> SessionId {
    let setup = ControlMessage::request(Method::Setup, "live", 1).with_transport(6000);
    let resp = r.handle_control(&setup, peer, now);
    assert_eq!(resp.status(), Some(200));
    let id = resp.session.unwrap();
    let play = ControlMessage::request(Method::Play, "live", 2).with_session(id.clone());
    assert_eq!(r.handle_control(&play, peer, now).status(), Some(200));
    id
}

fn teardown(r: &mut Relay, id: &SessionId, peer: SocketAddr, now: Nanos) {
    let msg = ControlMessage::request(Method::Teardown, "live", 3).with_session(id.clone());
    assert_eq!(r.handle_control(&msg, peer, now).status(), Some(200));
}

#[derive(Clone, Debug)]
struct Plan {
    packets: Vec<RtpPacket>,
    /// Packet index at which subscriber i joins.
    joins: Vec<usize>,
    /// Subscriber 0 leaves at this index, if set.
    leave: Option<usize>,
}

fn plan() -> impl Strategy<Value = Plan> {
    (
        20u64..60,
        3u32..15,
        prop::collection::vec(0usize..2000, 1..4),
        prop::option::of(0usize..2000),
        any::<u64>(),
    )
        .prop_map(|(frames, gop, joins, leave, swap_seed)| {
            let mut packets = stream(frames, gop);
            // Light reordering: swap some neighbours.
            let mut s = swap_seed;
            for i in 1..packets.len() {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                if s >> 60 == 0 {
                    packets.swap(i - 1, i);
                }
            }
            let n = packets.len();
            Plan {
                joins: joins.into_iter().map(|j| j % n).collect(),
                leave: leave.map(|l| l % n),
                packets,
            }
        })
}

/// Packets forwarded to each subscriber, in delivery order.
fn replay(plan: &Plan, with_leave: bool) -> BTreeMap<usize, Vec<RtpPacket>> {
    let mut r = Relay::new(RelayConfig::new("live", LIVE));
    let mut ids: BTreeMap<usize, SessionId> = BTreeMap::new();
    let mut out: BTreeMap<usize, Vec<RtpPacket>> = BTreeMap::new();
    for (i, pkt) in plan.packets.iter().enumerate() {
        let now = i as Nanos * MS / 10;
        for (sub, &j) in plan.joins.iter().enumerate() {
            if j == i && !ids.contains_key(&sub) {
                ids.insert(sub, subscribe(&mut r, addr(sub), now));
            }
        }
        if with_leave && plan.leave == Some(i) {
            if let Some(id) = ids.get(&0) {
                teardown(&mut r, id, addr(0), now);
            }
        }
        for f in r.ingest_and_fanout(pkt, now).unwrap() {
            let sub = *ids
                .iter()
                .find(|(_, id)| **id == f.session)
                .expect("known session")
                .0;
            let v = out.entry(sub).or_default();
            v.extend(f.replay);
            v.push(pkt.clone());
        }
    }
    out
}

fn is_subsequence(sub: &[RtpPacket], of: &[RtpPacket]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|p| it.any(|q| q == p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fanout_is_an_ordered_subset_and_starts_at_idr(plan in plan()) {
        let out = replay(&plan, true);
        for (sub, pkts) in &out {
            prop_assert!(is_subsequence(pkts, &plan.packets), "subscriber {} got packets out of order", sub);
            let mut seqs: Vec<u16> = pkts.iter().map(|p| p.seq).collect();
            seqs.sort_unstable();
            seqs.dedup();
            prop_assert_eq!(seqs.len(), pkts.len(), "duplicate forward");
            // Replayed fragments may precede the IDR start, but every packet
            // before the first P frame belongs to that IDR.
            let first_ts = pkts[0].timestamp;
            prop_assert!(pkts.iter().take_while(|p| p.timestamp == first_ts).all(|p| carries_idr(&p.payload)));
            let first_start = pkts.iter().find(|p| starts_nal(&p.payload)).unwrap();
            prop_assert!(starts_idr(&first_start.payload), "subscriber {} did not start at an IDR", sub);
        }
    }

    #[test]
    fn teardown_does_not_perturb_others(plan in plan()) {
        let with = replay(&plan, true);
        let without = replay(&plan, false);
        for (sub, pkts) in &without {
            if *sub != 0 {
                prop_assert_eq!(Some(pkts), with.get(sub));
            }
        }
    }
}

#[test]
fn peer_address_change_stops_forwarding() {
    let packets = stream(40, 10);
    let mut r = Relay::new(RelayConfig::new("live", LIVE));
    let id = subscribe(&mut r, addr(0), 0);
    let mut forwarded_after = 0;
    for (i, pkt) in packets.iter().enumerate() {
        if i == packets.len() / 2 {
            // The same session id from a new address is a different peer.
            let ping = ControlMessage::request(Method::Ping, "live", 9).with_session(id.clone());
            let resp = r.handle_control(&ping, addr(5), i as Nanos);
            assert_eq!(resp.status(), Some(454));
        }
        let out = r.ingest_and_fanout(pkt, i as Nanos).unwrap();
        if i >= packets.len() / 2 {
            forwarded_after += out.iter().filter(|f| f.session == id).count();
        }
    }
    assert!(r.forwarded_to(&id) > 0);
    assert_eq!(forwarded_after, 0);
}

#[test]
fn per_packet_relay_time_is_small() {
    let packets = stream(300, 30);
    let mut r = Relay::new(RelayConfig::new("live", LIVE));
    for i in 0..10 {
        subscribe(&mut r, addr(i), 0);
    }
    let start = Instant::now();
    let mut forwards = 0;
    for (i, pkt) in packets.iter().enumerate() {
        let bytes = pkt.encode();
        let decoded = RtpPacket::decode(bytes).unwrap();
        for f in r.ingest_and_fanout(&decoded, i as Nanos).unwrap() {
            forwards += 1 + f.replay.len();
            std::hint::black_box(decoded.encode());
        }
    }
    let per_packet = start.elapsed().as_secs_f64() / packets.len() as f64;
    println!(
        "relay: {} packets, {forwards} forwards to 10 subscribers, {:.1} us per packet",
        packets.len(),
        per_packet * 1e6
    );
    assert_eq!(forwards, packets.len() * 10);
    assert!(per_packet < 0.005, "{per_packet} s per packet");
}
