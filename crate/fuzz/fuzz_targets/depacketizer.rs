#![no_main]

use libfuzzer_sys::fuzz_target;
use roamstream::rtp::{Depacketizer, RtpPacket};

// Input is a sequence of datagrams, each prefixed by a one-byte length.
fuzz_target!(|data: &[u8]| {
    let mut depack = Depacketizer::default();
    let mut rest = data;
    let mut now = 0;
    while let Some((&len, tail)) = rest.split_first() {
        let n = usize::from(len).min(tail.len());
        let (datagram, next) = tail.split_at(n);
        rest = next;
        now += 1_000_000;
        if let Ok(pkt) = RtpPacket::decode(datagram.to_vec()) {
            for a in depack.push(pkt, now) {
                assert_eq!(a.complete, !a.loss_detected);
            }
        }
    }
    for a in depack.flush() {
        assert_eq!(a.complete, !a.loss_detected);
    }
});
