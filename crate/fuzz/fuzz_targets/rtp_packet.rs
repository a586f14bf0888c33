#![no_main]

use libfuzzer_sys::fuzz_target;
use roamstream::rtp::RtpPacket;

fuzz_target!(|data: &[u8]| {
    if let Ok(pkt) = RtpPacket::decode(data.to_vec()) {
        let again = RtpPacket::decode(pkt.encode()).expect("re-decode");
        assert_eq!(again, pkt);
    }
});
