#![no_main]

use libfuzzer_sys::fuzz_target;
use roamstream::media::{parse_annex_b, serialize_annex_b};

fuzz_target!(|data: &[u8]| {
    // Whatever parses must survive a serialize/parse round trip.
    if let Ok(nals) = parse_annex_b(data) {
        let again = parse_annex_b(&serialize_annex_b(&nals)).expect("reparse");
        assert_eq!(again, nals);
    }
});
