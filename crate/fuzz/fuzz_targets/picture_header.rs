#![no_main]

use libfuzzer_sys::fuzz_target;
use roamstream::media::{parse_annex_b, EncodedFrame, PictureHeader};

fuzz_target!(|data: &[u8]| {
    if let Some(h) = PictureHeader::decode(data) {
        assert_eq!(PictureHeader::decode(&h.encode()), Some(h));
    }
    if let Ok(nals) = parse_annex_b(data) {
        if let Ok(frame) = EncodedFrame::from_nal_units(nals) {
            assert!(frame.picture_header().is_some());
        }
    }
});
