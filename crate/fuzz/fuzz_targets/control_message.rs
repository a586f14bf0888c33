#![no_main]

use libfuzzer_sys::fuzz_target;
use roamstream::control::ControlMessage;

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = ControlMessage::parse(data) {
        let again = ControlMessage::parse(&msg.render()).expect("reparse");
        assert_eq!(again, msg);
    }
});
