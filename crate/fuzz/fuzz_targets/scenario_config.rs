#![no_main]

use libfuzzer_sys::fuzz_target;
use roamstream::config::{Config, Settings};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = Config::parse(text) {
        let _ = Settings::scenario("custom")
            .expect("built in")
            .overlay(&cfg);
    }
});
