#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = mblangevin::config::parse_config(data) {
        // Whatever parses must serialise and parse back.
        let text = serde_json::to_vec(&cfg).unwrap();
        mblangevin::config::parse_config(&text).unwrap();
    }
});
