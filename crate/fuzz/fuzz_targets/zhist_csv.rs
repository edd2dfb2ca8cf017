#![no_main]

use libfuzzer_sys::fuzz_target;
use mblangevin::io::{parse_zhist, write_zhist};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_zhist(data) {
        let mut out = Vec::new();
        write_zhist(&mut out, &rows).unwrap();
        let again = parse_zhist(&out[..]).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});
