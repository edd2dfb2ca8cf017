#![no_main]

use libfuzzer_sys::fuzz_target;
use mblangevin::io::{parse_projection, write_projection};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_projection(data) {
        let mut out = Vec::new();
        write_projection(&mut out, &rows).unwrap();
        let again = parse_projection(&out[..]).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});
