#![no_main]

use libfuzzer_sys::fuzz_target;
use mblangevin::io::{parse_field, write_field};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_field(data) {
        let mut out = Vec::new();
        write_field(&mut out, &rows).unwrap();
        let again = parse_field(&out[..]).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});
