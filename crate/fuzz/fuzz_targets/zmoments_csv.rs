#![no_main]

use libfuzzer_sys::fuzz_target;
use mblangevin::io::{parse_zmoments, write_zmoments};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_zmoments(data) {
        let mut out = Vec::new();
        write_zmoments(&mut out, &rows).unwrap();
        let again = parse_zmoments(&out[..]).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});
