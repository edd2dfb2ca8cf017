#![no_main]

use libfuzzer_sys::fuzz_target;
use mblangevin::io::{parse_metrics, write_metrics};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_metrics(data) {
        let mut out = Vec::new();
        write_metrics(&mut out, &rows).unwrap();
        let again = parse_metrics(&out[..]).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});
