#![no_main]

use libfuzzer_sys::fuzz_target;
use mblangevin::io::{parse_histograms, write_histograms};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_histograms(data) {
        let mut out = Vec::new();
        write_histograms(&mut out, &rows).unwrap();
        let again = parse_histograms(&out[..]).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});
