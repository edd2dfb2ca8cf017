#![no_main]

use libfuzzer_sys::fuzz_target;
use mblangevin::models::{LogisticRegressionModel, Model};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = LogisticRegressionModel::from_csv_bytes(data) {
        assert!(m.n_data() > 0 && m.dim() > 0);
    }
});
