#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = fedistill::data::parse_idx_labels(data) {
        assert!(labels.iter().all(|&l| l < 256));
    }
});
