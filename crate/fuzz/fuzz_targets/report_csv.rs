#![no_main]

use fedistill::harness::{compare, read_metrics, DEFAULT_THRESHOLDS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_metrics(data) {
        let cmp = compare(&rows, &rows, &DEFAULT_THRESHOLDS);
        assert!(cmp.deltas.iter().all(|d| d.bytes_delta == 0));
    }
});
