#![no_main]

use fedistill::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let echo = serde_json::to_string(&cfg).expect("config serializes");
        assert_eq!(ExperimentConfig::from_json(&echo).expect("echo parses"), cfg);
    }
});
