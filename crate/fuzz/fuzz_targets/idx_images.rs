#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((images, (rows, cols))) = fedistill::data::parse_idx_images(data) {
        assert!(images.iter().all(|img| img.len() == rows * cols));
        assert!(images.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    }
});
