#![no_main]

use fedistill::nn::Mlp;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = Mlp::from_checkpoint_bytes(data) {
        let again = Mlp::from_checkpoint_bytes(&model.to_checkpoint_bytes()).expect("re-encoded checkpoint parses");
        assert_eq!(model.layer_dims(), again.layer_dims());
    }
});
