#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = bahe::pipeline::decode_checkpoint(data) {
        let again = bahe::pipeline::decode_checkpoint(&bahe::pipeline::encode_checkpoint(&model)).unwrap();
        assert_eq!(again, model);
    }
});
