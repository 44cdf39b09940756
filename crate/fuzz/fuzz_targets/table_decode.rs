#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = bahe::atomic::decode_table(data) {
        assert_eq!(bahe::atomic::encode_table(&table), data);
    }
});
