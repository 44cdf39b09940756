#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = bahe::data::parse_users("users.jsonl", text);
        let _ = bahe::data::parse_items("items.jsonl", text);
    }
});
