#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(vocab) = bahe::data::Vocab::parse(text) {
            let again = bahe::data::Vocab::parse(&vocab.to_file_string()).unwrap();
            assert_eq!(again.words(), vocab.words());
        }
    }
});
