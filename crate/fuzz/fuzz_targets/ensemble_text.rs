#![no_main]

use enl_core::model::io::{decode_text, encode_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(e) = decode_text(text) else { return };
    let encoded = encode_text(&e);
    let again = decode_text(&encoded).expect("re-encoded ensemble decodes");
    assert_eq!(encode_text(&again), encoded);
});
