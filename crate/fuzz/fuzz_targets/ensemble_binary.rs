#![no_main]

use enl_core::model::io::{decode_binary, encode_binary};
use libfuzzer_sys::fuzz_target;

// Decoding never panics; a decoded ensemble re-encodes to a fixed point.
fuzz_target!(|data: &[u8]| {
    let Ok(e) = decode_binary(data) else { return };
    let bytes = encode_binary(&e);
    let again = decode_binary(&bytes).expect("re-encoded ensemble decodes");
    assert_eq!(encode_binary(&again), bytes);
});
