#![no_main]

use libfuzzer_sys::fuzz_target;
use monoview::bridge::TensorPayload;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = TensorPayload::from_json(text);
    }
});
