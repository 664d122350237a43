#![no_main]

use libfuzzer_sys::fuzz_target;
use monoview::toolkit::{decode_pfm, encode_pfm};

fuzz_target!(|data: &[u8]| {
    if let Ok(depth) = decode_pfm(data) {
        let again = decode_pfm(&encode_pfm(&depth)).expect("re-encoded pfm decodes");
        assert_eq!(again.width(), depth.width());
        assert_eq!(again.height(), depth.height());
    }
});
