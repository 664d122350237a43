#![no_main]

use libfuzzer_sys::fuzz_target;
use monoview::toolkit::DatasetMeta;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(meta) = DatasetMeta::parse(text) {
            assert_eq!(DatasetMeta::parse(&meta.to_text()).expect("round trip"), meta);
        }
    }
});
