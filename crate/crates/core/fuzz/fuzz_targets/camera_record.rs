#![no_main]

use libfuzzer_sys::fuzz_target;
use monoview::render::{parse_camera_file, parse_camera_record};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_camera_record(text);
        let _ = parse_camera_file(text);
    }
});
