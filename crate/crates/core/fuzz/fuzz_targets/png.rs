#![no_main]

use libfuzzer_sys::fuzz_target;
use monoview::toolkit::decode_png;

fuzz_target!(|data: &[u8]| {
    let _ = decode_png(data);
});
