#![no_main]

use libfuzzer_sys::fuzz_target;
use monoview::trainer::SynthesisConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = SynthesisConfig::from_toml(text) {
            // anything accepted must survive a round trip
            SynthesisConfig::from_toml(&cfg.to_toml()).expect("round trip");
        }
    }
});
