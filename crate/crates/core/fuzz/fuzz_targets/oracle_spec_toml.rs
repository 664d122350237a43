#![no_main]

use libfuzzer_sys::fuzz_target;
use monoview::toolkit::OracleSceneSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = OracleSceneSpec::from_toml(text) {
            OracleSceneSpec::from_toml(&spec.to_toml()).expect("round trip");
        }
    }
});
