#![no_main]

use libfuzzer_sys::fuzz_target;
use rrc_core::harness::RunConfig;

fuzz_target!(|data: &[u8]| {
    // Accepted configs survive a write/read cycle unchanged.
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(s) {
            let back = RunConfig::from_json(&cfg.to_json()).expect("re-read of written config");
            assert_eq!(back, cfg);
        }
    }
});
