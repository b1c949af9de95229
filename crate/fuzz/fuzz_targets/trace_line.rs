#![no_main]

use libfuzzer_sys::fuzz_target;
use rrc_core::rrc::EpisodeTrace;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(trace) = EpisodeTrace::from_jsonl(s) {
            let _ = trace.check();
            let back =
                EpisodeTrace::from_jsonl(&trace.to_jsonl()).expect("re-read of written trace");
            assert_eq!(back.records.len(), trace.records.len());
        }
    }
});
