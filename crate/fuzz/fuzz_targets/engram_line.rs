#![no_main]

use libfuzzer_sys::fuzz_target;
use rrc_core::engrams::EngramStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(store) = EngramStore::from_jsonl(s) {
            let back =
                EngramStore::from_jsonl(&store.to_jsonl()).expect("re-read of written store");
            assert_eq!(back.len(), store.len());
        }
    }
});
