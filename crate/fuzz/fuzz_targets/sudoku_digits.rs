#![no_main]

use libfuzzer_sys::fuzz_target;
use rrc_core::tasks::SudokuInstance;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(inst) = SudokuInstance::from_digit_string(s) {
            let back = SudokuInstance::from_digit_string(&inst.to_digit_string())
                .expect("re-read of written grid");
            assert_eq!(back, inst);
        }
    }
});
