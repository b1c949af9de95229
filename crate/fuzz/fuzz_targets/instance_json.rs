#![no_main]

use libfuzzer_sys::fuzz_target;
use rrc_core::tasks::{DdeInstance, MazeInstance, SudokuInstance};

fuzz_target!(|data: &[u8]| {
    // One input is offered to every task's instance parser.
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(i) = SudokuInstance::from_json(s) {
            assert_eq!(
                SudokuInstance::from_json(&i.to_json()).expect("sudoku re-read"),
                i
            );
        }
        if let Ok(i) = MazeInstance::from_json(s) {
            assert_eq!(
                MazeInstance::from_json(&i.to_json()).expect("maze re-read"),
                i
            );
        }
        if let Ok(i) = DdeInstance::from_json(s) {
            assert_eq!(
                DdeInstance::from_json(&i.to_json()).expect("dde re-read"),
                i
            );
        }
    }
});
