//! Replays the fuzz seed corpora through the parsers they target, so the
//! seeds keep exercising the accepting paths as formats evolve.

use std::fs;
use std::path::PathBuf;

use rrc_core::engrams::EngramStore;
use rrc_core::harness::RunConfig;
use rrc_core::rrc::EpisodeTrace;
use rrc_core::tasks::{DdeInstance, MazeInstance, SudokuInstance};

fn seed(target: &str, name: &str) -> String {
    let p: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "..",
        "fuzz",
        "corpus",
        target,
        name,
    ]
    .iter()
    .collect();
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn config_seeds_parse() {
    for name in ["empty", "full", "partial"] {
        let cfg = RunConfig::from_json(&seed("config_json", name))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

#[test]
fn engram_seeds_parse() {
    assert!(
        EngramStore::from_jsonl(&seed("engram_line", "dde_store"))
            .unwrap()
            .len()
            > 1
    );
    assert_eq!(
        EngramStore::from_jsonl(&seed("engram_line", "one"))
            .unwrap()
            .len(),
        1
    );
}

#[test]
fn trace_seeds_parse() {
    let short = EpisodeTrace::from_jsonl(&seed("trace_line", "short_episode")).unwrap();
    assert_eq!(short.records.len(), short.summary.t_star + 1);
    assert!(EpisodeTrace::from_jsonl(&seed("trace_line", "truncated")).is_err());
    assert!(EpisodeTrace::from_jsonl(&seed("trace_line", "cycle")).is_err());
}

#[test]
fn sudoku_seeds_parse() {
    for (name, cells) in [
        ("classic", 81),
        ("generated", 81),
        ("mini", 16),
        ("dots", 16),
    ] {
        let inst = SudokuInstance::from_digit_string(&seed("sudoku_digits", name))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(inst.cells().len(), cells);
    }
}

#[test]
fn instance_seeds_parse() {
    SudokuInstance::from_json(&seed("instance_json", "sudoku")).unwrap();
    MazeInstance::from_json(&seed("instance_json", "maze")).unwrap();
    DdeInstance::from_json(&seed("instance_json", "dde")).unwrap();
    assert!(MazeInstance::from_json(&seed("instance_json", "dde")).is_err());
}
