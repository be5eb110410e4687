#![no_main]

use libfuzzer_sys::fuzz_target;
use pitchprobe_core::stimsynth::{parse_harmonics, PhaseMode};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(h) = parse_harmonics(text) {
            assert!(!h.is_empty());
            assert!(h.iter().all(|&k| k >= 1));
        }
        let _ = PhaseMode::parse(text);
    }
});
