#![no_main]

use libfuzzer_sys::fuzz_target;
use pitchprobe_session::wav;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = wav::decode(data) {
        assert_eq!(w.mono().len(), w.frames());
        assert_eq!(w.samples.len(), w.frames() * w.channels as usize);
    }
});
