#![no_main]

use libfuzzer_sys::fuzz_target;
use pitchprobe_session::sidecar::Sidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = Sidecar::parse(text) {
            let again = Sidecar::parse(&s.to_json()).expect("serialized sidecar parses");
            assert_eq!(again.wav, s.wav);
        }
    }
});
