#![no_main]

use libfuzzer_sys::fuzz_target;
use pitchprobe_session::capture::{decode_frames, CaptureBuffer};

fuzz_target!(|data: &[u8]| {
    if let Ok(frames) = decode_frames(data) {
        let mut buf = CaptureBuffer::new(8000.0, 4000);
        for f in &frames {
            buf.push(f);
        }
        let st = buf.status();
        assert!(st.high_water <= st.capacity_samples);
        assert_eq!(buf.samples().len(), st.high_water);
    }
});
