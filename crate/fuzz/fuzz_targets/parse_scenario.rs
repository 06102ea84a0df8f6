#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

use eecc::synth::parse_scenario;

fuzz_target!(|data: &[u8]| {
    if let Ok(scenario) = parse_scenario(Cursor::new(data)) {
        assert!(scenario.motion.duration_s() > 0.0);
        assert!(!scenario.scene.segments.is_empty());
    }
});
