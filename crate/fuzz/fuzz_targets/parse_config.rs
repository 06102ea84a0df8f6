#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

use eecc::io::Config;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = Config::parse(Cursor::new(data)) {
        // A parsed config is always internally valid and convertible.
        assert!(config.validate().is_ok());
        let _ = config.tracker_params();
    }
});
