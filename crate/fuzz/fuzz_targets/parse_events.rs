//! The event-stream parser must handle arbitrary bytes without panicking,
//! and whatever it yields must respect the stream invariants.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

use eecc::io::{EventReader, StreamHeader, TimestampPolicy};

fuzz_target!(|data: &[u8]| {
    for policy in [TimestampPolicy::SkipWithWarning, TimestampPolicy::Strict] {
        let header = StreamHeader::default();
        let reader = EventReader::new(Cursor::new(data), header, policy);
        let mut last_t = i64::MIN;
        for item in reader.take(10_000) {
            match item {
                Ok(event) => {
                    assert!(event.t_us >= 0);
                    assert!(event.t_us >= last_t);
                    assert!(event.x >= 0.0 && event.x <= (header.width - 1) as f64);
                    assert!(event.y >= 0.0 && event.y <= (header.height - 1) as f64);
                    assert!(event.polarity == 1 || event.polarity == -1);
                    last_t = event.t_us;
                }
                Err(_) => break,
            }
        }
    }
});
