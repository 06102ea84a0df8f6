#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

use eecc::io::{parse_seeds, StreamHeader};

fuzz_target!(|data: &[u8]| {
    let header = StreamHeader::default();
    if let Ok(seeds) = parse_seeds(Cursor::new(data), &header) {
        // Accepted seeds are in-bounds and sorted by start time.
        assert!(seeds
            .seeds
            .windows(2)
            .all(|w| w[0].t_us <= w[1].t_us));
        for seed in &seeds.seeds {
            assert!(seed.x >= 0.0 && seed.x <= (header.width - 1) as f64);
            assert!(seed.y >= 0.0 && seed.y <= (header.height - 1) as f64);
        }
    }
});
