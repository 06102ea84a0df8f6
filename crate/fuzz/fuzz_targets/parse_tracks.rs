#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

use eecc::io::{parse_tracks, TrackWriter};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_tracks(Cursor::new(data)) {
        // Anything we accept must survive a write -> parse round trip.
        let mut writer = TrackWriter::new(Vec::new());
        for record in &records {
            writer.write_record(record).unwrap();
        }
        let rewritten = writer.into_inner();
        let reparsed = parse_tracks(rewritten.as_slice()).unwrap();
        assert_eq!(records.len(), reparsed.len());
        for (a, b) in records.iter().zip(&reparsed) {
            assert_eq!(a.feature_id, b.feature_id);
            assert_eq!(a.states.len(), b.states.len());
        }
    }
});
