//! Streaming parser for whitespace-separated `t x y p` event files, the
//! plain-text convention of public event-camera recordings: `t` in decimal
//! seconds, `x y` in pixels, `p` in `{0, 1}`.

use std::io::BufRead;

use thiserror::Error;

use crate::event::{secs_to_us, Event};

/// Stream geometry and time origin. Events outside the sensor rectangle are
/// rejected at parse time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    /// Subtracted from every timestamp before conversion to microseconds.
    pub t0_secs: f64,
}

impl Default for StreamHeader {
    fn default() -> Self {
        Self {
            width: 240,
            height: 180,
            t0_secs: 0.0,
        }
    }
}

impl StreamHeader {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            t0_secs: 0.0,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// What to do with a timestamp that goes backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimestampPolicy {
    /// Drop the event and count it (real recordings contain rare reorderings).
    #[default]
    SkipWithWarning,
    /// Surface an error.
    Strict,
}

#[derive(Debug, Error)]
pub enum EventParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: position ({x}, {y}) outside the {width}x{height} sensor")]
    OutOfRect {
        line: u64,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("line {line}: timestamp {t_us} us precedes previous event at {prev_us} us")]
    NonMonotonic { line: u64, t_us: i64, prev_us: i64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lazy event-stream reader; yields events in file order with timestamps
/// converted to integer microseconds and polarity mapped to +-1. Memory use
/// is one line buffer regardless of file length.
pub struct EventReader<R> {
    reader: R,
    header: StreamHeader,
    policy: TimestampPolicy,
    line: u64,
    prev_us: Option<i64>,
    skipped: u64,
    buf: String,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(reader: R, header: StreamHeader, policy: TimestampPolicy) -> Self {
        Self {
            reader,
            header,
            policy,
            line: 0,
            prev_us: None,
            skipped: 0,
            buf: String::new(),
        }
    }

    /// Out-of-order events dropped so far under the skip policy.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn parse_line(&self, content: &str) -> Result<Event, EventParseError> {
        let line = self.line;
        let mut fields = content.split_whitespace();
        let mut next = |name: &str| {
            fields.next().ok_or_else(|| EventParseError::Malformed {
                line,
                reason: format!("missing {name} field"),
            })
        };
        let t_raw = next("timestamp")?;
        let x_raw = next("x")?;
        let y_raw = next("y")?;
        let p_raw = next("polarity")?;
        if fields.next().is_some() {
            return Err(EventParseError::Malformed {
                line,
                reason: "expected exactly 4 fields `t x y p`".into(),
            });
        }

        let t: f64 = t_raw.parse().map_err(|_| EventParseError::Malformed {
            line,
            reason: format!("bad timestamp `{t_raw}`"),
        })?;
        let x: f64 = x_raw.parse().map_err(|_| EventParseError::Malformed {
            line,
            reason: format!("bad x coordinate `{x_raw}`"),
        })?;
        let y: f64 = y_raw.parse().map_err(|_| EventParseError::Malformed {
            line,
            reason: format!("bad y coordinate `{y_raw}`"),
        })?;
        let polarity = match p_raw {
            "0" => -1,
            "1" => 1,
            other => {
                return Err(EventParseError::Malformed {
                    line,
                    reason: format!("polarity must be 0 or 1, got `{other}`"),
                })
            }
        };

        let t = t - self.header.t0_secs;
        if !t.is_finite() || !(0.0..=9.0e12).contains(&t) {
            return Err(EventParseError::Malformed {
                line,
                reason: format!("timestamp {t} s out of range"),
            });
        }
        if !x.is_finite() || !y.is_finite() || !self.header.contains(x, y) {
            return Err(EventParseError::OutOfRect {
                line,
                x,
                y,
                width: self.header.width,
                height: self.header.height,
            });
        }
        Ok(Event::new(secs_to_us(t), x, y, polarity))
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event, EventParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let content = self.buf.trim();
            if content.is_empty() {
                continue;
            }
            let event = match self.parse_line(content) {
                Ok(e) => e,
                Err(e) => return Some(Err(e)),
            };
            if let Some(prev_us) = self.prev_us {
                if event.t_us < prev_us {
                    match self.policy {
                        TimestampPolicy::SkipWithWarning => {
                            self.skipped += 1;
                            continue;
                        }
                        TimestampPolicy::Strict => {
                            return Some(Err(EventParseError::NonMonotonic {
                                line: self.line,
                                t_us: event.t_us,
                                prev_us,
                            }))
                        }
                    }
                }
            }
            self.prev_us = Some(event.t_us);
            return Some(Ok(event));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read_all(text: &str, policy: TimestampPolicy) -> (Vec<Event>, u64) {
        let mut reader = EventReader::new(Cursor::new(text), StreamHeader::default(), policy);
        let mut events = Vec::new();
        for item in reader.by_ref() {
            events.push(item.unwrap());
        }
        (events, reader.skipped())
    }

    #[test]
    fn parses_the_dataset_convention() {
        let (events, _) = read_all("0.003811 96 133 0\n", TimestampPolicy::Strict);
        assert_eq!(events, vec![Event::new(3811, 96.0, 133.0, -1)]);
    }

    #[test]
    fn empty_file_yields_nothing() {
        let (events, skipped) = read_all("", TimestampPolicy::Strict);
        assert!(events.is_empty());
        assert_eq!(skipped, 0);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let mut reader = EventReader::new(
            Cursor::new("abc\n"),
            StreamHeader::default(),
            TimestampPolicy::Strict,
        );
        match reader.next().unwrap().unwrap_err() {
            EventParseError::Malformed { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_rect_event_is_an_error() {
        let mut reader = EventReader::new(
            Cursor::new("0.1 500 90 1\n"),
            StreamHeader::default(),
            TimestampPolicy::Strict,
        );
        assert!(matches!(
            reader.next().unwrap().unwrap_err(),
            EventParseError::OutOfRect { line: 1, .. }
        ));
    }

    #[test]
    fn non_monotone_skipped_by_default() {
        let text = "0.2 10 10 1\n0.1 11 11 0\n0.3 12 12 1\n";
        let (events, skipped) = read_all(text, TimestampPolicy::SkipWithWarning);
        assert_eq!(events.len(), 2);
        assert_eq!(skipped, 1);
        assert_eq!(events[1].t_us, 300_000);
    }

    #[test]
    fn non_monotone_fails_in_strict_mode() {
        let text = "0.2 10 10 1\n0.1 11 11 0\n";
        let mut reader = EventReader::new(
            Cursor::new(text),
            StreamHeader::default(),
            TimestampPolicy::Strict,
        );
        assert!(reader.next().unwrap().is_ok());
        assert!(matches!(
            reader.next().unwrap().unwrap_err(),
            EventParseError::NonMonotonic { line: 2, .. }
        ));
    }

    #[test]
    fn equal_timestamps_pass_strict_mode() {
        let text = "0.2 10 10 1\n0.2 11 11 0\n";
        let (events, _) = read_all(text, TimestampPolicy::Strict);
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn polarity_must_be_binary() {
        let mut reader = EventReader::new(
            Cursor::new("0.1 10 10 2\n"),
            StreamHeader::default(),
            TimestampPolicy::Strict,
        );
        assert!(matches!(
            reader.next().unwrap().unwrap_err(),
            EventParseError::Malformed { .. }
        ));
    }
}
