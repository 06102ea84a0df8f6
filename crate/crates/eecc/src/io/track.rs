//! Track CSV: `feature_id,t_us,x,y,theta_rad` state rows, one header per
//! file, closed by a terminator row naming the termination reason.
//!
//! Floats are written in exponent form with 13 significant digits so a parse
//! of the written file reproduces every state to well below 1e-9.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::tracker::{TerminationReason, TrackRecord, TrackState};

pub const TRACK_HEADER: &str = "feature_id,t_us,x,y,theta_rad";
const TERMINATOR_TAG: &str = "terminated";

/// Serialize track records to one sink; the header is emitted once.
pub struct TrackWriter<W> {
    sink: W,
    header_written: bool,
}

impl<W: Write> TrackWriter<W> {
    pub fn new(sink: W) -> Self {
        Self {
            sink,
            header_written: false,
        }
    }

    /// Write one record (all states plus the terminator row); returns the
    /// bytes written for this record.
    pub fn write_record(&mut self, record: &TrackRecord) -> std::io::Result<u64> {
        let mut bytes = 0u64;
        let emit = |sink: &mut W, line: &str| -> std::io::Result<u64> {
            sink.write_all(line.as_bytes())?;
            sink.write_all(b"\n")?;
            Ok(line.len() as u64 + 1)
        };
        if !self.header_written {
            bytes += emit(&mut self.sink, TRACK_HEADER)?;
            self.header_written = true;
        }
        for state in &record.states {
            let line = format!(
                "{},{},{:.12e},{:.12e},{:.12e}",
                record.feature_id, state.t_us, state.x, state.y, state.theta
            );
            bytes += emit(&mut self.sink, &line)?;
        }
        let reason = record
            .reason
            .map(|r| r.as_str())
            .unwrap_or("open");
        let line = format!("{},{TERMINATOR_TAG},{reason},,", record.feature_id);
        bytes += emit(&mut self.sink, &line)?;
        Ok(bytes)
    }

    pub fn into_inner(self) -> W {
        self.sink
    }
}

#[derive(Debug, Error)]
pub enum TrackParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: state row for feature {got} inside record of feature {expected}")]
    InterleavedRecords { line: u64, got: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse a track CSV written by [`TrackWriter`]. Records must be contiguous
/// per feature id; a record without a terminator row is returned with
/// `reason = None`.
pub fn parse_tracks<R: BufRead>(reader: R) -> Result<Vec<TrackRecord>, TrackParseError> {
    let mut records: Vec<TrackRecord> = Vec::new();
    let mut open: Option<TrackRecord> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        let content = line.trim();
        if content.is_empty() || content == TRACK_HEADER {
            continue;
        }
        let fields: Vec<&str> = content.split(',').collect();
        if fields.len() != 5 {
            return Err(TrackParseError::Malformed {
                line: line_no,
                reason: format!("expected 5 comma-separated fields, got {}", fields.len()),
            });
        }
        let feature_id: u32 = fields[0].parse().map_err(|_| TrackParseError::Malformed {
            line: line_no,
            reason: format!("bad feature id `{}`", fields[0]),
        })?;

        if fields[1] == TERMINATOR_TAG {
            let mut record = match open.take() {
                Some(r) if r.feature_id == feature_id => r,
                Some(r) => {
                    return Err(TrackParseError::InterleavedRecords {
                        line: line_no,
                        got: feature_id,
                        expected: r.feature_id,
                    })
                }
                // Terminator without states: an empty-history record.
                None => TrackRecord::new(feature_id),
            };
            record.reason = TerminationReason::parse(fields[2]);
            records.push(record);
            continue;
        }

        let t_us: i64 = fields[1].parse().map_err(|_| TrackParseError::Malformed {
            line: line_no,
            reason: format!("bad timestamp `{}`", fields[1]),
        })?;
        let parse_f64 = |raw: &str, name: &str| -> Result<f64, TrackParseError> {
            let v: f64 = raw.parse().map_err(|_| TrackParseError::Malformed {
                line: line_no,
                reason: format!("bad {name} `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(TrackParseError::Malformed {
                    line: line_no,
                    reason: format!("non-finite {name} `{raw}`"),
                });
            }
            Ok(v)
        };
        let state = TrackState {
            t_us,
            x: parse_f64(fields[2], "x")?,
            y: parse_f64(fields[3], "y")?,
            theta: parse_f64(fields[4], "theta")?,
        };

        match open.as_mut() {
            Some(record) if record.feature_id == feature_id => record.states.push(state),
            Some(record) => {
                return Err(TrackParseError::InterleavedRecords {
                    line: line_no,
                    got: feature_id,
                    expected: record.feature_id,
                })
            }
            None => {
                let mut record = TrackRecord::new(feature_id);
                record.states.push(state);
                open = Some(record);
            }
        }
    }
    if let Some(record) = open {
        records.push(record);
    }
    Ok(records)
}
