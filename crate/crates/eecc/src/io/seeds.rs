//! Seed list parsing: `t x y [label]` per line, `#` comments.

use std::io::BufRead;

use thiserror::Error;

use crate::event::secs_to_us;
use crate::io::events::StreamHeader;

/// A requested feature seed: start time and position, with an optional label
/// carried through to outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSpec {
    pub t_us: i64,
    pub x: f64,
    pub y: f64,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRejection {
    pub line: u64,
    pub reason: String,
}

/// Parsed seed list, sorted by start time, plus per-line rejections for
/// seeds that failed validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Seeds {
    pub seeds: Vec<SeedSpec>,
    pub rejected: Vec<SeedRejection>,
}

#[derive(Debug, Error)]
pub enum SeedParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn parse_seeds<R: BufRead>(reader: R, header: &StreamHeader) -> Result<Seeds, SeedParseError> {
    let mut out = Seeds::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(SeedParseError::Malformed {
                line: line_no,
                reason: format!("expected `t x y [label]`, got {} fields", fields.len()),
            });
        }
        let parse_f64 = |raw: &str, name: &str| -> Result<f64, SeedParseError> {
            raw.parse().map_err(|_| SeedParseError::Malformed {
                line: line_no,
                reason: format!("bad {name} `{raw}`"),
            })
        };
        let t = parse_f64(fields[0], "time")?;
        let x = parse_f64(fields[1], "x")?;
        let y = parse_f64(fields[2], "y")?;
        if !t.is_finite() || t < 0.0 {
            return Err(SeedParseError::Malformed {
                line: line_no,
                reason: format!("seed time {t} out of range"),
            });
        }
        if !x.is_finite()
            || !y.is_finite()
            || x < 0.0
            || y < 0.0
            || x > (header.width - 1) as f64
            || y > (header.height - 1) as f64
        {
            out.rejected.push(SeedRejection {
                line: line_no,
                reason: format!(
                    "position ({x}, {y}) outside the {}x{} sensor",
                    header.width, header.height
                ),
            });
            continue;
        }
        out.seeds.push(SeedSpec {
            t_us: secs_to_us(t),
            x,
            y,
            label: fields.get(3).map(|s| s.to_string()),
        });
    }
    out.seeds.sort_by_key(|s| s.t_us);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn header() -> StreamHeader {
        StreamHeader::default()
    }

    #[test]
    fn parses_a_minimal_seed() {
        let seeds = parse_seeds(Cursor::new("0.5 120 90\n"), &header()).unwrap();
        assert_eq!(seeds.seeds.len(), 1);
        assert_eq!(seeds.seeds[0].t_us, 500_000);
        assert_eq!(seeds.seeds[0].label, None);
        assert!(seeds.rejected.is_empty());
    }

    #[test]
    fn out_of_bounds_seed_is_rejected_with_report() {
        let seeds = parse_seeds(Cursor::new("0.5 500 90\n"), &header()).unwrap();
        assert!(seeds.seeds.is_empty());
        assert_eq!(seeds.rejected.len(), 1);
        assert_eq!(seeds.rejected[0].line, 1);
    }

    #[test]
    fn unsorted_input_is_sorted_by_time() {
        let text = "2.0 50 50 late\n0.5 60 60 early\n1.0 70 70 mid\n";
        let seeds = parse_seeds(Cursor::new(text), &header()).unwrap();
        let labels: Vec<&str> = seeds
            .seeds
            .iter()
            .map(|s| s.label.as_deref().unwrap())
            .collect();
        assert_eq!(labels, ["early", "mid", "late"]);
    }

    #[test]
    fn comments_and_labels() {
        let text = "# seeds\n0.1 10 10 corner # inline\n";
        let seeds = parse_seeds(Cursor::new(text), &header()).unwrap();
        assert_eq!(seeds.seeds[0].label.as_deref(), Some("corner"));
    }

    #[test]
    fn malformed_line_is_an_error() {
        assert!(parse_seeds(Cursor::new("0.1 10\n"), &header()).is_err());
        assert!(parse_seeds(Cursor::new("x y z\n"), &header()).is_err());
    }
}
