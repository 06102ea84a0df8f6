//! Shared `key = value` line format used by config and scenario files.
//! `#` starts a comment; blank lines are ignored.

use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvPair {
    pub line: u64,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, got `{content}`")]
    Malformed { line: u64, content: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse every `key = value` pair in order, preserving duplicates.
pub fn parse_kv_lines<R: BufRead>(reader: R) -> Result<Vec<KvPair>, KvError> {
    let mut pairs = Vec::new();
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
        let Some((key, value)) = content.split_once('=') else {
            return Err(KvError::Malformed {
                line: line_no,
                content: content.to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(KvError::Malformed {
                line: line_no,
                content: content.to_string(),
            });
        }
        pairs.push(KvPair {
            line: line_no,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(pairs)
}
