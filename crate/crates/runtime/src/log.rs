//! Append-only JSONL event log, one canonical JSON record per line.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::event::EventRecord;
use sbpm_core::canonical;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    BadLine { path: String, line: usize, message: String },
}

pub fn encode_line(rec: &EventRecord) -> String {
    let mut line = canonical::to_string(rec).expect("records serialize");
    line.push('\n');
    line
}

/// Appends one record and flushes it before returning.
pub fn append(path: &Path, rec: &EventRecord) -> Result<(), LogError> {
    let io = |source| LogError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    f.write_all(encode_line(rec).as_bytes()).map_err(io)?;
    f.flush().map_err(io)
}

/// Reads a log file. A final line without a newline is a torn write from a
/// crash and is dropped.
pub fn read(path: &Path) -> Result<Vec<EventRecord>, LogError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(LogError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    parse(&text).map_err(|(line, message)| LogError::BadLine {
        path: path.display().to_string(),
        line,
        message,
    })
}

/// Parses log text; errors carry the 1-based line number.
pub fn parse(text: &str) -> Result<Vec<EventRecord>, (usize, String)> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}
