//! Line-delimited JSON files. Every line is an envelope carrying the format
//! name, version and document kind.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::worlds::ProblemRecord;

pub const FORMAT: &str = "scmbench";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}:{line}: truncated document")]
    Truncated { path: String, line: usize },
    #[error("{path}:{line}: unsupported version {found} (expected {VERSION})")]
    Version { path: String, line: usize, found: u32 },
    #[error("{path}:{line}: expected a `{expected}` document, found `{found}`")]
    Kind {
        path: String,
        line: usize,
        expected: String,
        found: String,
    },
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    kind: &'a str,
    body: &'a T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    body: T,
}

/// One envelope per line, newline terminated.
pub fn to_jsonl<T: Serialize>(kind: &str, items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        let env = EnvelopeOut {
            format: FORMAT,
            version: VERSION,
            kind,
            body: item,
        };
        out.push_str(&serde_json::to_string(&env).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: DeserializeOwned>(path: &str, kind: &str, text: &str) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let syntax = |e: serde_json::Error| {
            if e.is_eof() {
                FormatError::Truncated {
                    path: path.to_owned(),
                    line: line_no,
                }
            } else {
                FormatError::Syntax {
                    path: path.to_owned(),
                    line: line_no,
                    column: e.column(),
                    message: e.to_string(),
                }
            }
        };
        let header: Header = serde_json::from_str(line).map_err(syntax)?;
        if header.format != FORMAT {
            return Err(FormatError::Kind {
                path: path.to_owned(),
                line: line_no,
                expected: FORMAT.to_owned(),
                found: header.format,
            });
        }
        if header.version != VERSION {
            return Err(FormatError::Version {
                path: path.to_owned(),
                line: line_no,
                found: header.version,
            });
        }
        if header.kind != kind {
            return Err(FormatError::Kind {
                path: path.to_owned(),
                line: line_no,
                expected: kind.to_owned(),
                found: header.kind,
            });
        }
        let env: EnvelopeIn<T> = serde_json::from_str(line).map_err(syntax)?;
        out.push(env.body);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, kind: &str, items: &[T]) -> Result<(), FormatError> {
    let io = |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(to_jsonl(kind, items).as_bytes()).map_err(io)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_jsonl(&path.display().to_string(), kind, &text)
}

pub const RECORD: &str = "record";
pub const SUBMISSION: &str = "submission";
pub const ALT_TASK: &str = "alt_task";
pub const RESULT: &str = "result";
pub const LADDER: &str = "ladder";

pub fn save_records(path: &Path, records: &[ProblemRecord]) -> Result<(), FormatError> {
    write_jsonl(path, RECORD, records)
}

pub fn load_records(path: &Path) -> Result<Vec<ProblemRecord>, FormatError> {
    read_jsonl(path, RECORD)
}

pub fn save_record(path: &Path, record: &ProblemRecord) -> Result<(), FormatError> {
    save_records(path, std::slice::from_ref(record))
}

/// The single record stored at `path`.
pub fn load_record(path: &Path) -> Result<ProblemRecord, FormatError> {
    let mut all = load_records(path)?;
    if all.len() != 1 {
        return Err(FormatError::Syntax {
            path: path.display().to_string(),
            line: 1,
            column: 1,
            message: format!("expected one record, found {}", all.len()),
        });
    }
    Ok(all.remove(0))
}
