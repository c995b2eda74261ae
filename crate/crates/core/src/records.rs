//! Line-delimited JSON record files.
//!
//! One object per line, UTF-8, fields in declaration order. Errors carry the
//! 1-based line number and the JSON path of the offending field.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: at `{path}`: {message}")]
    Parse {
        line: usize,
        path: String,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RecordError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RecordError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            RecordError::Parse { line, .. } => Some(*line),
            RecordError::Io { .. } => None,
        }
    }
}

/// Canonical single-line encoding. Equal values give equal bytes.
pub fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("record types always serialize")
}

pub fn from_line<T: DeserializeOwned>(text: &str, line: usize) -> Result<T, RecordError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        RecordError::Parse {
            line,
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    de.end().map_err(|e| RecordError::Parse {
        line,
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

/// Parses every non-blank line. `first_line` is the number of the first line
/// of `text` in its file.
pub fn parse_records<T: DeserializeOwned>(text: &str, first_line: usize) -> Result<Vec<T>, RecordError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| from_line(l, i + first_line))
        .collect()
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let text = fs::read_to_string(path).map_err(|e| RecordError::io(path, e))?;
    parse_records(&text, 1)
}

pub fn render_records<'a, T: Serialize + 'a>(items: impl IntoIterator<Item = &'a T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&to_line(item));
        out.push('\n');
    }
    out
}

pub fn write_records<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<usize, RecordError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| RecordError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| RecordError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for item in items {
        writeln!(w, "{}", to_line(item)).map_err(|e| RecordError::io(path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| RecordError::io(path, e))?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Claim, Label, Trajectory};

    #[test]
    fn claim_round_trip() {
        let c = Claim::new("a", "q", "r", Some(Label::NotHallucination)).unwrap();
        let line = to_line(&c);
        assert_eq!(line, r#"{"id":"a","query":"q","response":"r","gold_label":"Not Hallucination"}"#);
        assert_eq!(from_line::<Claim>(&line, 1).unwrap(), c);
    }

    #[test]
    fn missing_field_is_named() {
        let err = from_line::<Claim>(r#"{"id":"a","query":"q"}"#, 7).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("response"), "{msg}");
        assert_eq!(err.line(), Some(7));
    }

    #[test]
    fn unknown_field_rejected() {
        let err = from_line::<Claim>(r#"{"id":"a","query":"q","response":"r","extra":1}"#, 1).unwrap_err();
        assert!(err.to_string().contains("extra"));
    }

    #[test]
    fn nested_path_reported() {
        let line = r#"{"id":"t","claim_id":"c","strategy":{"problem_type":"x","high_level_strategy":"y","plan":["p"]},"steps":[{"thought":"t","action":{"tool":"teleport","args":[]}}]}"#;
        let err = from_line::<Trajectory>(line, 3).unwrap_err();
        match err {
            RecordError::Parse { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, "steps[0].action.tool");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn truncated_line_reports_its_number() {
        let text = "{\"id\":\"a\",\"query\":\"q\",\"response\":\"r\"}\n{\"id\":\"b\",\"que";
        let err = parse_records::<Claim>(text, 1).unwrap_err();
        assert_eq!(err.line(), Some(2));
    }
}
