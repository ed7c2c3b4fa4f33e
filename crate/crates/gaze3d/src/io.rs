//! Reading with line diagnostics and all-or-nothing writing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_error(path: &Path, line_offset: usize, err: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let field = err.path().to_string();
    let inner = err.into_inner();
    let message = if field.is_empty() || field == "." {
        inner.to_string()
    } else {
        format!("field `{field}`: {inner}")
    };
    Error::Parse {
        path: path.to_path_buf(),
        line: inner.line() + line_offset,
        column: inner.column(),
        message,
    }
}

fn parse_one<T: DeserializeOwned>(path: &Path, text: &str, line_offset: usize) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| parse_error(path, line_offset, e))?;
    de.end().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() + line_offset,
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(value)
}

/// Parses one JSON document, reporting the failing field path and position.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    parse_one(path, text, 0)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(path, &read_text(path)?)
}

/// Parses JSON Lines; blank lines are skipped.
pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_one(path, line, i)?);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(path, &read_text(path)?)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("records serialize")
}

/// Indented form for documents meant to be edited by hand.
pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize");
    s.push('\n');
    s
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&to_json(r));
        s.push('\n');
    }
    s
}

/// Writes `bytes` through a temporary file in the same directory and an
/// atomic rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// A set of output files committed together.
///
/// Every file is staged next to its destination first; nothing is renamed
/// into place until all of them were written.
#[derive(Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> Result<()> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
            tmp.write_all(bytes).map_err(io_err(path))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e.error,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Rec {
        a: i64,
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let err = parse_jsonl::<Rec>(Path::new("x.jsonl"), "{\"a\":1}\n\n{\"a\":\"no\"}\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("`a`"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
