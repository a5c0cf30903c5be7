//! Line-delimited JSON I/O.
//!
//! Every record type that crosses a stage boundary implements
//! [`JsonlRecord`]; its `validate` hook runs on both read and write so an
//! invalid record never reaches disk and never leaves the reader.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

/// A record that violates its type's invariants.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("field `{field}`: {message}")]
pub struct SchemaViolation {
    pub field: String,
    pub message: String,
}

impl SchemaViolation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        SchemaViolation { field: field.into(), message: message.into() }
    }
}

pub trait JsonlRecord: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<(), SchemaViolation> {
        Ok(())
    }

    /// Identifier used in diagnostics, when the record has one.
    fn record_id(&self) -> Option<&str> {
        None
    }
}

impl JsonlRecord for serde_json::Value {}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: malformed JSON ({source}): {content}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        content: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}:{line}: schema violation in {field}: {message}", path.display(), field = violation.field, message = violation.message)]
    Schema {
        path: PathBuf,
        line: usize,
        violation: SchemaViolation,
    },
}

impl JsonlError {
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Io { .. } => None,
            JsonlError::Malformed { line, .. } | JsonlError::Schema { line, .. } => Some(*line),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        JsonlError::Io { path: path.to_path_buf(), source }
    }
}

/// A record with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct Numbered<T> {
    pub line: usize,
    pub record: T,
}

pub struct JsonlReader<T> {
    path: PathBuf,
    lines: io::Lines<BufReader<File>>,
    line: usize,
    _marker: PhantomData<T>,
}

/// Opens `path` for streaming record-by-record reads. Blank lines are skipped.
pub fn read_jsonl<T: JsonlRecord>(path: impl AsRef<Path>) -> Result<JsonlReader<T>, JsonlError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    Ok(JsonlReader {
        path: path.to_path_buf(),
        lines: BufReader::new(file).lines(),
        line: 0,
        _marker: PhantomData,
    })
}

/// Reads every record, stopping at the first error.
pub fn read_all<T: JsonlRecord>(path: impl AsRef<Path>) -> Result<Vec<T>, JsonlError> {
    read_jsonl(path)?.map(|r| r.map(|n| n.record)).collect()
}

impl<T: JsonlRecord> JsonlReader<T> {
    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Drops line numbers.
    pub fn records(self) -> impl Iterator<Item = Result<T, JsonlError>> {
        self.map(|r| r.map(|n| n.record))
    }

    fn parse(&self, text: &str) -> Result<T, JsonlError> {
        let record: T = serde_json::from_str(text).map_err(|source| {
            if source.classify() == serde_json::error::Category::Data {
                JsonlError::Schema {
                    path: self.path.clone(),
                    line: self.line,
                    violation: data_violation(&source),
                }
            } else {
                JsonlError::Malformed {
                    path: self.path.clone(),
                    line: self.line,
                    content: truncate(text, 200),
                    source,
                }
            }
        })?;
        record.validate().map_err(|violation| JsonlError::Schema {
            path: self.path.clone(),
            line: self.line,
            violation,
        })?;
        Ok(record)
    }
}

impl<T: JsonlRecord> Iterator for JsonlReader<T> {
    type Item = Result<Numbered<T>, JsonlError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(JsonlError::io(&self.path, e))),
            };
            self.line += 1;
            let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
            if text.trim().is_empty() {
                continue;
            }
            return Some(self.parse(text).map(|record| Numbered { line: self.line, record }));
        }
    }
}

fn data_violation(err: &serde_json::Error) -> SchemaViolation {
    let msg = err.to_string();
    let field = ["missing field `", "unknown field `", "duplicate field `"]
        .iter()
        .find_map(|prefix| {
            let rest = msg.strip_prefix(prefix)?;
            rest.split('`').next().map(String::from)
        })
        .unwrap_or_else(|| "(record)".to_string());
    let message = msg.split(" at line ").next().unwrap_or(&msg).to_string();
    SchemaViolation { field, message }
}

fn truncate(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => format!("{}…", &text[..idx]),
        None => text.to_string(),
    }
}

/// Streaming writer: one compact JSON object per line, `\n`-terminated.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
    written: usize,
}

impl JsonlWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, JsonlError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| JsonlError::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| JsonlError::io(path, e))?;
        Ok(JsonlWriter { path: path.to_path_buf(), out: BufWriter::new(file), written: 0 })
    }

    pub fn write<T: JsonlRecord>(&mut self, record: &T) -> Result<(), JsonlError> {
        let line = self.written + 1;
        record.validate().map_err(|violation| JsonlError::Schema {
            path: self.path.clone(),
            line,
            violation,
        })?;
        serde_json::to_writer(&mut self.out, record).map_err(|e| JsonlError::io(&self.path, e.into()))?;
        self.out.write_all(b"\n").map_err(|e| JsonlError::io(&self.path, e))?;
        self.written = line;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<usize, JsonlError> {
        self.out.flush().map_err(|e| JsonlError::io(&self.path, e))?;
        Ok(self.written)
    }
}

/// Writes all `records` to `path`, returning the number written.
pub fn write_jsonl<'a, T, I>(records: I, path: impl AsRef<Path>) -> Result<usize, JsonlError>
where
    T: JsonlRecord + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut writer = JsonlWriter::create(path)?;
    for record in records {
        writer.write(record)?;
    }
    writer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Segment;
    use proptest::prelude::*;

    fn write_raw(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn reads_in_order_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_raw(
            &dir,
            "s.jsonl",
            "{\"id\":\"a\",\"source_text\":\"x\"}\n{\"id\":\"b\",\"source_text\":\"y\"}\n{\"id\":\"c\",\"source_text\":\"z\"}\n",
        );
        let recs: Vec<_> = read_jsonl::<Segment>(&path).unwrap().map(Result::unwrap).collect();
        assert_eq!(recs.iter().map(|n| n.line).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(recs.iter().map(|n| n.record.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn malformed_line_names_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_raw(
            &dir,
            "s.jsonl",
            "{\"id\":\"a\",\"source_text\":\"x\"}\n{\"id\": oops\n{\"id\":\"c\",\"source_text\":\"z\"}\n",
        );
        let err = read_all::<Segment>(&path).unwrap_err();
        assert_eq!(err.line(), Some(2));
        assert!(matches!(err, JsonlError::Malformed { ref content, .. } if content.contains("oops")));
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn missing_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_raw(&dir, "s.jsonl", "{\"id\":\"a\"}\n");
        match read_all::<Segment>(&path).unwrap_err() {
            JsonlError::Schema { line, violation, .. } => {
                assert_eq!(line, 1);
                assert_eq!(violation.field, "source_text");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariant_violation_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_raw(&dir, "s.jsonl", "{\"id\":\"\",\"source_text\":\"x\"}\n");
        assert!(matches!(read_all::<Segment>(&path), Err(JsonlError::Schema { .. })));
    }

    #[test]
    fn empty_file_and_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.jsonl");
        assert_eq!(write_jsonl::<Segment, _>(&[], &path).unwrap(), 0);
        assert_eq!(fs::metadata(&path).unwrap().len(), 0);
        assert!(read_all::<Segment>(&path).unwrap().is_empty());
    }

    #[test]
    fn utf8_preserved_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.jsonl");
        let seg = Segment::text("u1", "Wait…").with_reference("等一下……「好」");
        write_jsonl([&seg], &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(!bytes.starts_with(&[0xEF, 0xBB, 0xBF]));
        assert!(bytes.ends_with(b"\n"));
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("等一下……「好」"));
        let back = read_all::<Segment>(&path).unwrap();
        assert_eq!(back, vec![seg]);
        write_jsonl(&back, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn write_rejects_invalid_records() {
        let dir = tempfile::tempdir().unwrap();
        let bad = Segment::text("", "x");
        assert!(write_jsonl([&bad], dir.path().join("b.jsonl")).is_err());
    }

    fn arb_segment() -> impl Strategy<Value = Segment> {
        (
            "[a-z0-9]{1,8}",
            "[a-zA-Z …\"\\\\\n\t你好世界]{1,30}",
            proptest::option::of("[a-z 你好…]{0,20}"),
            proptest::option::of("[a-z/]{1,12}\\.png"),
        )
            .prop_map(|(id, source_text, reference_translation, image_ref)| Segment {
                id,
                source_text,
                reference_translation,
                image_ref,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_is_identity(segs in proptest::collection::vec(arb_segment(), 0..100)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.jsonl");
            write_jsonl(&segs, &path).unwrap();
            let first = fs::read(&path).unwrap();
            let back = read_all::<Segment>(&path).unwrap();
            prop_assert_eq!(&back, &segs);
            write_jsonl(&back, &path).unwrap();
            prop_assert_eq!(fs::read(&path).unwrap(), first);
        }
    }
}
