//! Conversion of the dataset's native release format into the JSON Lines
//! corpus format.
//!
//! Accepted inputs: a JSON array, or JSON Lines, whose records are either
//! arrays `[title, text, event_type, ...]` (trailing elements such as
//! argument annotations are ignored) or objects with `title`, `text` and one
//! of `event_type` / `label` / `type`, plus an optional `id`. Records without
//! an id become `{split}-{index}`.

use std::fs;
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use crate::corpus::{write_corpus, Document, LabeledCorpus};

#[derive(Debug, Error)]
pub enum NativeFormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: {message}")]
    Record { record: usize, message: String },
    #[error("input is neither a JSON array nor JSON Lines: {0}")]
    Syntax(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

fn as_text(v: Option<&Value>, what: &str, record: usize) -> Result<String, NativeFormatError> {
    match v {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(NativeFormatError::Record {
            record,
            message: format!("{what} must be a string, got {other}"),
        }),
        None => Err(NativeFormatError::Record {
            record,
            message: format!("missing {what}"),
        }),
    }
}

fn convert(record: usize, value: &Value, split: &str) -> Result<Document, NativeFormatError> {
    let (id, title, text, label) = match value {
        Value::Array(items) => (
            None,
            as_text(items.first(), "title", record)?,
            as_text(items.get(1), "text", record)?,
            as_text(items.get(2), "event type", record)?,
        ),
        Value::Object(obj) => (
            field(obj, &["id", "doc_id"])
                .map(|v| as_text(Some(v), "id", record))
                .transpose()?,
            as_text(
                field(obj, &["title"]).or(Some(&Value::String(String::new()))),
                "title",
                record,
            )?,
            as_text(field(obj, &["text", "content", "body"]), "text", record)?,
            as_text(
                field(obj, &["event_type", "label", "type"]),
                "event type",
                record,
            )?,
        ),
        other => {
            return Err(NativeFormatError::Record {
                record,
                message: format!("expected an array or object, got {other}"),
            })
        }
    };
    Ok(Document {
        id: id.unwrap_or_else(|| format!("{split}-{record}")),
        title: title.trim().to_owned(),
        text: text.trim().to_owned(),
        label: label.trim().to_owned(),
    })
}

fn parse_records(raw: &str) -> Result<Vec<Value>, NativeFormatError> {
    let trimmed = raw.trim_start();
    if trimmed.starts_with('[') {
        if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(trimmed) {
            // A whole-file array of records, unless it is a single-line
            // JSON Lines file holding one array record.
            if items.iter().all(|v| v.is_array() || v.is_object()) {
                return Ok(items);
            }
        }
    }
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| NativeFormatError::Syntax(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Reads a native split file, writes it as a JSON Lines corpus and returns
/// the validated corpus.
pub fn ingest_native(
    input: &Path,
    output: &Path,
    split: &str,
) -> Result<LabeledCorpus, NativeFormatError> {
    let raw = fs::read_to_string(input).map_err(|source| NativeFormatError::Io {
        path: input.display().to_string(),
        source,
    })?;
    let docs = parse_records(&raw)?
        .iter()
        .enumerate()
        .map(|(i, v)| convert(i, v, split))
        .collect::<Result<Vec<_>, _>>()?;
    let corpus = LabeledCorpus::new(docs)?;
    write_corpus(output, corpus.documents())?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_corpus;

    fn run(input: &str) -> Result<LabeledCorpus, NativeFormatError> {
        let dir = tempfile::tempdir().unwrap();
        let (src, dst) = (dir.path().join("in.json"), dir.path().join("out.jsonl"));
        fs::write(&src, input).unwrap();
        let corpus = ingest_native(&src, &dst, "train")?;
        let reloaded = load_corpus(&dst).unwrap();
        assert_eq!(reloaded.documents(), corpus.documents());
        Ok(corpus)
    }

    #[test]
    fn array_of_array_records() {
        let c = run(r#"[["Quake hits", "A quake struck.", "Earthquake", "[]"], ["Vote", "People voted.", "Election", "[]"]]"#).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.documents()[0].id, "train-0");
        assert_eq!(c.documents()[1].label, "Election");
        assert_eq!(c.label_set(), ["Earthquake", "Election"]);
    }

    #[test]
    fn jsonl_objects_with_alternative_keys() {
        let c = run("{\"id\":\"x\",\"title\":\"T\",\"text\":\"body\",\"event_type\":\"Fire\"}\n\n{\"title\":\"U\",\"text\":\"more\",\"label\":\"Flood\"}\n").unwrap();
        assert_eq!(c.documents()[0].id, "x");
        assert_eq!(c.documents()[1].id, "train-1");
        assert_eq!(c.documents()[1].label, "Flood");
    }

    #[test]
    fn single_line_array_record_is_jsonl() {
        let c = run("[\"T\", \"body text\", \"Fire\"]\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.documents()[0].title, "T");
    }

    #[test]
    fn missing_label_is_reported() {
        let err = run(r#"[{"title":"T","text":"body"}]"#).unwrap_err();
        assert!(
            matches!(err, NativeFormatError::Record { record: 0, .. }),
            "{err}"
        );
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(
            run("not json").unwrap_err(),
            NativeFormatError::Syntax(_)
        ));
    }
}
