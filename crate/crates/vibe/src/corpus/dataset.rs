//! Dataset file IO.
//!
//! One JSON record per line with fields `id`, `text`, `timestamp` (integer
//! epoch seconds or an ISO-8601 string), and optional `label`. Label strings
//! are mapped to class ids in first-seen order; the mapping is persisted
//! alongside checkpoints.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TimedDocument};
use crate::error::{Result, VibeError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub text: String,
    pub timestamp: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// First-seen-order label-string ↔ class-id mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn intern(&mut self, name: &str) -> usize {
        match self.names.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                self.names.push(name.to_string());
                self.names.len() - 1
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        for name in &self.names {
            writeln!(out, "{name}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let names = text.lines().map(str::to_owned).collect();
        Ok(Self { names })
    }
}

fn parse_timestamp(value: &serde_json::Value) -> Result<i64> {
    let ts = match value {
        serde_json::Value::Number(n) => n
            .as_i64()
            .ok_or_else(|| VibeError::Parse(format!("non-integer timestamp {n}")))?,
        serde_json::Value::String(s) => DateTime::parse_from_rfc3339(s)
            .map_err(|e| VibeError::Parse(format!("bad ISO-8601 timestamp {s:?}: {e}")))?
            .timestamp(),
        other => return Err(VibeError::Parse(format!("bad timestamp {other}"))),
    };
    if ts < 0 {
        return Err(VibeError::InvalidInput(format!("negative timestamp {ts}")));
    }
    Ok(ts)
}

/// Load a line-record dataset, tokenizing text and interning labels in
/// first-seen order. Documents left with no tokens are dropped; the count of
/// dropped records is returned.
pub fn load_dataset(path: &Path) -> Result<(Vec<TimedDocument>, LabelMap, usize)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut docs = Vec::new();
    let mut labels = LabelMap::default();
    let mut skipped = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| VibeError::Parse(format!("line {}: {e}", lineno + 1)))?;
        let tokens = tokenize(&rec.text);
        if tokens.is_empty() {
            skipped += 1;
            continue;
        }
        let mut doc = TimedDocument::new(rec.id, tokens, parse_timestamp(&rec.timestamp)?);
        doc.label = rec.label.as_deref().map(|l| labels.intern(l));
        docs.push(doc);
    }
    Ok((docs, labels, skipped))
}

/// Write documents back out as line records. Tokens are re-joined with
/// spaces, which round-trips for already-tokenized corpora.
pub fn write_dataset(path: &Path, docs: &[TimedDocument], labels: &LabelMap) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for doc in docs {
        let rec = DatasetRecord {
            id: doc.id.clone(),
            text: doc.tokens.join(" "),
            timestamp: serde_json::Value::from(doc.timestamp),
            label: doc.label.map(|c| labels.name(c).to_string()),
        };
        let line = serde_json::to_string(&rec).map_err(|e| VibeError::Parse(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_jsonl_with_both_timestamp_forms() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"id\":\"a\",\"text\":\"Covid masks\",\"timestamp\":100,\"label\":\"favor\"}\n",
                "{\"id\":\"b\",\"text\":\"vaccine\",\"timestamp\":\"2020-03-01T00:00:00Z\",\"label\":\"against\"}\n",
                "{\"id\":\"c\",\"text\":\"@only_mention\",\"timestamp\":5}\n",
            ),
        )
        .unwrap();
        let (docs, labels, skipped) = load_dataset(&path).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(skipped, 1, "mention-only doc has no tokens");
        assert_eq!(docs[0].tokens, vec!["covid", "masks"]);
        assert_eq!(docs[0].label, Some(0));
        assert_eq!(docs[1].label, Some(1));
        assert_eq!(docs[1].timestamp, 1_583_020_800);
        assert_eq!(labels.names(), ["favor".to_string(), "against".to_string()]);
    }

    #[test]
    fn rejects_negative_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"x\",\"timestamp\":-3}\n").unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut labels = LabelMap::default();
        let mut doc = TimedDocument::new("a", vec!["covid".into(), "wave".into()], 42);
        doc.label = Some(labels.intern("favor"));
        write_dataset(&path, &[doc.clone()], &labels).unwrap();
        let (docs, labels2, _) = load_dataset(&path).unwrap();
        assert_eq!(docs[0], doc);
        assert_eq!(labels2, labels);
    }

    #[test]
    fn label_map_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        let mut labels = LabelMap::default();
        labels.intern("favor");
        labels.intern("against");
        labels.save(&path).unwrap();
        assert_eq!(LabelMap::load(&path).unwrap(), labels);
    }
}
