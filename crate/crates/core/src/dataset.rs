//! Multiple-choice datasets: loading, validation and fixed subsampling.
//!
//! Three on-disk shapes are understood. All of them may be stored either as a
//! JSON array of records or as JSON-lines (one record per line).
//!
//! * `generic_json`: `{"id"?, "question", "options": [..], "answer"}` where
//!   `answer` is a 0-based index or an option letter (`"A"` = 0).
//! * `mmlu_json`: `{"question", "choices": [..], "answer", "subject"?}`.
//! * `csqa_json`: `{"id", "question": {"stem", "choices": [{"label", "text"}]}, "answerKey"}`.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng;

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 26;

/// Where in an input file a problem was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Record(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Record(n) => write!(f, "record {n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },
    #[error("schema error at {location}: {message}")]
    Schema { location: Location, message: String },
    #[error("mixed option counts: expected {expected}, found {found} at {location}")]
    MixedArity {
        expected: usize,
        found: usize,
        location: Location,
    },
    #[error("requested {requested} items but only {available} are available")]
    InsufficientItems { requested: usize, available: usize },
    #[error("unknown dataset format '{0}' (expected mmlu_json, csqa_json or generic_json)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    MmluJson,
    CsqaJson,
    GenericJson,
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mmlu_json" | "mmlu" => Ok(Self::MmluJson),
            "csqa_json" | "csqa" => Ok(Self::CsqaJson),
            "generic_json" | "generic" => Ok(Self::GenericJson),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}

/// One multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub item_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
}

impl McqItem {
    /// Build and validate an item. Option texts are trimmed; nothing else is
    /// normalized.
    pub fn new(
        item_id: Option<String>,
        question: impl Into<String>,
        options: Vec<String>,
        answer_index: usize,
    ) -> Result<Self, String> {
        let question = question.into();
        let options: Vec<String> = options.into_iter().map(|o| o.trim().to_string()).collect();
        let n = options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            return Err(format!(
                "option count {n} outside [{MIN_OPTIONS}, {MAX_OPTIONS}]"
            ));
        }
        if answer_index >= n {
            return Err(format!("answer index {answer_index} out of range for {n} options"));
        }
        let mut seen = HashSet::with_capacity(n);
        for o in &options {
            if !seen.insert(o.as_str()) {
                return Err(format!("duplicate option text '{o}'"));
            }
        }
        let item_id = item_id.unwrap_or_else(|| content_id(&question, &options));
        Ok(Self {
            item_id,
            question,
            options,
            answer_index,
        })
    }

    pub fn option_count(&self) -> usize {
        self.options.len()
    }
}

/// Stable id derived from the question and its options.
pub fn content_id(question: &str, options: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(question.as_bytes());
    for o in options {
        h.update([0x1f]);
        h.update(o.as_bytes());
    }
    let digest = h.finalize();
    hex::encode(&digest[..8])
}

/// A validated collection of items sharing one option count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSet {
    pub items: Vec<McqItem>,
    pub source_name: String,
    pub option_count: usize,
}

impl ItemSet {
    pub fn from_items(source_name: impl Into<String>, items: Vec<McqItem>) -> Result<Self, DatasetError> {
        let first = items.first().ok_or_else(|| DatasetError::Parse {
            location: Location::Line(1),
            message: "no records".into(),
        })?;
        let n = first.option_count();
        let mut ids = HashSet::new();
        for (i, item) in items.iter().enumerate() {
            if item.option_count() != n {
                return Err(DatasetError::MixedArity {
                    expected: n,
                    found: item.option_count(),
                    location: Location::Record(i + 1),
                });
            }
            if !ids.insert(item.item_id.as_str()) {
                return Err(DatasetError::Schema {
                    location: Location::Record(i + 1),
                    message: format!("duplicate item_id '{}'", item.item_id),
                });
            }
        }
        Ok(Self {
            source_name: source_name.into(),
            option_count: n,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Write the set as generic JSON-lines; `load_dataset(.., GenericJson)`
    /// reads it back unchanged.
    pub fn write_generic_jsonl(&self, path: &Path) -> Result<(), DatasetError> {
        let mut out = Vec::new();
        for item in &self.items {
            let rec = serde_json::json!({
                "id": item.item_id,
                "question": item.question,
                "options": item.options,
                "answer": item.answer_index,
            });
            serde_json::to_writer(&mut out, &rec).expect("in-memory json");
            out.push(b'\n');
        }
        std::fs::write(path, out).map_err(|source| io_err(path, source))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Load and validate a dataset file.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<ItemSet, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    let source_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_dataset(&text, format, source_name)
}

/// Parse dataset text (JSON array or JSON-lines).
pub fn parse_dataset(
    text: &str,
    format: DatasetFormat,
    source_name: impl Into<String>,
) -> Result<ItemSet, DatasetError> {
    let records = split_records(text)?;
    let mut items = Vec::with_capacity(records.len());
    for (location, value) in records {
        let item = match format {
            DatasetFormat::GenericJson => generic_record(&value),
            DatasetFormat::MmluJson => mmlu_record(&value),
            DatasetFormat::CsqaJson => csqa_record(&value),
        }
        .map_err(|e| match e {
            RecordError::Shape(message) => DatasetError::Parse { location, message },
            RecordError::Invalid(message) => DatasetError::Schema { location, message },
        })?;
        if let Some(first) = items.first().map(|f: &McqItem| f.option_count()) {
            if item.option_count() != first {
                return Err(DatasetError::MixedArity {
                    expected: first,
                    found: item.option_count(),
                    location,
                });
            }
        }
        items.push(item);
    }
    ItemSet::from_items(source_name, items)
}

fn split_records(text: &str) -> Result<Vec<(Location, Value)>, DatasetError> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Err(DatasetError::Parse {
            location: Location::Line(1),
            message: "empty file".into(),
        });
    }
    if trimmed.starts_with('[') {
        let values: Vec<Value> = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
            location: Location::Line(e.line()),
            message: e.to_string(),
        })?;
        if values.is_empty() {
            return Err(DatasetError::Parse {
                location: Location::Line(1),
                message: "no records".into(),
            });
        }
        return Ok(values
            .into_iter()
            .enumerate()
            .map(|(i, v)| (Location::Record(i + 1), v))
            .collect());
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            location: Location::Line(i + 1),
            message: e.to_string(),
        })?;
        out.push((Location::Line(i + 1), v));
    }
    Ok(out)
}

enum RecordError {
    /// Structurally malformed (missing field, wrong type).
    Shape(String),
    /// Well-formed but violating an item invariant.
    Invalid(String),
}

fn str_field<'a>(v: &'a Value, key: &str) -> Result<&'a str, RecordError> {
    v.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| RecordError::Shape(format!("missing string field '{key}'")))
}

fn string_list(v: &Value, key: &str) -> Result<Vec<String>, RecordError> {
    let arr = v
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| RecordError::Shape(format!("missing array field '{key}'")))?;
    arr.iter()
        .map(|o| match o {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(RecordError::Shape(format!("non-string entry in '{key}'"))),
        })
        .collect()
}

fn optional_id(v: &Value) -> Option<String> {
    match v.get("id").or_else(|| v.get("item_id")) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    }
}

/// Accepts a 0-based integer or a single option letter.
fn answer_index(v: &Value, key: &str) -> Result<usize, RecordError> {
    match v.get(key) {
        Some(Value::Number(n)) => n
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| RecordError::Invalid(format!("'{key}' must be a non-negative integer"))),
        Some(Value::String(s)) => letter_index(s)
            .ok_or_else(|| RecordError::Invalid(format!("'{key}' is not an option letter: '{s}'"))),
        _ => Err(RecordError::Shape(format!("missing field '{key}'"))),
    }
}

fn letter_index(s: &str) -> Option<usize> {
    let s = s.trim();
    let mut chars = s.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_alphabetic() {
        return None;
    }
    Some((c.to_ascii_uppercase() as u8 - b'A') as usize)
}

fn generic_record(v: &Value) -> Result<McqItem, RecordError> {
    let question = str_field(v, "question")?;
    let options = string_list(v, "options")?;
    let answer = answer_index(v, "answer")?;
    McqItem::new(optional_id(v), question, options, answer).map_err(RecordError::Invalid)
}

fn mmlu_record(v: &Value) -> Result<McqItem, RecordError> {
    let question = str_field(v, "question")?;
    let options = string_list(v, "choices")?;
    let answer = answer_index(v, "answer")?;
    McqItem::new(optional_id(v), question, options, answer).map_err(RecordError::Invalid)
}

fn csqa_record(v: &Value) -> Result<McqItem, RecordError> {
    let q = v
        .get("question")
        .ok_or_else(|| RecordError::Shape("missing field 'question'".into()))?;
    let stem = str_field(q, "stem")?;
    let choices = q
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| RecordError::Shape("missing array field 'question.choices'".into()))?;
    let mut labels = Vec::with_capacity(choices.len());
    let mut options = Vec::with_capacity(choices.len());
    for c in choices {
        labels.push(str_field(c, "label")?.to_string());
        options.push(str_field(c, "text")?.to_string());
    }
    let key = str_field(v, "answerKey")?;
    let answer = labels
        .iter()
        .position(|l| l == key)
        .ok_or_else(|| RecordError::Invalid(format!("answerKey '{key}' matches no choice label")))?;
    McqItem::new(optional_id(v), stem, options, answer).map_err(RecordError::Invalid)
}

/// Deterministically choose `k` items, keeping their original relative order.
pub fn sample_fixed(items: &ItemSet, k: usize, seed: u64) -> Result<ItemSet, DatasetError> {
    if k > items.len() {
        return Err(DatasetError::InsufficientItems {
            requested: k,
            available: items.len(),
        });
    }
    let mut rng = rng::stream(seed, rng::label::SAMPLE, &[items.len().into(), k.into()]);
    let mut chosen = rand::seq::index::sample(&mut rng, items.len(), k).into_vec();
    chosen.sort_unstable();
    Ok(ItemSet {
        items: chosen.into_iter().map(|i| items.items[i].clone()).collect(),
        source_name: items.source_name.clone(),
        option_count: items.option_count,
    })
}

/// Sidecar listing the ids chosen by [`sample_fixed`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub source_name: String,
    pub k: usize,
    pub seed: u64,
    pub item_ids: Vec<String>,
}

impl SampleManifest {
    pub fn for_sample(sample: &ItemSet, seed: u64) -> Self {
        Self {
            source_name: sample.source_name.clone(),
            k: sample.len(),
            seed,
            item_ids: sample.items.iter().map(|i| i.item_id.clone()).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let mut f = std::fs::File::create(path).map_err(|s| io_err(path, s))?;
        serde_json::to_writer_pretty(&mut f, self).expect("manifest serializes");
        f.write_all(b"\n").map_err(|s| io_err(path, s))
    }
}
