//! MCQ records, benchmark/corpus containers and their JSONL persistence.
//!
//! One JSON object per line with the field names `id`, `question`, `choices`,
//! `answer` (0-based), `rationale`, `specialization`, `domain`, `topic`,
//! `concept` and `source`. Any other fields are kept verbatim and written back.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::ConceptPath;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema violation at line {line}, field `{field}`: {reason}")]
    SchemaViolation {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("subsample size {n} out of range for collection of {len}")]
    NOutOfRange { n: usize, len: usize },
    #[error("item `{0}` has no concept path")]
    MissingConceptPath(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl DataError {
    fn schema(line: usize, field: &str, reason: impl Into<String>) -> Self {
        DataError::SchemaViolation {
            line,
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Gpt4oTest,
    NclexTest,
    Multimedqa,
    Multinurseqa,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Synthetic => "synthetic",
            Source::Gpt4oTest => "gpt4o_test",
            Source::NclexTest => "nclex_test",
            Source::Multimedqa => "multimedqa",
            Source::Multinurseqa => "multinurseqa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Source::Synthetic,
            Source::Gpt4oTest,
            Source::NclexTest,
            Source::Multimedqa,
            Source::Multinurseqa,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McqItem {
    pub id: String,
    pub question: String,
    pub choices: Vec<String>,
    /// 0-based index into `choices`.
    pub answer: usize,
    pub rationale: String,
    pub path: Option<ConceptPath>,
    pub source: Source,
    /// Fields not part of the schema, preserved in input order.
    pub extra: Map<String, Value>,
}

impl McqItem {
    /// Builds an item whose id is the content digest of question and choices.
    pub fn new(
        question: impl Into<String>,
        choices: Vec<String>,
        answer: usize,
        rationale: impl Into<String>,
        path: Option<ConceptPath>,
        source: Source,
    ) -> Self {
        let question = question.into();
        let id = content_id(&question, &choices);
        McqItem {
            id,
            question,
            choices,
            answer,
            rationale: rationale.into(),
            path,
            source,
            extra: Map::new(),
        }
    }

    /// Checks the record invariants; returns the first offending field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.id.trim().is_empty() {
            return Err(("id", "empty id".into()));
        }
        if self.question.trim().is_empty() {
            return Err(("question", "empty question".into()));
        }
        if self.choices.len() < 2 {
            return Err(("choices", format!("{} choices, need at least 2", self.choices.len())));
        }
        if let Some(i) = self.choices.iter().position(|c| c.trim().is_empty()) {
            return Err(("choices", format!("choice {i} is empty")));
        }
        if self.answer >= self.choices.len() {
            return Err((
                "answer",
                format!("index {} out of range for {} choices", self.answer, self.choices.len()),
            ));
        }
        if let Some(path) = &self.path {
            if let Some(level) = path.first_blank_level() {
                return Err((level_field(level), "empty taxonomy field".into()));
            }
        }
        Ok(())
    }

    pub fn answer_letter(&self) -> char {
        index_letter(self.answer)
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::String(self.id.clone()));
        obj.insert("question".into(), Value::String(self.question.clone()));
        obj.insert(
            "choices".into(),
            Value::Array(self.choices.iter().cloned().map(Value::String).collect()),
        );
        obj.insert("answer".into(), Value::from(self.answer));
        obj.insert("rationale".into(), Value::String(self.rationale.clone()));
        if let Some(p) = &self.path {
            obj.insert("specialization".into(), Value::String(p.specialization.clone()));
            obj.insert("domain".into(), Value::String(p.domain.clone()));
            obj.insert("topic".into(), Value::String(p.topic.clone()));
            obj.insert("concept".into(), Value::String(p.concept.clone()));
        }
        obj.insert("source".into(), Value::String(self.source.as_str().into()));
        for (k, v) in &self.extra {
            obj.insert(k.clone(), v.clone());
        }
        Value::Object(obj)
    }

    /// Parses one record. `line` is only used for error reporting.
    pub fn from_json(
        value: Value,
        line: usize,
        fallback_source: Option<Source>,
    ) -> Result<Self, DataError> {
        let Value::Object(mut obj) = value else {
            return Err(DataError::schema(line, "<record>", "not a JSON object"));
        };

        let question = take_string(&mut obj, "question", line)?
            .ok_or_else(|| DataError::schema(line, "question", "missing"))?;
        if question.trim().is_empty() {
            return Err(DataError::schema(line, "question", "empty"));
        }

        let choices = match obj.shift_remove("choices") {
            None => return Err(DataError::schema(line, "choices", "missing")),
            Some(Value::Array(arr)) => arr
                .into_iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::String(s) if !s.trim().is_empty() => Ok(s),
                    _ => Err(DataError::schema(
                        line,
                        "choices",
                        format!("choice {i} is not a non-empty string"),
                    )),
                })
                .collect::<Result<Vec<_>, _>>()?,
            Some(_) => return Err(DataError::schema(line, "choices", "not an array")),
        };
        if choices.len() < 2 {
            return Err(DataError::schema(
                line,
                "choices",
                format!("{} choices, need at least 2", choices.len()),
            ));
        }

        let answer = match obj.shift_remove("answer") {
            None => return Err(DataError::schema(line, "answer", "missing")),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| DataError::schema(line, "answer", "not a non-negative integer"))?
                as usize,
        };
        if answer >= choices.len() {
            return Err(DataError::schema(
                line,
                "answer",
                format!("index {answer} out of range for {} choices", choices.len()),
            ));
        }

        let rationale = take_string(&mut obj, "rationale", line)?.unwrap_or_default();

        let levels = ["specialization", "domain", "topic", "concept"]
            .map(|field| take_string(&mut obj, field, line));
        let mut values = Vec::with_capacity(4);
        for (field, level) in ["specialization", "domain", "topic", "concept"]
            .into_iter()
            .zip(levels)
        {
            values.push((field, level?));
        }
        let path = if values.iter().all(|(_, v)| v.is_none()) {
            None
        } else {
            for (field, v) in &values {
                match v {
                    None => return Err(DataError::schema(line, field, "missing")),
                    Some(s) if s.trim().is_empty() => {
                        return Err(DataError::schema(line, field, "empty"))
                    }
                    _ => {}
                }
            }
            let [s, d, t, c] = [0, 1, 2, 3].map(|i| values[i].1.clone().unwrap_or_default());
            Some(ConceptPath::new(s, d, t, c).map_err(|e| {
                DataError::schema(line, "specialization", e.to_string())
            })?)
        };

        let source = match take_string(&mut obj, "source", line)? {
            Some(s) => Source::parse(&s)
                .ok_or_else(|| DataError::schema(line, "source", format!("unknown source `{s}`")))?,
            None => fallback_source.ok_or_else(|| DataError::schema(line, "source", "missing"))?,
        };

        let id = match take_string(&mut obj, "id", line)? {
            Some(id) if id.trim().is_empty() => {
                return Err(DataError::schema(line, "id", "empty"))
            }
            Some(id) => id,
            None => content_id(&question, &choices),
        };

        Ok(McqItem {
            id,
            question,
            choices,
            answer,
            rationale,
            path,
            source,
            extra: obj,
        })
    }
}

fn level_field(level: &str) -> &'static str {
    match level {
        "Specialization" => "specialization",
        "Domain" => "domain",
        "Topic" => "topic",
        _ => "concept",
    }
}

fn take_string(
    obj: &mut Map<String, Value>,
    field: &str,
    line: usize,
) -> Result<Option<String>, DataError> {
    match obj.shift_remove(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(DataError::schema(line, field, "not a string")),
    }
}

/// Content digest of (question, choices); the default id.
pub fn content_id(question: &str, choices: &[String]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(question.as_bytes());
    for c in choices {
        hasher.update([0x1e]);
        hasher.update(c.as_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

/// `0 → 'A'`, `1 → 'B'`, ...
pub fn index_letter(index: usize) -> char {
    (b'A' + (index % 26) as u8) as char
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub name: String,
    pub items: Vec<McqItem>,
}

impl Benchmark {
    pub fn new(name: impl Into<String>, items: Vec<McqItem>) -> Result<Self, DataError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(DataError::schema(0, "name", "benchmark name is empty"));
        }
        check_items(&items)?;
        Ok(Benchmark { name, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn max_choices(&self) -> usize {
        self.items.iter().map(|i| i.choices.len()).max().unwrap_or(0)
    }
}

/// A training collection in which every item carries its concept path.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    items: Vec<McqItem>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, items: Vec<McqItem>) -> Result<Self, DataError> {
        if let Some(item) = items.iter().find(|i| i.path.is_none()) {
            return Err(DataError::MissingConceptPath(item.id.clone()));
        }
        let bench = Benchmark::new(name, items)?;
        Ok(Corpus {
            name: bench.name,
            items: bench.items,
        })
    }

    pub fn items(&self) -> &[McqItem] {
        &self.items
    }

    pub fn into_items(self) -> Vec<McqItem> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn as_benchmark(&self) -> Benchmark {
        Benchmark {
            name: self.name.clone(),
            items: self.items.clone(),
        }
    }
}

impl TryFrom<Benchmark> for Corpus {
    type Error = DataError;

    fn try_from(b: Benchmark) -> Result<Self, Self::Error> {
        Corpus::new(b.name, b.items)
    }
}

fn check_items(items: &[McqItem]) -> Result<(), DataError> {
    let mut ids = HashSet::new();
    for (i, item) in items.iter().enumerate() {
        if let Err((field, reason)) = item.validate() {
            return Err(DataError::schema(i + 1, field, reason));
        }
        if !ids.insert(item.id.as_str()) {
            return Err(DataError::schema(i + 1, "id", format!("duplicate id `{}`", item.id)));
        }
    }
    Ok(())
}

/// Reads MCQ records, requiring a `source` field on every line.
pub fn read_items(path: impl AsRef<Path>) -> Result<Vec<McqItem>, DataError> {
    read_items_with_source(path, None)
}

/// Reads MCQ records; lines without `source` get `fallback`.
pub fn read_items_with_source(
    path: impl AsRef<Path>,
    fallback: Option<Source>,
) -> Result<Vec<McqItem>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| DataError::schema(line_no, "<record>", e.to_string()))?;
        let item = McqItem::from_json(value, line_no, fallback)?;
        if !ids.insert(item.id.clone()) {
            return Err(DataError::schema(line_no, "id", format!("duplicate id `{}`", item.id)));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn read_benchmark(path: impl AsRef<Path>, fallback: Option<Source>) -> Result<Benchmark, DataError> {
    let path = path.as_ref();
    let items = read_items_with_source(path, fallback)?;
    Benchmark::new(collection_name(path), items)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let path = path.as_ref();
    let items = read_items_with_source(path, Some(Source::Synthetic))?;
    Corpus::new(collection_name(path), items)
}

fn collection_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unnamed".into())
}

pub fn write_items<'a>(
    items: impl IntoIterator<Item = &'a McqItem>,
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item.to_json()).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_benchmark(bench: &Benchmark, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_items(&bench.items, path)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_items(corpus.items(), path)
}

/// Writes any serializable records one per line.
pub fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| DataError::schema(i + 1, "<record>", e.to_string()))?,
        );
    }
    Ok(out)
}

/// Uniform sample of `n` items without replacement, kept in original order.
pub fn subsample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, DataError> {
    let len = corpus.len();
    if n > len {
        return Err(DataError::NOutOfRange { n, len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, len, n).into_vec();
    picked.sort_unstable();
    Ok(Corpus {
        name: corpus.name.clone(),
        items: picked.into_iter().map(|i| corpus.items[i].clone()).collect(),
    })
}
