//! Synthetic MCQ generation, the one-per-concept benchmark, nursing-subset
//! mining, and reasoning distillation with agreement filtering.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::{index_letter, Benchmark, DataError, McqItem, Source};
use crate::evalharness::extract_answer_with_choices;
use crate::llmclient::{CallError, Client, GENERATION_TEMPERATURE};
use crate::taxonomy::{ConceptPath, Taxonomy};
use crate::template::{builtin, lettered_choices, PromptTemplate, TemplateError, Vars};

pub const DEFAULT_SCHEMA_RETRIES: u32 = 3;
pub const CHOICES_PER_ITEM: usize = 4;
pub const BENCHMARK_NAME: &str = "GPT4o-Test";
pub const NURSING_SUBSET_NAME: &str = "MultiNurseQA";

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Call(#[from] CallError),
    #[error("no well-formed MCQ for `{concept}` slot {slot} after {attempts} attempt(s): {last}")]
    SchemaRetriesExhausted {
        concept: String,
        slot: usize,
        attempts: u32,
        last: String,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("nothing to process: {0}")]
    EmptyInput(&'static str),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

impl GeneratorError {
    pub fn category(&self) -> &'static str {
        match self {
            GeneratorError::Call(e) => e.error.category(),
            GeneratorError::SchemaRetriesExhausted { .. } => "schema_retries_exhausted",
            GeneratorError::Template(_) => "template",
            GeneratorError::EmptyInput(_) => "empty_input",
            GeneratorError::Checkpoint { .. } => "checkpoint",
            GeneratorError::Data(_) => "data",
        }
    }
}

/// The fields of one MCQ as read from a model reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMcq {
    pub question: String,
    pub choices: Vec<String>,
    pub answer: usize,
    pub rationale: String,
}

const TAGS: [&str; 7] = ["QUESTION", "A", "B", "C", "D", "ANSWER", "RATIONALE"];

fn line_tag(line: &str) -> Option<(&str, &str)> {
    let (head, rest) = line.split_once(':')?;
    let head = head.trim().trim_matches('*').trim();
    let upper = head.to_ascii_uppercase();
    let known = TAGS.contains(&upper.as_str())
        // A lone capital letter is an option tag even past D, so extra options are caught.
        || (head.len() == 1 && head.chars().all(|c| c.is_ascii_uppercase()));
    known.then_some((head, rest.trim_start_matches('*').trim()))
}

/// Parses the tagged reply layout of the generation template.
///
/// A tag opens a section that runs until the next tag line, so question and
/// rationale may span several lines. Exactly the options `A` to `D` must be
/// present, in order.
pub fn parse_mcq_reply(reply: &str) -> Result<ParsedMcq, String> {
    let mut sections: Vec<(String, String)> = Vec::new();
    for line in reply.lines() {
        match line_tag(line) {
            Some((tag, rest)) => sections.push((tag.to_ascii_uppercase(), rest.to_string())),
            None => match sections.last_mut() {
                Some((_, body)) => {
                    if !line.trim().is_empty() {
                        if !body.is_empty() {
                            body.push('\n');
                        }
                        body.push_str(line.trim());
                    }
                }
                None if line.trim().is_empty() => {}
                None => return Err("text before the QUESTION tag".into()),
            },
        }
    }

    let mut question = None;
    let mut answer_letter = None;
    let mut rationale = None;
    let mut options: Vec<(char, String)> = Vec::new();
    for (tag, body) in sections {
        let slot = match tag.as_str() {
            "QUESTION" => &mut question,
            "ANSWER" => &mut answer_letter,
            "RATIONALE" => &mut rationale,
            letter => {
                options.push((letter.chars().next().unwrap(), body));
                continue;
            }
        };
        if slot.replace(body).is_some() {
            return Err(format!("{tag} appears twice"));
        }
    }

    let question = question.filter(|q| !q.is_empty()).ok_or("missing question")?;
    let expected: Vec<char> = (0..CHOICES_PER_ITEM).map(index_letter).collect();
    let found: Vec<char> = options.iter().map(|(c, _)| *c).collect();
    if found != expected {
        return Err(format!(
            "expected options {:?}, found {:?}",
            expected.iter().collect::<String>(),
            found.iter().collect::<String>()
        ));
    }
    if options.iter().any(|(_, text)| text.is_empty()) {
        return Err("empty option".into());
    }
    let letter = answer_letter.ok_or("missing answer")?;
    let letter = letter.trim_matches(|c: char| c == '(' || c == ')' || c == '.' || c.is_whitespace());
    let answer = match letter.as_bytes() {
        [c] if c.to_ascii_uppercase().is_ascii_uppercase() => (c.to_ascii_uppercase() - b'A') as usize,
        _ => return Err(format!("answer `{letter}` is not a single letter")),
    };
    if answer >= CHOICES_PER_ITEM {
        return Err(format!("answer `{letter}` is out of range"));
    }
    let rationale = rationale.filter(|r| !r.is_empty()).ok_or("missing rationale")?;

    Ok(ParsedMcq {
        question,
        choices: options.into_iter().map(|(_, t)| t).collect(),
        answer,
        rationale,
    })
}

/// Deterministic id for a generated item, unique per concept and slot.
pub fn generated_id(path: &ConceptPath, slot: usize, question: &str) -> String {
    let mut h = Sha256::new();
    h.update(path.digest().as_bytes());
    h.update(slot.to_le_bytes());
    h.update(question.as_bytes());
    hex::encode(&h.finalize()[..8])
}

pub fn render_generation_prompt(template: &PromptTemplate, path: &ConceptPath) -> Result<String, TemplateError> {
    template.render(
        &Vars::new()
            .set("specialization", path.specialization.clone())
            .set("domain", path.domain.clone())
            .set("topic", path.topic.clone())
            .set("concept", path.concept.clone()),
    )
}

#[derive(Debug, Clone)]
pub struct GenerationConfig {
    pub template: PromptTemplate,
    /// Extra attempts per slot after a malformed reply.
    pub schema_retries: u32,
    pub temperature: f64,
    pub workers: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            template: builtin::generation(),
            schema_retries: DEFAULT_SCHEMA_RETRIES,
            temperature: GENERATION_TEMPERATURE,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub requested: usize,
    pub emitted: usize,
    /// Replies discarded for violating the schema.
    pub malformed: usize,
    pub calls: usize,
}

impl GenerationStats {
    fn absorb(&mut self, other: GenerationStats) {
        self.requested += other.requested;
        self.emitted += other.emitted;
        self.malformed += other.malformed;
        self.calls += other.calls;
    }
}

fn generate_slot(
    client: &Client,
    prompt: &str,
    path: &ConceptPath,
    slot: usize,
    source: Source,
    config: &GenerationConfig,
    stats: &mut GenerationStats,
) -> Result<McqItem, GeneratorError> {
    let attempts = config.schema_retries + 1;
    let mut last = String::new();
    for _ in 0..attempts {
        let reply = client.ask(None, prompt, config.temperature)?;
        stats.calls += 1;
        let parsed = parse_mcq_reply(&reply.response_text).and_then(|p| {
            let mut item = McqItem::new(p.question, p.choices, p.answer, p.rationale, Some(path.clone()), source);
            item.id = generated_id(path, slot, &item.question);
            item.validate().map_err(|(field, reason)| format!("{field}: {reason}"))?;
            Ok(item)
        });
        match parsed {
            Ok(item) => {
                stats.emitted += 1;
                return Ok(item);
            }
            Err(reason) => {
                stats.malformed += 1;
                last = reason;
            }
        }
    }
    Err(GeneratorError::SchemaRetriesExhausted {
        concept: path.concept.clone(),
        slot,
        attempts,
        last,
    })
}

/// Asks for `n` MCQs on one concept. Slots are filled one after another.
pub fn generate_mcqs(
    client: &Client,
    path: &ConceptPath,
    n: usize,
    config: &GenerationConfig,
) -> Result<(Vec<McqItem>, GenerationStats), GeneratorError> {
    if n == 0 {
        return Err(GeneratorError::EmptyInput("n must be at least 1"));
    }
    let prompt = render_generation_prompt(&config.template, path)?;
    let mut stats = GenerationStats {
        requested: n,
        ..Default::default()
    };
    let items = (0..n)
        .map(|slot| generate_slot(client, &prompt, path, slot, Source::Synthetic, config, &mut stats))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((items, stats))
}

/// `n` MCQs for every concept of `taxonomy`, in taxonomy order.
pub fn generate_corpus(
    client: &Client,
    taxonomy: &Taxonomy,
    n: usize,
    config: &GenerationConfig,
) -> Result<(Vec<McqItem>, GenerationStats), GeneratorError> {
    let per_path = crate::pool::with_workers(config.workers, || {
        taxonomy
            .paths()
            .par_iter()
            .map(|p| generate_mcqs(client, p, n, config))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut stats = GenerationStats::default();
    let mut items = Vec::new();
    for (chunk, s) in per_path {
        items.extend(chunk);
        stats.absorb(s);
    }
    Ok((items, stats))
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointRecord {
    key: String,
    item: Value,
}

/// Append-only JSONL of finished benchmark slots, keyed by concept digest.
#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    done: HashMap<String, McqItem>,
    writer: Mutex<File>,
}

impl Checkpoint {
    /// Opens (or creates) a checkpoint and replays its records. A torn final
    /// line from an interrupted write is cut off so later appends start clean.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GeneratorError> {
        let path = path.as_ref().to_path_buf();
        let err = |reason: String| GeneratorError::Checkpoint {
            path: path.clone(),
            reason,
        };
        let mut done = HashMap::new();
        let mut good_len = None;
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
            let mut offset = 0;
            let lines: Vec<&str> = text.split_inclusive('\n').collect();
            for (i, raw) in lines.iter().enumerate() {
                let line = raw.trim();
                let start = offset;
                offset += raw.len();
                if line.is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<CheckpointRecord>(line);
                if i + 1 == lines.len() && (parsed.is_err() || !raw.ends_with('\n')) {
                    good_len = Some(start as u64);
                    break;
                }
                let record = parsed.map_err(|e| err(format!("line {}: {e}", i + 1)))?;
                let item = McqItem::from_json(record.item, i + 1, Some(Source::Gpt4oTest))
                    .map_err(|e| err(e.to_string()))?;
                done.insert(record.key, item);
            }
        }
        if let Some(len) = good_len {
            OpenOptions::new()
                .write(true)
                .open(&path)
                .and_then(|f| f.set_len(len))
                .map_err(|e| err(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| err(e.to_string()))?;
        Ok(Checkpoint {
            path,
            done,
            writer: Mutex::new(file),
        })
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn get(&self, path: &ConceptPath) -> Option<&McqItem> {
        self.done.get(&path.digest())
    }

    fn append(&self, path: &ConceptPath, item: &McqItem) -> Result<(), GeneratorError> {
        let record = CheckpointRecord {
            key: path.digest(),
            item: item.to_json(),
        };
        let mut line = serde_json::to_string(&record).expect("json");
        line.push('\n');
        let mut w = self.writer.lock().expect("checkpoint writer");
        w.write_all(line.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| GeneratorError::Checkpoint {
                path: self.path.clone(),
                reason: e.to_string(),
            })
    }
}

/// One MCQ per concept path, in taxonomy order. With a checkpoint, finished
/// concepts are reused and new ones are appended as they complete.
pub fn generate_benchmark(
    client: &Client,
    taxonomy: &Taxonomy,
    config: &GenerationConfig,
    checkpoint: Option<&Checkpoint>,
) -> Result<(Benchmark, GenerationStats), GeneratorError> {
    if taxonomy.is_empty() {
        return Err(GeneratorError::EmptyInput("taxonomy is empty"));
    }
    let results = crate::pool::with_workers(config.workers, || {
        taxonomy
            .paths()
            .par_iter()
            .map(|path| {
                let mut stats = GenerationStats::default();
                if let Some(item) = checkpoint.and_then(|c| c.get(path)) {
                    return Ok((item.clone(), stats));
                }
                stats.requested = 1;
                let prompt = render_generation_prompt(&config.template, path)?;
                let item = generate_slot(client, &prompt, path, 0, Source::Gpt4oTest, config, &mut stats)?;
                if let Some(c) = checkpoint {
                    c.append(path, &item)?;
                }
                Ok((item, stats))
            })
            .collect::<Result<Vec<_>, GeneratorError>>()
    })?;
    let mut stats = GenerationStats::default();
    let mut items = Vec::with_capacity(results.len());
    for (item, s) in results {
        items.push(item);
        stats.absorb(s);
    }
    Ok((Benchmark::new(BENCHMARK_NAME, items)?, stats))
}

fn choice_vars(item: &McqItem) -> Vars {
    Vars::new()
        .set("question", item.question.clone())
        .set("choices", lettered_choices(&item.choices))
}

/// Reads a yes/no label from the first standalone word of a reply.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let first = reply.split(|c: char| !c.is_alphanumeric()).find(|t| !t.is_empty())?;
    match first.to_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningStats {
    pub total: usize,
    pub kept: usize,
    /// Items whose label could not be read even after one retry; treated as "no".
    pub unparseable: usize,
}

#[derive(Debug, Clone)]
pub struct MiningConfig {
    pub template: PromptTemplate,
    pub name: String,
    pub temperature: f64,
    pub workers: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            template: builtin::nursing_classifier(),
            name: NURSING_SUBSET_NAME.to_string(),
            temperature: crate::llmclient::EVAL_TEMPERATURE,
            workers: 1,
        }
    }
}

/// Keeps the items the classifier labels nursing-relevant, in input order.
pub fn mine_nursing_subset(
    client: &Client,
    items: &Benchmark,
    config: &MiningConfig,
) -> Result<(Benchmark, MiningStats), GeneratorError> {
    if items.is_empty() {
        return Err(GeneratorError::EmptyInput("benchmark is empty"));
    }
    let labels = crate::pool::with_workers(config.workers, || {
        items
            .items
            .par_iter()
            .map(|item| -> Result<Option<bool>, GeneratorError> {
                let prompt = config.template.render(&choice_vars(item))?;
                for _ in 0..2 {
                    let reply = client.ask(None, &prompt, config.temperature)?;
                    if let Some(label) = parse_yes_no(&reply.response_text) {
                        return Ok(Some(label));
                    }
                }
                Ok(None)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let stats = MiningStats {
        total: items.len(),
        kept: labels.iter().filter(|l| **l == Some(true)).count(),
        unparseable: labels.iter().filter(|l| l.is_none()).count(),
    };
    let kept = items
        .items
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == Some(true))
        .map(|(i, _)| i.clone())
        .collect();
    Ok((Benchmark::new(config.name.clone(), kept)?, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningSample {
    #[serde(with = "item_json")]
    pub item: McqItem,
    pub trace: String,
    pub distilled_answer: Option<usize>,
    pub agrees: bool,
}

mod item_json {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::Value;

    use crate::datamodel::McqItem;

    pub fn serialize<S: Serializer>(item: &McqItem, s: S) -> Result<S::Ok, S::Error> {
        item.to_json().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<McqItem, D::Error> {
        let v = Value::deserialize(d)?;
        McqItem::from_json(v, 0, None).map_err(serde::de::Error::custom)
    }
}

impl ReasoningSample {
    pub fn new(item: McqItem, trace: String) -> Self {
        let distilled_answer = extract_answer_with_choices(&trace, &item.choices);
        let agrees = distilled_answer == Some(item.answer);
        ReasoningSample {
            item,
            trace,
            distilled_answer,
            agrees,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub total: usize,
    pub kept: usize,
}

impl RetentionStats {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.kept as f64 / self.total as f64
        }
    }
}

impl fmt::Display for RetentionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} kept ({:.2}%)", self.kept, self.total, self.rate() * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub kept: Vec<ReasoningSample>,
    pub rejected: Vec<ReasoningSample>,
    pub stats: RetentionStats,
}

#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub template: PromptTemplate,
    pub temperature: f64,
    pub workers: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            template: builtin::reasoning(),
            temperature: GENERATION_TEMPERATURE,
            workers: 1,
        }
    }
}

/// Collects a reasoning trace per item and keeps those whose final answer
/// matches the reference.
pub fn distill_reasoning(
    client: &Client,
    items: &[McqItem],
    config: &DistillConfig,
) -> Result<DistillOutcome, GeneratorError> {
    let samples = crate::pool::with_workers(config.workers, || {
        items
            .par_iter()
            .map(|item| -> Result<ReasoningSample, GeneratorError> {
                let prompt = config.template.render(&choice_vars(item))?;
                let reply = client.ask(None, &prompt, config.temperature)?;
                Ok(ReasoningSample::new(item.clone(), reply.response_text))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let (kept, rejected): (Vec<_>, Vec<_>) = samples.into_iter().partition(|s| s.agrees);
    let stats = RetentionStats {
        total: items.len(),
        kept: kept.len(),
    };
    Ok(DistillOutcome { kept, rejected, stats })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::llmclient::{FailureKind, Matcher, MockBackend, MockScript, Response};

    const WELL_FORMED: &str = "QUESTION: Which type of lochia is expected on postpartum day 3?\nA: Lochia rubra\nB: Lochia serosa\nC: Lochia alba\nD: Lochia sanguineous\nANSWER: A\nRATIONALE: Rubra lasts for the first three to four days.";

    const THREE_CHOICES: &str = "QUESTION: q?\nA: x\nB: y\nC: z\nANSWER: A\nRATIONALE: r";

    fn lochia() -> ConceptPath {
        ConceptPath::new(
            "Maternal-Newborn Nursing",
            "Postpartum Care",
            "Physiological Changes",
            "lochia types",
        )
        .unwrap()
    }

    fn mock(script: MockScript) -> (Arc<MockBackend>, Client) {
        let backend = Arc::new(MockBackend::new("mock", script));
        (backend.clone(), Client::mock(backend))
    }

    #[test]
    fn parses_well_formed_reply() {
        let p = parse_mcq_reply(WELL_FORMED).unwrap();
        assert_eq!(p.choices.len(), 4);
        assert_eq!(p.answer, 0);
        assert_eq!(p.choices[1], "Lochia serosa");
        assert!(p.rationale.starts_with("Rubra"));
    }

    #[test]
    fn multi_line_sections_and_bold_tags() {
        let reply = "**QUESTION:** A client asks\nabout discharge.\nA: a\nB: b\nC: c\nD: d\nANSWER: (C)\nRATIONALE: first\nsecond";
        let p = parse_mcq_reply(reply).unwrap();
        assert_eq!(p.question, "A client asks\nabout discharge.");
        assert_eq!(p.answer, 2);
        assert_eq!(p.rationale, "first\nsecond");
    }

    #[test]
    fn rejects_schema_violations() {
        assert!(parse_mcq_reply(THREE_CHOICES).is_err());
        let five = WELL_FORMED.replace("ANSWER", "E: extra\nANSWER");
        assert!(parse_mcq_reply(&five).is_err());
        assert!(parse_mcq_reply(&WELL_FORMED.replace("ANSWER: A", "ANSWER: E")).is_err());
        assert!(parse_mcq_reply(&WELL_FORMED.replace("ANSWER: A", "ANSWER: AB")).is_err());
        let no_rationale = WELL_FORMED.split("\nRATIONALE").next().unwrap();
        assert!(parse_mcq_reply(no_rationale).is_err());
        assert!(parse_mcq_reply("Sure! Here is one.\nQUESTION: q").is_err());
        assert!(parse_mcq_reply("").is_err());
    }

    #[test]
    fn one_well_formed_item() {
        let (_, client) = mock(MockScript::new().default_reply(Response::text(WELL_FORMED)));
        let (items, stats) = generate_mcqs(&client, &lochia(), 1, &GenerationConfig::default()).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].answer, 0);
        assert!(!items[0].rationale.is_empty());
        assert_eq!(items[0].path.as_ref(), Some(&lochia()));
        assert_eq!(items[0].source, Source::Synthetic);
        assert_eq!(stats, GenerationStats { requested: 1, emitted: 1, malformed: 0, calls: 1 });
    }

    #[test]
    fn prompt_substitutes_all_levels() {
        let prompt = render_generation_prompt(&builtin::generation(), &lochia()).unwrap();
        for level in lochia().levels() {
            assert!(prompt.contains(level), "{level}");
        }
        assert!(!prompt.contains('{'));
    }

    #[test]
    fn malformed_reply_is_retried() {
        let script = MockScript::new().default_reply(Response::Sequence(vec![
            Response::text(THREE_CHOICES),
            Response::text(WELL_FORMED),
        ]));
        let (backend, client) = mock(script);
        let (items, stats) = generate_mcqs(&client, &lochia(), 1, &GenerationConfig::default()).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!((stats.malformed, stats.calls), (1, 2));
        assert_eq!(backend.call_count(), 2);
    }

    #[test]
    fn zero_retry_budget_exhausts() {
        let (_, client) = mock(MockScript::new().default_reply(Response::text(THREE_CHOICES)));
        let config = GenerationConfig {
            schema_retries: 0,
            ..Default::default()
        };
        let err = generate_mcqs(&client, &lochia(), 1, &config).unwrap_err();
        assert!(matches!(err, GeneratorError::SchemaRetriesExhausted { attempts: 1, .. }));
    }

    #[test]
    fn slots_get_distinct_ids() {
        let (_, client) = mock(MockScript::new().default_reply(Response::text(WELL_FORMED)));
        let (items, _) = generate_mcqs(&client, &lochia(), 3, &GenerationConfig::default()).unwrap();
        assert_eq!(items.len(), 3);
        assert_ne!(items[0].id, items[1].id);
        assert_ne!(items[1].id, items[2].id);
    }

    #[test]
    fn backend_errors_propagate() {
        let (_, client) = mock(MockScript::new().default_reply(Response::Fail(FailureKind::Auth)));
        let err = generate_mcqs(&client, &lochia(), 1, &GenerationConfig::default()).unwrap_err();
        assert_eq!(err.category(), "auth");
    }

    fn toy_taxonomy(n: usize) -> Taxonomy {
        Taxonomy::from_paths(
            (0..n)
                .map(|i| ConceptPath::new("S", "D", "T", format!("concept {i}")).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn per_concept_script() -> MockScript {
        MockScript::new().default_reply(per_concept_reply())
    }

    fn per_concept_reply() -> Response {
        Response::dynamic(|prompt| {
            let concept = prompt
                .lines()
                .find_map(|l| l.strip_prefix("Concept: "))
                .unwrap_or("?")
                .to_string();
            Response::text(WELL_FORMED.replace("postpartum day 3", &concept))
        })
    }

    #[test]
    fn benchmark_is_one_per_concept() {
        let (_, client) = mock(per_concept_script());
        let (bench, _) = generate_benchmark(&client, &toy_taxonomy(3), &GenerationConfig::default(), None).unwrap();
        assert_eq!(bench.len(), 3);
        assert_eq!(bench.name, BENCHMARK_NAME);
        assert!(bench.items.iter().all(|i| i.source == Source::Gpt4oTest));
        assert!(bench.items[2].question.contains("concept 2"));
    }

    #[test]
    fn resume_regenerates_only_missing() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt_path = dir.path().join("ckpt.jsonl");
        let tax = toy_taxonomy(3);

        // The first run dies on the third concept.
        let failing = MockScript::new()
            .when(Matcher::contains("concept 2"), Response::Fail(FailureKind::Auth))
            .default_reply(per_concept_reply());
        let (_, client) = mock(failing);
        let ckpt = Checkpoint::open(&ckpt_path).unwrap();
        assert!(generate_benchmark(&client, &tax, &GenerationConfig::default(), Some(&ckpt)).is_err());
        drop(ckpt);

        let ckpt = Checkpoint::open(&ckpt_path).unwrap();
        assert_eq!(ckpt.len(), 2);
        let (backend, client) = mock(per_concept_script());
        let (resumed, _) = generate_benchmark(&client, &tax, &GenerationConfig::default(), Some(&ckpt)).unwrap();
        assert_eq!(backend.call_count(), 1);
        assert!(backend.calls()[0].contains("concept 2"));

        let (_, client) = mock(per_concept_script());
        let (fresh, _) = generate_benchmark(&client, &tax, &GenerationConfig::default(), None).unwrap();
        assert_eq!(resumed, fresh);
    }

    #[test]
    fn torn_checkpoint_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt_path = dir.path().join("ckpt.jsonl");
        let (_, client) = mock(per_concept_script());
        let ckpt = Checkpoint::open(&ckpt_path).unwrap();
        generate_benchmark(&client, &toy_taxonomy(2), &GenerationConfig::default(), Some(&ckpt)).unwrap();
        drop(ckpt);
        let mut f = OpenOptions::new().append(true).open(&ckpt_path).unwrap();
        f.write_all(b"{\"key\":\"abc\",\"ite").unwrap();
        assert_eq!(Checkpoint::open(&ckpt_path).unwrap().len(), 2);
    }

    fn three_items() -> Benchmark {
        let items = ["first", "second", "third"]
            .iter()
            .map(|q| {
                McqItem::new(
                    format!("The {q} question?"),
                    ["a", "b", "c", "d"].map(String::from).to_vec(),
                    1,
                    "",
                    None,
                    Source::Multimedqa,
                )
            })
            .collect();
        Benchmark::new("MultiMedQA", items).unwrap()
    }

    #[test]
    fn mining_keeps_yes_items_in_order() {
        let script = MockScript::new()
            .when(Matcher::contains("first"), Response::text("Yes."))
            .when(Matcher::contains("second"), Response::text("no"))
            .when(Matcher::contains("third"), Response::text("YES, this is nursing"));
        let (_, client) = mock(script);
        let input = three_items();
        let (subset, stats) = mine_nursing_subset(&client, &input, &MiningConfig::default()).unwrap();
        assert_eq!(subset.items, vec![input.items[0].clone(), input.items[2].clone()]);
        assert_eq!(stats, MiningStats { total: 3, kept: 2, unparseable: 0 });
    }

    #[test]
    fn unparseable_label_retried_once_then_no() {
        let script = MockScript::new()
            .when(
                Matcher::contains("first"),
                Response::Sequence(vec![Response::text("maybe"), Response::text("yes")]),
            )
            .default_reply(Response::text("I cannot tell"));
        let (backend, client) = mock(script);
        let (subset, stats) = mine_nursing_subset(&client, &three_items(), &MiningConfig::default()).unwrap();
        assert_eq!(subset.len(), 1);
        assert_eq!(stats.unparseable, 2);
        assert_eq!(backend.call_count(), 6);
    }

    #[test]
    fn yes_no_token() {
        assert_eq!(parse_yes_no("  **No** because"), Some(false));
        assert_eq!(parse_yes_no("yesterday"), None);
        assert_eq!(parse_yes_no(""), None);
    }

    #[test]
    fn distillation_filters_disagreement() {
        let items = three_items().items;
        let script = MockScript::new()
            .when(Matcher::contains("second"), Response::text("Thinking...\nAnswer: (C)"))
            .when(Matcher::contains("third"), Response::text("no idea"))
            .default_reply(Response::text("Step by step.\nAnswer: (B)"));
        let (_, client) = mock(script);
        let out = distill_reasoning(&client, &items, &DistillConfig::default()).unwrap();
        assert_eq!(out.stats, RetentionStats { total: 3, kept: 1 });
        assert_eq!(out.kept[0].item, items[0]);
        assert_eq!(out.rejected[0].distilled_answer, Some(2));
        assert_eq!(out.rejected[1].distilled_answer, None);
        assert!(!out.rejected[1].agrees);
    }

    #[test]
    fn retention_display() {
        let s = RetentionStats { total: 5000, kept: 4683 };
        assert_eq!(s.to_string(), "4683/5000 kept (93.66%)");
    }

    #[test]
    fn sample_round_trips_through_json() {
        let s = ReasoningSample::new(three_items().items[0].clone(), "Answer: B".into());
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ReasoningSample>(&text).unwrap(), s);
    }
}
