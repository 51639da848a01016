//! Benchmark evaluation: one call per item, answer extraction, accuracy.

mod extract;
mod report;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Benchmark, McqItem};
use crate::llmclient::{Client, EVAL_TEMPERATURE};
use crate::template::{builtin, lettered_choices, PromptTemplate, TemplateError, Vars};

pub use extract::{extract_answer, extract_answer_with_choices};
pub use report::{
    format_report, percent, Layout, ReportError, ReportRow, ReportTable, TableFormat, AVG_COLUMN,
    MULTIMEDQA_CATEGORIES,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benchmark `{0}` is empty")]
    EmptyBenchmark(String),
    #[error("letter scheme covers {letters} options but benchmark has items with {needed}")]
    LetterScheme { letters: usize, needed: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub template: PromptTemplate,
    /// Options are lettered `A`, `B`, ... up to this many letters.
    pub letters: usize,
    pub temperature: f64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            template: builtin::evaluation(),
            letters: 26,
            temperature: EVAL_TEMPERATURE,
            workers: 1,
        }
    }
}

/// Zero-shot prompt for one item.
pub fn render_prompt(template: &PromptTemplate, item: &McqItem) -> Result<String, TemplateError> {
    template.render(
        &Vars::new()
            .set("question", item.question.clone())
            .set("choices", lettered_choices(&item.choices)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub predicted: Option<usize>,
    pub correct: bool,
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmark_name: String,
    pub model_id: String,
    pub n_total: usize,
    pub n_correct: usize,
    pub n_unparsed: usize,
    pub accuracy: f64,
    /// Seconds from first call to last, on the client's clock.
    pub wall_time: f64,
    pub per_item: Vec<ItemResult>,
}

impl EvalReport {
    /// Assembles a report from per-item results; counts are derived, never passed in.
    pub fn from_items(
        benchmark_name: impl Into<String>,
        model_id: impl Into<String>,
        per_item: Vec<ItemResult>,
        wall_time: f64,
    ) -> Self {
        let n_total = per_item.len();
        let n_correct = per_item.iter().filter(|r| r.correct).count();
        let n_unparsed = per_item.iter().filter(|r| r.predicted.is_none()).count();
        let accuracy = if n_total == 0 {
            0.0
        } else {
            n_correct as f64 / n_total as f64
        };
        EvalReport {
            benchmark_name: benchmark_name.into(),
            model_id: model_id.into(),
            n_total,
            n_correct,
            n_unparsed,
            accuracy,
            wall_time,
            per_item,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn evaluate_item(client: &Client, item: &McqItem, config: &EvalConfig) -> Result<ItemResult, EvalError> {
    let prompt = render_prompt(&config.template, item)?;
    let (predicted, latency) = match client.ask(None, &prompt, config.temperature) {
        Ok(ex) => (
            extract_answer_with_choices(&ex.response_text, &item.choices),
            ex.latency,
        ),
        // Backend failures count as unparsed; the run carries on.
        Err(e) => (None, e.latency),
    };
    Ok(ItemResult {
        id: item.id.clone(),
        predicted,
        correct: predicted == Some(item.answer),
        latency,
    })
}

/// Evaluates `client` on every item of `benchmark`.
pub fn evaluate(client: &Client, benchmark: &Benchmark, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    if benchmark.is_empty() {
        return Err(EvalError::EmptyBenchmark(benchmark.name.clone()));
    }
    let needed = benchmark.max_choices();
    if needed > config.letters.min(26) {
        return Err(EvalError::LetterScheme {
            letters: config.letters,
            needed,
        });
    }

    let start = client.clock().now();
    let per_item: Vec<ItemResult> = crate::pool::with_workers(config.workers, || {
        benchmark
            .items
            .par_iter()
            .map(|item| evaluate_item(client, item, config))
            .collect::<Result<_, _>>()
    })?;
    let wall_time = client.clock().now() - start;

    Ok(EvalReport::from_items(
        benchmark.name.clone(),
        client.model(),
        per_item,
        wall_time,
    ))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::datamodel::Source;
    use crate::llmclient::{Matcher, MockBackend, MockScript, Response, Rule};

    fn bench() -> Benchmark {
        let items = (0..4)
            .map(|i| {
                McqItem::new(
                    format!("Question number {i}?"),
                    ["w", "x", "y", "z"].map(String::from).to_vec(),
                    i % 4,
                    "",
                    None,
                    Source::NclexTest,
                )
            })
            .collect();
        Benchmark::new("toy", items).unwrap()
    }

    fn gold_for_first_three() -> MockScript {
        MockScript::new()
            .when(Matcher::contains("Question number 0?"), Response::text("Answer: (A)"))
            .when(Matcher::contains("Question number 1?"), Response::text("B) x"))
            .when(Matcher::contains("Question number 2?"), Response::text("Answer: C"))
            .default_reply(Response::text("no idea"))
    }

    #[test]
    fn three_of_four() {
        let client = Client::mock(Arc::new(MockBackend::new("m", gold_for_first_three())));
        let report = evaluate(&client, &bench(), &EvalConfig::default()).unwrap();
        assert_eq!(report.n_total, 4);
        assert_eq!(report.n_correct, 3);
        assert_eq!(report.n_unparsed, 1);
        assert_eq!(report.accuracy, 0.75);
        assert_eq!(report.per_item.len(), 4);
    }

    #[test]
    fn all_gold_and_all_empty() {
        let letters = MockScript::new()
            .when(Matcher::contains("number 0"), Response::text("A."))
            .when(Matcher::contains("number 1"), Response::text("B."))
            .when(Matcher::contains("number 2"), Response::text("C."))
            .when(Matcher::contains("number 3"), Response::text("D."));
        let client = Client::mock(Arc::new(MockBackend::new("m", letters)));
        assert_eq!(evaluate(&client, &bench(), &EvalConfig::default()).unwrap().accuracy, 1.0);

        let client = Client::mock(Arc::new(MockBackend::constant("m", "")));
        let r = evaluate(&client, &bench(), &EvalConfig::default()).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.n_unparsed, r.n_total);
    }

    #[test]
    fn backend_failure_marks_item_unparsed() {
        let script = gold_for_first_three()
            .when(Matcher::contains("number 3"), Response::Fail(crate::llmclient::FailureKind::Auth));
        let client = Client::mock(Arc::new(MockBackend::new("m", script)));
        let r = evaluate(&client, &bench(), &EvalConfig::default()).unwrap();
        assert_eq!((r.n_correct, r.n_unparsed), (3, 1));
    }

    #[test]
    fn parallel_matches_sequential() {
        let mk = || Client::mock(Arc::new(MockBackend::new("m", gold_for_first_three())));
        let seq = evaluate(&mk(), &bench(), &EvalConfig::default()).unwrap();
        let par = evaluate(
            &mk(),
            &bench(),
            &EvalConfig {
                workers: 4,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        assert_eq!(seq.per_item, par.per_item);
        assert_eq!(seq.accuracy, par.accuracy);
    }

    #[test]
    fn wall_time_covers_item_latency() {
        let script = MockScript::new().rule(Rule::new(Matcher::Any, Response::text("A")).with_latency(1.25));
        let client = Client::mock(Arc::new(MockBackend::new("m", script)));
        let r = evaluate(&client, &bench(), &EvalConfig::default()).unwrap();
        let max = r.per_item.iter().map(|i| i.latency).fold(0.0, f64::max);
        assert_eq!(max, 1.25);
        assert!(r.wall_time >= max);
    }

    #[test]
    fn letter_scheme_must_cover_choices() {
        let client = Client::mock(Arc::new(MockBackend::constant("m", "A")));
        let cfg = EvalConfig {
            letters: 3,
            ..EvalConfig::default()
        };
        assert!(matches!(
            evaluate(&client, &bench(), &cfg),
            Err(EvalError::LetterScheme { letters: 3, needed: 4 })
        ));
    }

    #[test]
    fn prompt_lists_lettered_options() {
        let b = bench();
        let p = render_prompt(&builtin::evaluation(), &b.items[0]).unwrap();
        assert!(p.starts_with("Question number 0?"));
        assert!(p.contains("A. w\nB. x\nC. y\nD. z"));
        assert!(p.trim_end().ends_with("Answer with the option letter."));
    }
}
