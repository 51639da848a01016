//! Zero-shot evaluation and report tables.
//!
//!     cargo run --example evaluate

use std::path::Path;
use std::sync::Arc;

use nurseforge::datamodel::read_benchmark;
use nurseforge::evalharness::{evaluate, format_report, EvalConfig, EvalReport, Layout, TableFormat, MULTIMEDQA_CATEGORIES};
use nurseforge::llmclient::{script_mock, Client, MockScript};

fn main() {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let script = MockScript::load(demo.join("mocks/evaluator.toml")).unwrap();
    let client = Client::mock(Arc::new(script_mock("mock:evaluator", script).unwrap()));

    let bench = read_benchmark(demo.join("nclex_test.jsonl"), None).unwrap();
    let report = evaluate(&client, &bench, &EvalConfig::default()).unwrap();
    for r in &report.per_item {
        println!("{}  predicted {:?}  correct {}", r.id, r.predicted, r.correct);
    }
    println!("{}/{} ({} unparsed)\n", report.n_correct, report.n_total, report.n_unparsed);

    // Per-category layout: Avg. is the unweighted mean of the category columns.
    let mut reports = Vec::new();
    for (model, base) in [("model-a", 0.60), ("model-b", 0.70)] {
        for (i, cat) in MULTIMEDQA_CATEGORIES.iter().enumerate() {
            let mut r = EvalReport::from_items(*cat, model, Vec::new(), 0.0);
            r.accuracy = base + 0.02 * i as f64;
            reports.push(r);
        }
    }
    let table = format_report(&reports, Layout::PerCategory, None, None).unwrap();
    print!("{}", table.render(TableFormat::Markdown));
}
