//! ROUGE-L decontamination of a generated corpus against held-out test sets.
//!
//!     cargo run --example decontaminate [threshold]

use std::path::Path;
use std::sync::Arc;

use nurseforge::datamodel::read_benchmark;
use nurseforge::decontam::{decontaminate_items, rouge_l, DecontamConfig, Verdict};
use nurseforge::generator::{generate_corpus, GenerationConfig};
use nurseforge::llmclient::{script_mock, Client, MockScript};
use nurseforge::taxonomy::load_taxonomy;

fn main() {
    let threshold: f64 = std::env::args().nth(1).map_or(0.5, |s| s.parse().expect("numeric threshold"));
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");

    let s = rouge_l("the nurse assesses the client", "the nurse monitors the client");
    println!("ROUGE-L warm-up: lcs={} f1={}\n", s.lcs_len, s.value);

    let script = MockScript::load(demo.join("mocks/generator.toml")).unwrap();
    let client = Client::mock(Arc::new(script_mock("generator", script).unwrap()));
    let tax = load_taxonomy(demo.join("taxonomy.csv")).unwrap();
    let (items, _) = generate_corpus(&client, &tax, 2, &GenerationConfig::default()).unwrap();
    let tests = [read_benchmark(demo.join("nclex_test.jsonl"), None).unwrap()];

    let out = decontaminate_items(&items, &tests, &DecontamConfig::new(threshold).unwrap()).unwrap();
    for d in &out.decisions {
        let detail = match (&d.matched_id, &d.score) {
            (Some(m), Some(s)) => format!(" vs {m} ({:.3})", s.value),
            _ => String::new(),
        };
        println!("{:<16} {:?}{detail}", d.item_id, d.verdict);
    }
    println!(
        "\nthreshold {threshold}: kept {}, test-set hits {}, pool duplicates {}",
        out.count(Verdict::Kept),
        out.count(Verdict::RejectedTestset),
        out.count(Verdict::RejectedPool)
    );
}
