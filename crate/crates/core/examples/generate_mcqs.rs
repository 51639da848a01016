//! Taxonomy-driven MCQ generation and a resumable one-per-concept benchmark.
//!
//!     cargo run --example generate_mcqs

use std::path::Path;
use std::sync::Arc;

use nurseforge::generator::{generate_benchmark, generate_corpus, Checkpoint, GenerationConfig};
use nurseforge::llmclient::{script_mock, Client, MockScript};
use nurseforge::taxonomy::load_taxonomy;

fn demo_client(demo: &Path, script: &str) -> Client {
    let s = MockScript::load(demo.join("mocks").join(script)).unwrap();
    Client::mock(Arc::new(script_mock(script, s).unwrap()))
}

fn main() {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let tax = load_taxonomy(demo.join("taxonomy.csv")).unwrap();
    let cfg = GenerationConfig::default();

    let (items, stats) = generate_corpus(&demo_client(&demo, "generator.toml"), &tax, 2, &cfg).unwrap();
    println!("{stats:?}");
    for it in items.iter().take(3) {
        println!("{}  [{}] {}", it.id, it.answer_letter(), it.question);
    }

    let dir = std::env::temp_dir().join("nurseforge-example-benchmark");
    std::fs::create_dir_all(&dir).unwrap();
    let ck = Checkpoint::open(dir.join("checkpoint.jsonl")).unwrap();
    let before = ck.len();
    let (bench, _) = generate_benchmark(&demo_client(&demo, "gpt4o.toml"), &tax, &cfg, Some(&ck)).unwrap();
    println!("\n{}: {} items ({before} already checkpointed in {})", bench.name, bench.len(), dir.display());
}
