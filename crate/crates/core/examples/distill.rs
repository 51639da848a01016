//! Reasoning-trace distillation with answer-agreement filtering.
//!
//!     cargo run --example distill

use std::path::Path;
use std::sync::Arc;

use nurseforge::datamodel::read_items;
use nurseforge::generator::{distill_reasoning, DistillConfig};
use nurseforge::llmclient::{script_mock, Client, MockScript};

fn main() {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let script = MockScript::load(demo.join("mocks/reasoner.toml")).unwrap();
    let client = Client::mock(Arc::new(script_mock("reasoner", script).unwrap()));

    let items = read_items(demo.join("nclex_test.jsonl")).unwrap();
    let out = distill_reasoning(&client, &items, &DistillConfig::default()).unwrap();
    for s in out.kept.iter().chain(&out.rejected) {
        let last = s.trace.lines().last().unwrap_or_default();
        println!("{}  agrees={}  {last}", s.item.id, s.agrees);
    }
    println!("retention: {}", out.stats);
}
