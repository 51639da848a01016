//! Multi-agent debate on the demo NCLEX items plus the runtime comparison.
//!
//!     cargo run --example debate

use std::path::Path;
use std::sync::Arc;

use nurseforge::datamodel::{index_letter, read_items};
use nurseforge::llmclient::{script_mock, Client, MockScript};
use nurseforge::mas::{runtime_table, solve, MasClients, MasConfig, RuntimeRow};

fn main() {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let script = MockScript::load(demo.join("mocks/nurse.toml")).unwrap();
    let client = Client::mock(Arc::new(script_mock("nurse", script).unwrap()));
    let cfg = MasConfig {
        single_baseline: Some(5.6),
        ..Default::default()
    };

    let (mut easy, mut hard) = (None, None);
    for item in read_items(demo.join("nclex_test.jsonl")).unwrap() {
        let out = solve(MasClients::shared(&client), &item, &cfg).unwrap();
        let t = &out.transcript;
        println!("{} ({:?}): answered {} gold {}", item.id, t.difficulty, index_letter(out.answer), item.answer_letter());
        for e in &t.panel {
            println!("    expert {}: {}", e.index, e.specialty);
        }
        for r in &t.rounds {
            for u in &r.utterances {
                println!("    round {} agent {} -> {:?}", r.round, u.from, u.to);
            }
        }
        println!("    stages {:?} total {:.1}s", t.stage_latencies, out.ledger.total);
        let slot = if t.panel.is_empty() { &mut easy } else { &mut hard };
        slot.get_or_insert(out.ledger.total);
    }
    let mut rows = vec![RuntimeRow::new("Single-LLM", 5.6, 5.6)];
    rows.extend(easy.map(|s| RuntimeRow::new("MAS-easy", s, 5.6)));
    rows.extend(hard.map(|s| RuntimeRow::new("MAS-hard", s, 5.6)));
    println!("\n{}", runtime_table(&rows));
}
