//! Scripted mock backends: rules, capture expansion, simulated latency.
//!
//!     cargo run --example mock_backend

use std::sync::Arc;

use nurseforge::llmclient::{script_mock, Client, MockScript};

const SCRIPT: &str = r#"
default = "I am not sure."
default_latency_s = 1.0

[[rule]]
regex = "dose of (\\w+)"
reply = "Check the ${1} order against the MAR first. Answer: (B)"
latency_s = 2.5

[[rule]]
contains = "fail me"
fail = "auth"
"#;

fn main() {
    let script = MockScript::from_toml_str(SCRIPT).expect("valid script");
    let backend = Arc::new(script_mock("demo", script).unwrap());
    let client = Client::mock(backend.clone());

    for prompt in ["What is the next dose of insulin?", "Anything else?"] {
        let ex = client.ask(Some("You are a nurse."), prompt, 0.0).unwrap();
        println!("> {prompt}\n  {} ({:.1}s simulated)", ex.response_text, ex.latency);
    }
    match client.ask(None, "please fail me", 0.0) {
        Ok(_) => unreachable!(),
        Err(e) => println!("> please fail me\n  error: {e}"),
    }
    println!("{} backend calls in total (retries included)", backend.call_count());
}
