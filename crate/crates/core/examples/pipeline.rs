//! The whole demo pipeline through the CLI entry point, stage by stage.
//!
//!     cargo run --example pipeline [out_dir]

use std::path::{Path, PathBuf};

use nurseforge::cli::dispatch;
use nurseforge::merge::{ParameterMap, Tensor};

fn main() {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("nurseforge-example-pipeline"));
    std::fs::create_dir_all(&out).unwrap();
    let o = |name: &str| out.join(name).display().to_string();
    let d = |name: &str| demo.join(name).display().to_string();

    // Stand-in parameter files for the merge stage.
    for (file, shift) in [("base.npk", 0.0f32), ("ft.npk", 0.25)] {
        let mut m = ParameterMap::new();
        m.insert("w", Tensor::vector((0..16).map(|i| i as f32 * 0.1 + shift).collect()));
        m.save(out.join(file)).unwrap();
    }

    let stages: Vec<Vec<String>> = vec![
        vec!["taxonomy".into(), "--out".into(), o("taxonomy_counts.json")],
        vec!["benchmark".into(), "--out".into(), o("gpt4o_test.jsonl")],
        vec!["generate".into(), "--out".into(), o("corpus.jsonl")],
        vec!["mine".into(), "--in".into(), d("multimedqa.jsonl"), "--out".into(), o("multinurseqa.jsonl")],
        vec![
            "decontam".into(),
            "--in".into(),
            o("corpus.jsonl"),
            "--tests".into(),
            d("nclex_test.jsonl"),
            o("gpt4o_test.jsonl"),
            "--out".into(),
            o("clean.jsonl"),
            "--decisions".into(),
            o("decisions.jsonl"),
        ],
        vec!["eval".into(), "--bench".into(), d("nclex_test.jsonl"), "--out".into(), o("eval_nclex.json")],
        vec!["eval".into(), "--bench".into(), o("gpt4o_test.jsonl"), "--out".into(), o("eval_gpt4o.json")],
        vec!["mas".into(), "--bench".into(), d("nclex_test.jsonl"), "--out".into(), o("mas")],
        vec!["distill".into(), "--in".into(), o("clean.jsonl"), "--out".into(), o("distilled.jsonl")],
        vec![
            "merge".into(),
            "--base".into(),
            o("base.npk"),
            "--ft".into(),
            o("ft.npk"),
            "--out".into(),
            o("merged.npk"),
        ],
        vec!["report".into(), "--reports".into(), o("eval_nclex.json"), o("eval_gpt4o.json"), "--out".into(), o("table.md")],
    ];

    for args in stages {
        println!("$ forge {}", args.join(" "));
        let argv = ["forge".to_string(), "--config".into(), d("pipeline.toml")].into_iter().chain(args);
        let code = dispatch(argv);
        if code != 0 {
            std::process::exit(code);
        }
    }
    println!("\noutputs in {}", out.display());
}
