mod common;

use common::*;
use nurseforge::cli::{dispatch, provenance_path};
use nurseforge::datamodel::read_items;
use nurseforge::decontam::{DecontamDecision, Verdict};
use nurseforge::datamodel::read_jsonl;

fn forge(args: &[&str]) -> i32 {
    dispatch(std::iter::once("forge").chain(args.iter().copied()))
}

#[test]
fn taxonomy_counts_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("counts.json");
    let tax = demo_dir().join("taxonomy.csv");
    assert_eq!(forge(&["taxonomy", "--in", tax.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let counts: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(counts["counts"]["concepts"], 6);
    assert_eq!(counts["counts"]["specializations"], 2);

    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(provenance_path(&out)).unwrap()).unwrap();
    assert_eq!(side["stage"], "taxonomy");
    let digest = side["inputs"][tax.to_str().unwrap()].as_str().unwrap();
    assert_eq!(digest.len(), 64);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(forge(&["frobnicate"]), 2);
    assert_eq!(forge(&["decontam", "--in", "x.jsonl", "--out", "y.jsonl"]), 2);
    assert_eq!(forge(&["merge", "--base", "a.npk"]), 2);
}

#[test]
fn stage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(forge(&["eval", "--bench", "no/such.jsonl", "--out", out.to_str().unwrap()]), 1);
    // A taxonomy with a repeated row.
    let tax = dir.path().join("dup.csv");
    std::fs::write(&tax, "Specialization,Domain,Topic,Concept\na,b,c,d\nA,B,C,D\n").unwrap();
    assert_eq!(forge(&["taxonomy", "--in", tax.to_str().unwrap()]), 1);
    assert_eq!(forge(&["taxonomy", "--in", tax.to_str().unwrap(), "--skip-duplicates"]), 0);
}

#[test]
fn ad_hoc_mock_backend() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval.json");
    let script = demo_dir().join("mocks/evaluator.toml");
    let backend = format!("mock:{}", script.display());
    let bench = demo_dir().join("nclex_test.jsonl");
    assert_eq!(
        forge(&["eval", "--bench", bench.to_str().unwrap(), "--backend", &backend, "--out", out.to_str().unwrap()]),
        0
    );
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["n_total"], 4);
    assert_eq!(report["n_correct"], 2);
}

#[test]
fn demo_pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run_demo_pipeline(dir.path()).unwrap();

    let decisions: Vec<DecontamDecision> = read_jsonl(dir.path().join("decisions.jsonl")).unwrap();
    let count = |v: Verdict| decisions.iter().filter(|d| d.verdict == v).count();
    assert_eq!((count(Verdict::Kept), count(Verdict::RejectedTestset), count(Verdict::RejectedPool)), (5, 2, 5));
    let testset_hit = decisions.iter().find(|d| d.verdict == Verdict::RejectedTestset).unwrap();
    assert_eq!(testset_hit.matched_id.as_deref(), Some("nclex-003"));

    assert_eq!(read_items(dir.path().join("clean.jsonl")).unwrap().len(), 5);
    assert_eq!(read_items(dir.path().join("multinurseqa.jsonl")).unwrap().len(), 2);
    assert_eq!(read_items(dir.path().join("gpt4o_test.jsonl")).unwrap().len(), 6);

    let runtime = std::fs::read_to_string(dir.path().join("mas/runtime.md")).unwrap();
    assert!(runtime.contains("| 6.1 | 1.09× |"), "{runtime}");
    assert!(runtime.contains("| 28.3 | 5.05× |"), "{runtime}");
    let table = std::fs::read_to_string(dir.path().join("accuracy_table.md")).unwrap();
    assert!(table.starts_with("| Model | nclex_test | gpt4o_test |"), "{table}");
}

#[test]
fn pipeline_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_demo_pipeline(a.path()).unwrap();
    run_demo_pipeline(b.path()).unwrap();
    let (oa, ob) = (outputs(a.path()), outputs(b.path()));
    assert!(oa.len() >= 15, "{}", oa.len());
    for ((pa, ba), (pb, bb)) in oa.iter().zip(&ob) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs", pa.display());
    }
    assert_eq!(oa.len(), ob.len());
}
