#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nurseforge::datamodel::{Benchmark, McqItem, Source};
use nurseforge::decontam::{ThresholdMode, Verdict};
use nurseforge::llmclient::{Client, FailureKind, Matcher, MockBackend, MockScript, Response};
use nurseforge::merge::{ParameterMap, Tensor};
use nurseforge::taxonomy::{ConceptPath, Taxonomy};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo")
}

pub fn concept(i: usize) -> ConceptPath {
    ConceptPath::new("Specialty", format!("Domain {}", i % 3), format!("Topic {i}"), format!("concept {i}")).unwrap()
}

pub fn item(id: &str, question: &str, path: Option<ConceptPath>) -> McqItem {
    let mut it = McqItem::new(
        question,
        vec!["one".into(), "two".into(), "three".into(), "four".into()],
        0,
        "",
        path,
        Source::Synthetic,
    );
    it.id = id.to_string();
    it
}

// ---------------------------------------------------------------------------
// Reference similarity: full LCS table, textbook F1.

pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn lcs_table<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

/// F1 as the reduced fraction 2L / (c + r).
pub fn oracle_f1(lcs: usize, c: usize, r: usize) -> f64 {
    if c == 0 && r == 0 {
        return 1.0;
    }
    if c == 0 || r == 0 {
        return 0.0;
    }
    (2 * lcs) as f64 / (c + r) as f64
}

/// Precision/recall form, only equal to `oracle_f1` up to rounding.
pub fn textbook_f1(lcs: usize, c: usize, r: usize) -> f64 {
    if c == 0 && r == 0 {
        return 1.0;
    }
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / c as f64;
    let rec = lcs as f64 / r as f64;
    2.0 * p * rec / (p + rec)
}

pub fn oracle_score(candidate: &str, reference: &str) -> f64 {
    let (a, b) = (words(candidate), words(reference));
    oracle_f1(lcs_table(&a, &b), a.len(), b.len())
}

// ---------------------------------------------------------------------------
// Naive two-step decontamination over all pairs.

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveDecision {
    pub verdict: Verdict,
    pub matched: Option<String>,
    pub score: Option<f64>,
}

fn rejects(mode: ThresholdMode, t: f64, s: f64) -> bool {
    match mode {
        ThresholdMode::AtLeast => s >= t,
        ThresholdMode::Exceeds => s > t,
    }
}

fn best<'a>(q: &str, pool: impl Iterator<Item = &'a McqItem>) -> Option<(String, f64)> {
    let mut out: Option<(String, f64)> = None;
    for other in pool {
        let s = oracle_score(q, &other.question);
        if out.as_ref().map_or(true, |(_, b)| s > *b) {
            out = Some((other.id.clone(), s));
        }
    }
    out
}

pub fn naive_decontam(items: &[McqItem], tests: &[Benchmark], t: f64, mode: ThresholdMode) -> Vec<NaiveDecision> {
    let test_items: Vec<&McqItem> = tests.iter().flat_map(|b| b.items.iter()).collect();
    let mut kept: Vec<&McqItem> = Vec::new();
    let mut out = Vec::new();
    for it in items {
        if let Some((id, s)) = best(&it.question, test_items.iter().copied()) {
            if rejects(mode, t, s) {
                out.push(NaiveDecision {
                    verdict: Verdict::RejectedTestset,
                    matched: Some(id),
                    score: Some(s),
                });
                continue;
            }
        }
        let key = it.path.as_ref().unwrap().key();
        let same = kept.iter().copied().filter(|k| k.path.as_ref().unwrap().key() == key);
        match best(&it.question, same) {
            Some((id, s)) if rejects(mode, t, s) => out.push(NaiveDecision {
                verdict: Verdict::RejectedPool,
                matched: Some(id),
                score: Some(s),
            }),
            _ => {
                kept.push(it);
                out.push(NaiveDecision {
                    verdict: Verdict::Kept,
                    matched: None,
                    score: None,
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Random corpora with planted repeats.

pub struct RandomCorpus {
    pub items: Vec<McqItem>,
    pub tests: Vec<Benchmark>,
}

fn vocabulary() -> Vec<String> {
    let stems = [
        "nurse", "client", "pain", "dose", "insulin", "wound", "fever", "assess", "monitor", "report",
        "infant", "lochia", "fundus", "heart", "rate", "oxygen", "airway", "fluid", "renal", "skin",
    ];
    let mut v: Vec<String> = stems.iter().map(|s| s.to_string()).collect();
    for i in 0..480 {
        v.push(format!("w{i}"));
    }
    v
}

fn sentence(rng: &mut ChaCha8Rng, vocab: &[String]) -> Vec<String> {
    let len = rng.gen_range(5..=40);
    (0..len).map(|_| vocab.choose(rng).unwrap().clone()).collect()
}

/// Copies a sentence with a few tokens swapped, kept well above 0.5 overlap.
fn perturb(rng: &mut ChaCha8Rng, vocab: &[String], s: &[String]) -> Vec<String> {
    let mut out = s.to_vec();
    let edits = rng.gen_range(0..=s.len() / 6);
    for _ in 0..edits {
        let i = rng.gen_range(0..out.len());
        out[i] = vocab.choose(rng).unwrap().clone();
    }
    out
}

/// `n` candidates over `concepts` concepts. About 10% repeat an earlier
/// candidate of the same concept and 5% copy a test question.
pub fn random_corpus(seed: u64, n: usize, concepts: usize) -> RandomCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary();
    let n_tests = (n / 4).max(1);
    let test_items: Vec<McqItem> = (0..n_tests)
        .map(|i| item(&format!("t{i}"), &sentence(&mut rng, &vocab).join(" "), None))
        .collect();
    let mut items: Vec<McqItem> = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.gen_range(0..concepts.max(1));
        let roll: f64 = rng.gen();
        let same_concept: Vec<usize> = (0..items.len())
            .filter(|&j| items[j].path.as_ref().unwrap().concept == format!("concept {c}"))
            .collect();
        let tokens = if roll < 0.10 && !same_concept.is_empty() {
            let src = &items[*same_concept.choose(&mut rng).unwrap()];
            perturb(&mut rng, &vocab, &words(&src.question))
        } else if roll < 0.15 {
            let src = test_items.choose(&mut rng).unwrap();
            perturb(&mut rng, &vocab, &words(&src.question))
        } else {
            sentence(&mut rng, &vocab)
        };
        items.push(item(&format!("c{i}"), &tokens.join(" "), Some(concept(c))));
    }
    let tests = vec![Benchmark::new("toy_test", test_items).unwrap()];
    RandomCorpus { items, tests }
}

// ---------------------------------------------------------------------------
// Generation mocks.

pub fn toy_taxonomy(n: usize) -> Taxonomy {
    Taxonomy::from_paths((0..n).map(concept).collect()).unwrap()
}

pub fn concept_of(prompt: &str) -> String {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix("Concept: "))
        .unwrap_or("?")
        .to_string()
}

pub fn good_reply(prompt: &str) -> String {
    let c = concept_of(prompt);
    format!("QUESTION: What does the nurse check first for {c}?\nA: Airway\nB: Pain\nC: History\nD: Diet\nANSWER: A\nRATIONALE: Airway before anything else for {c}.")
}

pub const MALFORMED: [&str; 5] = [
    "QUESTION: q?\nA: x\nB: y\nC: z\nANSWER: A\nRATIONALE: r",
    "QUESTION: q?\nA: x\nB: y\nC: z\nD: w\nANSWER: E\nRATIONALE: r",
    "QUESTION:\nA: x\nB: y\nC: z\nD: w\nANSWER: A\nRATIONALE: r",
    "I cannot help with that.",
    "QUESTION: q?\nA: x\nB: y\nC: z\nD: w\nRATIONALE: r",
];

/// Every tenth call returns one of the malformed shapes.
pub fn flaky_client() -> (Client, Arc<AtomicUsize>) {
    let n = Arc::new(AtomicUsize::new(0));
    let counter = n.clone();
    let script = MockScript::new().when(
        Matcher::Any,
        Response::dynamic(move |prompt| {
            let i = counter.fetch_add(1, Ordering::SeqCst);
            if i % 10 == 9 {
                Response::text(MALFORMED[(i / 10) % MALFORMED.len()])
            } else {
                Response::text(good_reply(prompt))
            }
        }),
    );
    (Client::mock(Arc::new(MockBackend::new("flaky", script))), n)
}

pub fn steady_client() -> Client {
    let script = MockScript::new().when(Matcher::Any, Response::dynamic(|p| Response::text(good_reply(p))));
    Client::mock(Arc::new(MockBackend::new("steady", script)))
}

/// Healthy for `ok` calls, then every call fails authentication.
pub fn dying_client(ok: usize) -> Client {
    let n = AtomicUsize::new(0);
    let script = MockScript::new().when(
        Matcher::Any,
        Response::dynamic(move |p| {
            if n.fetch_add(1, Ordering::SeqCst) < ok {
                Response::text(good_reply(p))
            } else {
                Response::Fail(FailureKind::Auth)
            }
        }),
    );
    Client::mock(Arc::new(MockBackend::new("dying", script)))
}

// ---------------------------------------------------------------------------
// A scripted MAS panel.

pub const CHOICES: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

pub fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Scripted panel: agent `i` reports `reports[i-1]`, then in every debate
/// round says `debate[i-1]` (or nothing readable). The moderator answers
/// `moderator` or gives no readable answer.
pub fn panel_script(hard: bool, k: usize, reports: Vec<usize>, debate: Vec<Option<usize>>, moderator: Option<usize>) -> MockScript {
    let persona = Regex::new(r"You are a Nurse (\d+)\.").unwrap();
    let speaker = Regex::new(r"You are Agent (\d+) on a panel").unwrap();
    MockScript::new()
        .when(
            Matcher::contains("easy or hard"),
            Response::dynamic(move |_| {
                if !hard {
                    return Response::text("Difficulty: easy");
                }
                let lines: Vec<String> = (1..=k).map(|i| format!("Agent {i} ({i}. Nurse {i}): Focus {i}.")).collect();
                Response::text(format!("Difficulty: hard\n{}", lines.join("\n")))
            }),
        )
        .when(
            Matcher::contains("You moderate"),
            Response::text(match moderator {
                Some(a) => format!("Final Decision:\nAnswer: ({})", letter(a)),
                None => "The panel did not settle this.".to_string(),
            }),
        )
        .when(
            Matcher::contains("on a panel of nursing experts discussing"),
            Response::dynamic(move |p| {
                let i: usize = speaker.captures(p).unwrap()[1].parse().unwrap();
                let to = if i == 1 { 2 } else { 1 };
                Response::text(match debate[i - 1] {
                    Some(a) => format!("Agent {i} -> Agent {to}: I now lean the other way. Answer: ({})", letter(a)),
                    None => format!("Agent {i} -> Agent {to}: I am still weighing this."),
                })
            }),
        )
        .when(
            Matcher::contains("point of view of your specialty"),
            Response::dynamic(move |p| {
                let i: usize = persona.captures(p).unwrap()[1].parse().unwrap();
                Response::text(format!("Answer: ({}) because.", letter(reports[i - 1])))
            }),
        )
        .when(Matcher::contains("Answer with the option letter"), Response::text("Answer: (C)"))
}

pub fn mas_item() -> McqItem {
    McqItem::new("Which is it?", CHOICES.iter().map(|s| s.to_string()).collect(), 0, "", None, Source::NclexTest)
}

/// Plurality by brute force, ties to the lowest index.
pub fn brute_majority(answers: &[usize]) -> usize {
    (0..CHOICES.len())
        .max_by_key(|&c| (answers.iter().filter(|&&a| a == c).count(), std::cmp::Reverse(c)))
        .unwrap()
}

// ---------------------------------------------------------------------------
// Parameter files for the merge stage.

pub fn toy_params(seed: u64, shift: f32) -> ParameterMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ParameterMap::new();
    for (name, shape) in [("embed.weight", vec![8u64, 4]), ("head.bias", vec![4]), ("layer0.weight", vec![4, 4])] {
        let n: u64 = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-1.0f32..1.0) + shift).collect();
        m.insert(name, Tensor::new(shape, values).unwrap());
    }
    m
}

// ---------------------------------------------------------------------------
// The demo pipeline, stage by stage through the CLI entry point.

fn forge(args: &[&str]) -> i32 {
    let mut argv = vec!["forge".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    nurseforge::cli::dispatch(argv)
}

/// Runs every stage on the demo config, writing into `out`. Returns the
/// first failing stage, if any.
pub fn run_demo_pipeline(out: &Path) -> Result<(), String> {
    std::fs::create_dir_all(out).unwrap();
    let demo = demo_dir();
    let cfg = demo.join("pipeline.toml");
    let cfg = cfg.to_str().unwrap();
    let o = |name: &str| out.join(name).to_str().unwrap().to_string();
    let d = |name: &str| demo.join(name).to_str().unwrap().to_string();

    toy_params(1, 0.0).save(out.join("base.npk")).unwrap();
    toy_params(1, 0.25).save(out.join("ft.npk")).unwrap();

    let stages: Vec<(&str, Vec<String>)> = vec![
        ("taxonomy", vec!["taxonomy".into(), "--out".into(), o("taxonomy_counts.json")]),
        ("benchmark", vec!["benchmark".into(), "--out".into(), o("gpt4o_test.jsonl")]),
        ("generate", vec!["generate".into(), "--out".into(), o("corpus.jsonl")]),
        ("mine", vec!["mine".into(), "--in".into(), d("multimedqa.jsonl"), "--out".into(), o("multinurseqa.jsonl")]),
        (
            "decontam",
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
        ),
        ("eval", vec!["eval".into(), "--bench".into(), d("nclex_test.jsonl"), "--out".into(), o("eval_nclex.json")]),
        ("eval", vec!["eval".into(), "--bench".into(), o("gpt4o_test.jsonl"), "--out".into(), o("eval_gpt4o.json")]),
        ("mas", vec!["mas".into(), "--bench".into(), d("nclex_test.jsonl"), "--out".into(), o("mas")]),
        (
            "distill",
            vec![
                "distill".into(),
                "--in".into(),
                o("clean.jsonl"),
                "--out".into(),
                o("distilled.jsonl"),
                "--rejected".into(),
                o("distill_rejected.jsonl"),
            ],
        ),
        (
            "merge",
            vec!["merge".into(), "--base".into(), o("base.npk"), "--ft".into(), o("ft.npk"), "--out".into(), o("merged.npk")],
        ),
        (
            "report",
            vec![
                "report".into(),
                "--reports".into(),
                o("eval_nclex.json"),
                o("eval_gpt4o.json"),
                "--out".into(),
                o("accuracy_table.md"),
            ],
        ),
    ];
    for (name, args) in stages {
        let mut argv: Vec<&str> = vec!["--config", cfg];
        argv.extend(args.iter().map(String::as_str));
        let code = forge(&argv);
        if code != 0 {
            return Err(format!("stage {name} exited with {code}"));
        }
    }
    Ok(())
}

/// Every output file under `dir` except provenance sidecars, which carry
/// timestamps by design.
pub fn outputs(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".provenance.json") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
