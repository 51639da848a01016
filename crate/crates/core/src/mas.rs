//! Multi-agent answering: an orchestrator triages the question, easy ones go to
//! a single call, hard ones to a recruited expert panel that reports, debates,
//! and hands its transcript to a moderator for the verdict.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{index_letter, McqItem};
use crate::evalharness::extract_answer_with_choices;
use crate::llmclient::{CallError, ChatExchange, Client, EVAL_TEMPERATURE};
use crate::template::{builtin, lettered_choices, PromptTemplate, TemplateError, Vars};

pub const STAGE_ORCHESTRATION: &str = "orchestration";
pub const STAGE_ANSWER: &str = "answer";
pub const STAGE_REPORTS: &str = "reports";
pub const STAGE_DEBATE: &str = "debate";
pub const STAGE_MODERATION: &str = "moderation";

#[derive(Debug, Error)]
pub enum MasError {
    #[error(transparent)]
    Call(#[from] CallError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("could not read {expected} experts from the recruitment reply after {attempts} attempt(s): {reason}")]
    RecruitmentParseFailed {
        expected: usize,
        attempts: u32,
        reason: String,
    },
    #[error("invalid MAS setting: {0}")]
    InvalidConfig(String),
    #[error("no answer could be read from the {0}")]
    NoVerdict(&'static str),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<MasError>,
        partial: Box<DebateTranscript>,
    },
}

impl MasError {
    pub fn category(&self) -> &'static str {
        match self {
            MasError::Call(e) => e.error.category(),
            MasError::Template(_) => "template",
            MasError::RecruitmentParseFailed { .. } => "recruitment_parse_failed",
            MasError::InvalidConfig(_) => "invalid_config",
            MasError::NoVerdict(_) => "no_verdict",
            MasError::Stage { source, .. } => source.category(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

/// First `easy` or `hard` word in the reply; anything else means hard.
pub fn parse_difficulty(reply: &str) -> Difficulty {
    reply
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|t| match t.to_lowercase().as_str() {
            "easy" => Some(Difficulty::Easy),
            "hard" => Some(Difficulty::Hard),
            _ => None,
        })
        .unwrap_or(Difficulty::Hard)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertSpec {
    /// 1-based position on the panel.
    pub index: usize,
    pub specialty: String,
    pub persona_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub from: usize,
    /// `None` when the reply did not name a valid addressee.
    pub to: Option<usize>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateRound {
    pub round: usize,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertReport {
    pub expert: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Moderator,
    MajorityFallback,
    SingleCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// 0-based option index.
    pub answer: usize,
    pub moderator_text: String,
    pub source: VerdictSource,
    /// Majority over the experts' latest answers, kept for audit.
    pub majority: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    #[serde(with = "item_json")]
    pub question: McqItem,
    pub difficulty: Difficulty,
    pub panel: Vec<ExpertSpec>,
    pub initial_reports: Vec<ExpertReport>,
    pub rounds: Vec<DebateRound>,
    pub verdict: Option<Verdict>,
    pub stage_latencies: BTreeMap<String, f64>,
}

mod item_json {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::Value;

    use crate::datamodel::McqItem;

    pub fn serialize<S: Serializer>(item: &McqItem, s: S) -> Result<S::Ok, S::Error> {
        item.to_json().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<McqItem, D::Error> {
        McqItem::from_json(Value::deserialize(d)?, 0, None).map_err(serde::de::Error::custom)
    }
}

impl DebateTranscript {
    fn new(question: &McqItem) -> Self {
        DebateTranscript {
            question: question.clone(),
            difficulty: Difficulty::Hard,
            panel: Vec::new(),
            initial_reports: Vec::new(),
            rounds: Vec::new(),
            verdict: None,
            stage_latencies: BTreeMap::new(),
        }
    }

    fn add_latency(&mut self, stage: &str, secs: f64) {
        *self.stage_latencies.entry(stage.to_string()).or_insert(0.0) += secs;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeLedger {
    pub stages: BTreeMap<String, f64>,
    pub total: f64,
    /// `total / baseline` when a single-call baseline is configured.
    pub ratio_vs_single: Option<f64>,
}

impl RuntimeLedger {
    pub fn from_stages(stages: BTreeMap<String, f64>, single_baseline: Option<f64>) -> Self {
        let total = stages.values().sum();
        RuntimeLedger {
            stages,
            total,
            ratio_vs_single: single_baseline.map(|b| total / b),
        }
    }
}

/// One line of a runtime comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub model: String,
    pub runtime: f64,
    pub ratio: f64,
}

impl RuntimeRow {
    pub fn new(model: impl Into<String>, runtime: f64, baseline: f64) -> Self {
        RuntimeRow {
            model: model.into(),
            runtime,
            ratio: runtime / baseline,
        }
    }
}

pub fn format_ratio(ratio: f64) -> String {
    format!("{ratio:.2}×")
}

pub fn runtime_table(rows: &[RuntimeRow]) -> String {
    let mut out = String::from("| Model | Runtime (sec) | Comparison |\n|---|---|---|\n");
    for r in rows {
        let _ = writeln!(out, "| {} | {:.1} | {} |", r.model, r.runtime, format_ratio(r.ratio));
    }
    out
}

fn recruit_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bAgent\s*(\d+)\s*\(").unwrap())
}

/// Reads `Agent i (i. Specialty): description` entries, which may share a
/// line. The specialty may itself contain parentheses.
pub fn parse_recruitment(reply: &str, k: usize) -> Result<Vec<(usize, String, String)>, String> {
    let starts: Vec<(usize, usize, usize)> = recruit_line()
        .captures_iter(reply)
        .map(|c| {
            let m = c.get(0).unwrap();
            (m.start(), m.end(), c[1].parse().unwrap_or(0))
        })
        .collect();
    let mut out = Vec::new();
    for (n, &(_, open_end, index)) in starts.iter().enumerate() {
        let segment_end = starts.get(n + 1).map_or(reply.len(), |s| s.0);
        let segment = &reply[open_end..segment_end];
        let mut depth = 1usize;
        let mut close = None;
        for (i, ch) in segment.char_indices() {
            match ch {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let close = close.ok_or_else(|| format!("unbalanced parentheses for agent {index}"))?;
        let inner = segment[..close].trim();
        let specialty = inner
            .trim_start_matches(|c: char| c.is_ascii_digit())
            .trim_start_matches('.')
            .trim();
        if specialty.is_empty() {
            return Err(format!("agent {index} has no specialty"));
        }
        let description = segment[close + 1..].trim_start().trim_start_matches(':').trim();
        out.push((index, specialty.to_string(), description.to_string()));
    }
    let indices: Vec<usize> = out.iter().map(|e| e.0).collect();
    let expected: Vec<usize> = (1..=k).collect();
    if indices != expected {
        return Err(format!("expected agents {expected:?}, found {indices:?}"));
    }
    Ok(out)
}

fn debate_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)Agent\s*(\d+)\s*(?:->|→|-&gt;)\s*Agent\s*(\d+)\s*:?").unwrap())
}

/// Turns an expert's debate reply into an utterance. A reply without a valid
/// `Agent i -> Agent j` header is kept as free-form text.
pub fn parse_utterance(speaker: usize, panel_size: usize, reply: &str) -> Utterance {
    if let Some(c) = debate_line().captures(reply) {
        let from: usize = c[1].parse().unwrap_or(0);
        let to: usize = c[2].parse().unwrap_or(0);
        if from == speaker && to != speaker && (1..=panel_size).contains(&to) {
            return Utterance {
                from,
                to: Some(to),
                text: reply[c.get(0).unwrap().end()..].trim().to_string(),
            };
        }
    }
    Utterance {
        from: speaker,
        to: None,
        text: reply.trim().to_string(),
    }
}

/// Plurality winner; ties go to the lowest option index.
pub fn majority_vote(answers: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &a in answers {
        *counts.entry(a).or_insert(0) += 1;
    }
    let best = *counts.values().max()?;
    counts.into_iter().find(|&(_, c)| c == best).map(|(a, _)| a)
}

/// Each expert's most recent readable answer: the last debate utterance that
/// states one, else the initial report.
pub fn latest_answers(transcript: &DebateTranscript) -> Vec<usize> {
    let choices = &transcript.question.choices;
    transcript
        .panel
        .iter()
        .filter_map(|e| {
            let spoken = transcript
                .rounds
                .iter()
                .rev()
                .flat_map(|r| r.utterances.iter().rev())
                .filter(|u| u.from == e.index)
                .find_map(|u| extract_answer_with_choices(&u.text, choices));
            spoken.or_else(|| {
                transcript
                    .initial_reports
                    .iter()
                    .filter(|r| r.expert == e.index)
                    .find_map(|r| extract_answer_with_choices(&r.text, choices))
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MasTemplates {
    pub triage: PromptTemplate,
    pub difficulty: PromptTemplate,
    pub recruit: PromptTemplate,
    pub persona: PromptTemplate,
    pub report: PromptTemplate,
    pub debate: PromptTemplate,
    pub moderator: PromptTemplate,
    pub single: PromptTemplate,
}

impl Default for MasTemplates {
    fn default() -> Self {
        MasTemplates {
            triage: builtin::mas_triage(),
            difficulty: builtin::mas_difficulty(),
            recruit: builtin::mas_recruit(),
            persona: builtin::mas_persona(),
            report: builtin::mas_report(),
            debate: builtin::mas_debate(),
            moderator: builtin::mas_moderator(),
            single: builtin::evaluation(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MasConfig {
    pub k: usize,
    pub rounds: usize,
    /// Extra recruitment calls allowed after an unreadable panel.
    pub recruit_retries: u32,
    /// Seconds taken by one plain call, for the runtime ratio.
    pub single_baseline: Option<f64>,
    pub temperature: f64,
    /// Parallel width for expert calls within one stage.
    pub workers: usize,
    pub templates: MasTemplates,
}

impl Default for MasConfig {
    fn default() -> Self {
        MasConfig {
            k: 5,
            rounds: 1,
            recruit_retries: 2,
            single_baseline: None,
            temperature: EVAL_TEMPERATURE,
            workers: 1,
            templates: MasTemplates::default(),
        }
    }
}

impl MasConfig {
    pub fn validate(&self) -> Result<(), MasError> {
        if self.k < 2 {
            return Err(MasError::InvalidConfig(format!("k = {} but a panel needs at least 2 experts", self.k)));
        }
        if self.rounds < 1 {
            return Err(MasError::InvalidConfig("at least one debate round is required".into()));
        }
        if self.single_baseline.is_some_and(|b| b <= 0.0) {
            return Err(MasError::InvalidConfig("single-call baseline must be positive".into()));
        }
        Ok(())
    }
}

/// The three roles. They may all point at the same client.
#[derive(Clone, Copy)]
pub struct MasClients<'a> {
    pub orchestrator: &'a Client,
    pub experts: &'a Client,
    pub moderator: &'a Client,
}

impl<'a> MasClients<'a> {
    pub fn shared(client: &'a Client) -> Self {
        MasClients {
            orchestrator: client,
            experts: client,
            moderator: client,
        }
    }
}

fn question_vars(item: &McqItem) -> Vars {
    Vars::new()
        .set("question", item.question.clone())
        .set("choices", lettered_choices(&item.choices))
}

fn call(client: &Client, system: Option<&str>, prompt: &str, temperature: f64) -> Result<ChatExchange, MasError> {
    Ok(client.ask(system, prompt, temperature)?)
}

/// Asks the orchestrator whether the question is easy or hard.
pub fn classify_difficulty(
    orchestrator: &Client,
    item: &McqItem,
    config: &MasConfig,
) -> Result<(Difficulty, f64), MasError> {
    let prompt = config.templates.difficulty.render(&question_vars(item))?;
    let ex = call(orchestrator, None, &prompt, config.temperature)?;
    Ok((parse_difficulty(&ex.response_text), ex.latency))
}

fn build_panel(config: &MasConfig, entries: Vec<(usize, String, String)>) -> Result<Vec<ExpertSpec>, MasError> {
    entries
        .into_iter()
        .map(|(index, specialty, description)| {
            let persona_prompt = config.templates.persona.render(
                &Vars::new()
                    .set("specialty", specialty.clone())
                    .set("description", description),
            )?;
            Ok(ExpertSpec {
                index,
                specialty,
                persona_prompt,
            })
        })
        .collect()
}

/// Asks the orchestrator for `k` experts, retrying unreadable replies.
pub fn recruit_experts(
    orchestrator: &Client,
    item: &McqItem,
    config: &MasConfig,
) -> Result<(Vec<ExpertSpec>, f64), MasError> {
    recruit_after(orchestrator, item, config, None)
}

/// Recruitment, optionally starting from a reply already in hand (the triage
/// reply), in which case that reply counts as the first attempt.
fn recruit_after(
    orchestrator: &Client,
    item: &McqItem,
    config: &MasConfig,
    first: Option<&str>,
) -> Result<(Vec<ExpertSpec>, f64), MasError> {
    config.validate()?;
    let mut latency = 0.0;
    let mut attempts = 0;
    let mut reason = String::new();
    if let Some(reply) = first {
        attempts += 1;
        match parse_recruitment(reply, config.k) {
            Ok(entries) => return Ok((build_panel(config, entries)?, latency)),
            Err(r) => reason = r,
        }
    }
    let prompt = config
        .templates
        .recruit
        .render(&question_vars(item).set("k", config.k.to_string()))?;
    let budget = 1 + config.recruit_retries;
    while attempts < budget {
        attempts += 1;
        let ex = call(orchestrator, None, &prompt, config.temperature)?;
        latency += ex.latency;
        match parse_recruitment(&ex.response_text, config.k) {
            Ok(entries) => return Ok((build_panel(config, entries)?, latency)),
            Err(r) => reason = r,
        }
    }
    Err(MasError::RecruitmentParseFailed {
        expected: config.k,
        attempts,
        reason,
    })
}

fn reports_text(reports: &[ExpertReport], panel: &[ExpertSpec]) -> String {
    reports
        .iter()
        .map(|r| {
            let who = panel
                .iter()
                .find(|e| e.index == r.expert)
                .map_or("expert", |e| e.specialty.as_str());
            format!("Agent {} ({}): {}", r.expert, who, r.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn discussion_text(rounds: &[DebateRound]) -> String {
    let lines: Vec<String> = rounds
        .iter()
        .flat_map(|r| &r.utterances)
        .map(|u| match u.to {
            Some(to) => format!("Agent {} -> Agent {}: {}", u.from, to, u.text),
            None => format!("Agent {}: {}", u.from, u.text),
        })
        .collect();
    if lines.is_empty() {
        "(none yet)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Phase one: every expert reports independently.
pub fn collect_reports(
    experts: &Client,
    panel: &[ExpertSpec],
    item: &McqItem,
    config: &MasConfig,
) -> Result<(Vec<ExpertReport>, f64), MasError> {
    let prompt = config.templates.report.render(&question_vars(item))?;
    let replies = crate::pool::with_workers(config.workers, || {
        panel
            .par_iter()
            .map(|e| call(experts, Some(&e.persona_prompt), &prompt, config.temperature))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let latency = replies.iter().map(|r| r.latency).sum();
    let reports = panel
        .iter()
        .zip(replies)
        .map(|(e, r)| ExpertReport {
            expert: e.index,
            text: r.response_text.trim().to_string(),
        })
        .collect();
    Ok((reports, latency))
}

/// Phase two: `rounds` rounds in which every expert addresses one other
/// expert. Each round sees the reports and all earlier rounds.
pub fn debate_rounds(
    experts: &Client,
    panel: &[ExpertSpec],
    item: &McqItem,
    reports: &[ExpertReport],
    config: &MasConfig,
) -> Result<(Vec<DebateRound>, f64), MasError> {
    config.validate()?;
    let reports_block = reports_text(reports, panel);
    let mut rounds: Vec<DebateRound> = Vec::with_capacity(config.rounds);
    let mut latency = 0.0;
    for round in 1..=config.rounds {
        let discussion = discussion_text(&rounds);
        let replies = crate::pool::with_workers(config.workers, || {
            panel
                .par_iter()
                .map(|e| {
                    let prompt = config.templates.debate.render(
                        &question_vars(item)
                            .set("index", e.index.to_string())
                            .set("reports", reports_block.clone())
                            .set("discussion", discussion.clone()),
                    )?;
                    call(experts, Some(&e.persona_prompt), &prompt, config.temperature)
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        latency += replies.iter().map(|r| r.latency).sum::<f64>();
        let utterances = panel
            .iter()
            .zip(replies)
            .map(|(e, r)| parse_utterance(e.index, panel.len(), &r.response_text))
            .collect();
        rounds.push(DebateRound { round, utterances });
    }
    Ok((rounds, latency))
}

/// Reports plus debate rounds for a recruited panel.
pub fn run_debate(
    experts: &Client,
    panel: &[ExpertSpec],
    item: &McqItem,
    config: &MasConfig,
) -> Result<(Vec<ExpertReport>, Vec<DebateRound>), MasError> {
    config.validate()?;
    let (reports, _) = collect_reports(experts, panel, item, config)?;
    let (rounds, _) = debate_rounds(experts, panel, item, &reports, config)?;
    Ok((reports, rounds))
}

/// Asks the moderator for the verdict; falls back to the experts' majority
/// when no answer can be read from its reply.
pub fn moderate(
    moderator: &Client,
    transcript: &DebateTranscript,
    config: &MasConfig,
) -> Result<(Verdict, f64), MasError> {
    let item = &transcript.question;
    let prompt = config.templates.moderator.render(
        &question_vars(item)
            .set("reports", reports_text(&transcript.initial_reports, &transcript.panel))
            .set("discussion", discussion_text(&transcript.rounds)),
    )?;
    let ex = call(moderator, None, &prompt, config.temperature)?;
    let majority = majority_vote(&latest_answers(transcript));
    let verdict = match extract_answer_with_choices(&ex.response_text, &item.choices) {
        Some(answer) => Verdict {
            answer,
            moderator_text: ex.response_text,
            source: VerdictSource::Moderator,
            majority,
        },
        None => Verdict {
            answer: majority.ok_or(MasError::NoVerdict("moderator or the experts"))?,
            moderator_text: ex.response_text,
            source: VerdictSource::MajorityFallback,
            majority,
        },
    };
    Ok((verdict, ex.latency))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasOutcome {
    pub answer: usize,
    pub transcript: DebateTranscript,
    pub ledger: RuntimeLedger,
}

fn stage_failed<'t>(stage: &'static str, transcript: &'t DebateTranscript) -> impl FnOnce(MasError) -> MasError + 't {
    move |e| MasError::Stage {
        stage,
        source: Box::new(e),
        partial: Box::new(transcript.clone()),
    }
}

/// Routes one question through the system.
///
/// The orchestrator makes one triage call that states the difficulty and, for
/// hard questions, lists the panel. Easy questions then take one plain call;
/// hard ones take `k` reports, `k` utterances per round, and one moderator call.
pub fn solve(clients: MasClients<'_>, item: &McqItem, config: &MasConfig) -> Result<MasOutcome, MasError> {
    config.validate()?;
    let mut t = DebateTranscript::new(item);

    let triage_prompt = config
        .templates
        .triage
        .render(&question_vars(item).set("k", config.k.to_string()))?;
    let triage = call(clients.orchestrator, None, &triage_prompt, config.temperature)
        .map_err(stage_failed(STAGE_ORCHESTRATION, &t))?;
    t.add_latency(STAGE_ORCHESTRATION, triage.latency);
    t.difficulty = parse_difficulty(&triage.response_text);

    if t.difficulty == Difficulty::Easy {
        let prompt = config.templates.single.render(&question_vars(item))?;
        let ex = call(clients.experts, None, &prompt, config.temperature).map_err(stage_failed(STAGE_ANSWER, &t))?;
        t.add_latency(STAGE_ANSWER, ex.latency);
        let Some(answer) = extract_answer_with_choices(&ex.response_text, &item.choices) else {
            return Err(stage_failed(STAGE_ANSWER, &t)(MasError::NoVerdict("single-call reply")));
        };
        t.verdict = Some(Verdict {
            answer,
            moderator_text: ex.response_text,
            source: VerdictSource::SingleCall,
            majority: None,
        });
    } else {
        let (panel, latency) = recruit_after(clients.orchestrator, item, config, Some(&triage.response_text))
            .map_err(stage_failed(STAGE_ORCHESTRATION, &t))?;
        t.add_latency(STAGE_ORCHESTRATION, latency);
        t.panel = panel;

        let (reports, latency) =
            collect_reports(clients.experts, &t.panel, item, config).map_err(stage_failed(STAGE_REPORTS, &t))?;
        t.add_latency(STAGE_REPORTS, latency);
        t.initial_reports = reports;

        let (rounds, latency) = debate_rounds(clients.experts, &t.panel, item, &t.initial_reports, config)
            .map_err(stage_failed(STAGE_DEBATE, &t))?;
        t.add_latency(STAGE_DEBATE, latency);
        t.rounds = rounds;

        let (verdict, latency) = moderate(clients.moderator, &t, config).map_err(stage_failed(STAGE_MODERATION, &t))?;
        t.add_latency(STAGE_MODERATION, latency);
        t.verdict = Some(verdict);
    }

    let ledger = RuntimeLedger::from_stages(t.stage_latencies.clone(), config.single_baseline);
    let answer = t.verdict.as_ref().expect("verdict set on both routes").answer;
    Ok(MasOutcome {
        answer,
        transcript: t,
        ledger,
    })
}

/// Letter form of a verdict, for logs.
pub fn verdict_letter(v: &Verdict) -> char {
    index_letter(v.answer)
}
