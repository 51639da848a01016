//! Scripted backend for tests and offline runs.
//!
//! Rules are tried in order against the request's prompt text (all message
//! contents joined by newlines); the first match decides the reply.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde::Deserialize;

use super::{Backend, ChatRequest, Stopwatch, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Transient,
    Auth,
    Malformed,
}

type PredicateFn = dyn Fn(&str) -> bool + Send + Sync;
type ResponderFn = dyn Fn(&str) -> Response + Send + Sync;

#[derive(Clone)]
pub enum Matcher {
    Any,
    Contains(String),
    Regex(Regex),
    Predicate(Arc<PredicateFn>),
}

impl Matcher {
    pub fn contains(s: impl Into<String>) -> Self {
        Matcher::Contains(s.into())
    }

    pub fn regex(pattern: &str) -> Result<Self, regex::Error> {
        Regex::new(pattern).map(Matcher::Regex)
    }

    pub fn predicate(f: impl Fn(&str) -> bool + Send + Sync + 'static) -> Self {
        Matcher::Predicate(Arc::new(f))
    }

    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::Regex(re) => re.is_match(prompt),
            Matcher::Predicate(f) => f(prompt),
        }
    }
}

impl std::fmt::Debug for Matcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Matcher::Any => f.write_str("Any"),
            Matcher::Contains(s) => write!(f, "Contains({s:?})"),
            Matcher::Regex(re) => write!(f, "Regex({:?})", re.as_str()),
            Matcher::Predicate(_) => f.write_str("Predicate(..)"),
        }
    }
}

#[derive(Clone)]
pub enum Response {
    /// Reply text. With a regex matcher, `$1` / `${name}` expand to captures.
    Text(String),
    Fail(FailureKind),
    /// Successive calls walk the list; the last entry repeats.
    Sequence(Vec<Response>),
    Dynamic(Arc<ResponderFn>),
}

impl Response {
    pub fn text(s: impl Into<String>) -> Self {
        Response::Text(s.into())
    }

    pub fn dynamic(f: impl Fn(&str) -> Response + Send + Sync + 'static) -> Self {
        Response::Dynamic(Arc::new(f))
    }
}

impl std::fmt::Debug for Response {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Response::Text(s) => write!(f, "Text({s:?})"),
            Response::Fail(k) => write!(f, "Fail({k:?})"),
            Response::Sequence(v) => f.debug_tuple("Sequence").field(v).finish(),
            Response::Dynamic(_) => f.write_str("Dynamic(..)"),
        }
    }
}

#[derive(Debug)]
pub struct Rule {
    matcher: Matcher,
    response: Response,
    latency: f64,
    hits: AtomicUsize,
}

impl Rule {
    pub fn new(matcher: Matcher, response: Response) -> Self {
        Rule {
            matcher,
            response,
            latency: 0.0,
            hits: AtomicUsize::new(0),
        }
    }

    /// Synthetic latency slept on the caller's clock before replying.
    pub fn with_latency(mut self, secs: f64) -> Self {
        self.latency = secs.max(0.0);
        self
    }
}

#[derive(Debug, Default)]
pub struct MockScript {
    rules: Vec<Rule>,
    default: Option<(Response, f64)>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, rule: Rule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn when(self, matcher: Matcher, response: Response) -> Self {
        self.rule(Rule::new(matcher, response))
    }

    pub fn default_reply(mut self, response: Response) -> Self {
        self.default = Some((response, 0.0));
        self
    }

    pub fn default_with_latency(mut self, response: Response, secs: f64) -> Self {
        self.default = Some((response, secs.max(0.0)));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty() && self.default.is_none()
    }

    /// Loads a TOML script (see the `script_file` tests for the format).
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        let file: ScriptFile = toml::from_str(text).map_err(|e| e.to_string())?;
        file.into_script()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml_str(&text)
    }
}

/// Builds a mock backend. Fails if the script has neither rules nor a default.
pub fn script_mock(id: impl Into<String>, script: MockScript) -> Result<MockBackend, String> {
    if script.is_empty() {
        return Err("mock script needs at least one rule or a default reply".into());
    }
    Ok(MockBackend::new(id, script))
}

#[derive(Debug)]
pub struct MockBackend {
    id: String,
    model: String,
    script: MockScript,
    default_hits: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl MockBackend {
    pub fn new(id: impl Into<String>, script: MockScript) -> Self {
        let id = id.into();
        MockBackend {
            model: format!("mock:{id}"),
            id,
            script,
            default_hits: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Shorthand for a mock that always answers `text`.
    pub fn constant(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(id, MockScript::new().default_reply(Response::text(text)))
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    /// Prompt texts in call order.
    pub fn calls(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }
}

fn resolve(
    response: &Response,
    hit: usize,
    prompt: &str,
    captures: Option<&regex::Captures<'_>>,
) -> Result<String, TransportError> {
    match response {
        Response::Text(t) => Ok(match captures {
            Some(caps) => {
                let mut out = String::new();
                caps.expand(t, &mut out);
                out
            }
            None => t.clone(),
        }),
        Response::Fail(kind) => Err(match kind {
            FailureKind::Transient => TransportError::Transient("scripted transient failure".into()),
            FailureKind::Auth => TransportError::Auth("scripted credential rejection".into()),
            FailureKind::Malformed => TransportError::Malformed("scripted malformed reply".into()),
        }),
        Response::Sequence(items) => match items.get(hit).or(items.last()) {
            Some(r) => resolve(r, 0, prompt, captures),
            None => Err(TransportError::Malformed("empty response sequence".into())),
        },
        Response::Dynamic(f) => resolve(&f(prompt), hit, prompt, captures),
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn send(&self, request: &ChatRequest, sw: &mut Stopwatch<'_>) -> Result<String, TransportError> {
        let prompt = request.prompt_text();
        self.log.lock().unwrap().push(prompt.clone());

        for rule in &self.script.rules {
            if !rule.matcher.matches(&prompt) {
                continue;
            }
            let hit = rule.hits.fetch_add(1, Ordering::SeqCst);
            sw.sleep(rule.latency);
            let caps = match &rule.matcher {
                Matcher::Regex(re) => re.captures(&prompt),
                _ => None,
            };
            return resolve(&rule.response, hit, &prompt, caps.as_ref());
        }
        match &self.script.default {
            Some((response, latency)) => {
                let hit = self.default_hits.fetch_add(1, Ordering::SeqCst);
                sw.sleep(*latency);
                resolve(response, hit, &prompt, None)
            }
            None => Err(TransportError::NoRuleMatched),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    default: Option<String>,
    #[serde(default)]
    default_latency_s: f64,
    #[serde(default, rename = "rule")]
    rules: Vec<RuleFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    contains: Option<String>,
    regex: Option<String>,
    reply: Option<String>,
    replies: Option<Vec<String>>,
    fail: Option<FailureKind>,
    #[serde(default)]
    latency_s: f64,
}

const FAIL_PREFIX: &str = "!fail:";

fn parse_entry(s: &str) -> Result<Response, String> {
    match s.strip_prefix(FAIL_PREFIX) {
        Some(kind) => match kind.trim() {
            "transient" => Ok(Response::Fail(FailureKind::Transient)),
            "auth" => Ok(Response::Fail(FailureKind::Auth)),
            "malformed" => Ok(Response::Fail(FailureKind::Malformed)),
            other => Err(format!("unknown failure kind `{other}`")),
        },
        None => Ok(Response::Text(s.to_string())),
    }
}

impl ScriptFile {
    fn into_script(self) -> Result<MockScript, String> {
        let mut script = MockScript::new();
        for (i, r) in self.rules.into_iter().enumerate() {
            let matcher = match (r.contains, r.regex) {
                (Some(_), Some(_)) => return Err(format!("rule {i}: both `contains` and `regex`")),
                (Some(c), None) => Matcher::Contains(c),
                (None, Some(re)) => Matcher::regex(&re).map_err(|e| format!("rule {i}: {e}"))?,
                (None, None) => Matcher::Any,
            };
            let response = match (r.reply, r.replies, r.fail) {
                (Some(t), None, None) => parse_entry(&t)?,
                (None, Some(list), None) => Response::Sequence(
                    list.iter().map(|s| parse_entry(s)).collect::<Result<_, _>>()?,
                ),
                (None, None, Some(kind)) => Response::Fail(kind),
                _ => return Err(format!("rule {i}: exactly one of reply/replies/fail required")),
            };
            script = script.rule(Rule::new(matcher, response).with_latency(r.latency_s));
        }
        if let Some(d) = self.default {
            script = script.default_with_latency(parse_entry(&d)?, self.default_latency_s);
        }
        if script.is_empty() {
            return Err("mock script needs at least one rule or a default reply".into());
        }
        Ok(script)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llmclient::{ChatRequest, ManualClock};

    fn send(mock: &MockBackend, text: &str) -> Result<String, TransportError> {
        let clock = ManualClock::new();
        let mut sw = Stopwatch::start(&clock);
        mock.send(&ChatRequest::user("m", text), &mut sw)
    }

    #[test]
    fn first_matching_rule_wins() {
        let mock = MockBackend::new(
            "m",
            MockScript::new()
                .when(Matcher::contains("nurse"), Response::text("first"))
                .when(Matcher::contains("client"), Response::text("second")),
        );
        assert_eq!(send(&mock, "the nurse and the client").unwrap(), "first");
        assert_eq!(send(&mock, "the client").unwrap(), "second");
    }

    #[test]
    fn default_only() {
        let mock = MockBackend::constant("m", "X");
        for p in ["a", "b", ""] {
            assert_eq!(send(&mock, p).unwrap(), "X");
        }
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn no_rule_matched() {
        let mock = MockBackend::new(
            "m",
            MockScript::new().when(Matcher::contains("x"), Response::text("y")),
        );
        assert!(matches!(send(&mock, "zzz"), Err(TransportError::NoRuleMatched)));
        assert!(script_mock("m", MockScript::new()).is_err());
    }

    #[test]
    fn sequence_repeats_last() {
        let mock = MockBackend::new(
            "m",
            MockScript::new().default_reply(Response::Sequence(vec![
                Response::Fail(FailureKind::Transient),
                Response::text("ok"),
            ])),
        );
        assert!(send(&mock, "a").is_err());
        assert_eq!(send(&mock, "a").unwrap(), "ok");
        assert_eq!(send(&mock, "a").unwrap(), "ok");
    }

    #[test]
    fn regex_captures_expand() {
        let mock = MockBackend::new(
            "m",
            MockScript::new().when(
                Matcher::regex(r"Concept: (?P<c>[^\n]+)").unwrap(),
                Response::text("about ${c}"),
            ),
        );
        assert_eq!(send(&mock, "Topic: x\nConcept: lochia types\n").unwrap(), "about lochia types");
    }

    #[test]
    fn script_file() {
        let script = MockScript::from_toml_str(
            r#"
            default = "fallback"
            [[rule]]
            contains = "difficulty"
            reply = "easy"
            latency_s = 0.5
            [[rule]]
            regex = "flaky"
            replies = ["!fail:transient", "fine"]
            [[rule]]
            contains = "locked"
            fail = "auth"
            "#,
        )
        .unwrap();
        let mock = MockBackend::new("m", script);
        assert_eq!(send(&mock, "rate the difficulty").unwrap(), "easy");
        assert!(matches!(send(&mock, "flaky"), Err(TransportError::Transient(_))));
        assert_eq!(send(&mock, "flaky").unwrap(), "fine");
        assert!(matches!(send(&mock, "locked"), Err(TransportError::Auth(_))));
        assert_eq!(send(&mock, "other").unwrap(), "fallback");

        assert!(MockScript::from_toml_str("").is_err());
        assert!(MockScript::from_toml_str("[[rule]]\ncontains='a'\nreply='b'\nfail='auth'").is_err());
    }
}
