//! Plain-text prompt templates with `{name}` placeholders.
//!
//! Only `{` + lowercase identifier + `}` is a placeholder, so literal JSON or
//! other braces in a template pass through untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::datamodel::index_letter;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` references `{{{placeholder}}}` but no value was supplied")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("template i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        PromptTemplate {
            name: name.into(),
            body: body.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(PromptTemplate { name, body })
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        placeholder_re()
            .captures_iter(&self.body)
            .map(|c| c.get(1).unwrap().as_str())
            .collect()
    }

    pub fn render(&self, vars: &Vars) -> Result<String, TemplateError> {
        if let Some(missing) = self.placeholders().into_iter().find(|p| !vars.0.contains_key(*p)) {
            return Err(TemplateError::MissingPlaceholder {
                template: self.name.clone(),
                placeholder: missing.to_string(),
            });
        }
        Ok(placeholder_re()
            .replace_all(&self.body, |c: &regex::Captures<'_>| vars.0[&c[1]].clone())
            .into_owned())
    }
}

/// Values for placeholders.
#[derive(Debug, Clone, Default)]
pub struct Vars(BTreeMap<String, String>);

impl Vars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &str, value: impl Into<String>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn insert(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }
}

/// Renders choices as `A. text` lines.
pub fn lettered_choices(choices: &[String]) -> String {
    choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", index_letter(i), c))
        .collect::<Vec<_>>()
        .join("\n")
}

macro_rules! builtin {
    ($fn_name:ident, $file:literal) => {
        pub fn $fn_name() -> PromptTemplate {
            PromptTemplate::new(
                $file.trim_end_matches(".txt"),
                include_str!(concat!("../templates/", $file)),
            )
        }
    };
}

/// Templates shipped with the crate.
pub mod builtin {
    use super::PromptTemplate;

    builtin!(generation, "generation.txt");
    builtin!(nursing_classifier, "nursing_classifier.txt");
    builtin!(reasoning, "reasoning.txt");
    builtin!(evaluation, "evaluation.txt");
    builtin!(mas_triage, "mas_triage.txt");
    builtin!(mas_difficulty, "mas_difficulty.txt");
    builtin!(mas_recruit, "mas_recruit.txt");
    builtin!(mas_persona, "mas_persona.txt");
    builtin!(mas_report, "mas_report.txt");
    builtin!(mas_debate, "mas_debate.txt");
    builtin!(mas_moderator, "mas_moderator.txt");

    pub fn all() -> Vec<PromptTemplate> {
        vec![
            generation(),
            nursing_classifier(),
            reasoning(),
            evaluation(),
            mas_triage(),
            mas_difficulty(),
            mas_recruit(),
            mas_persona(),
            mas_report(),
            mas_debate(),
            mas_moderator(),
        ]
    }
}
