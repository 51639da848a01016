//! Two-step decontamination of generated MCQs.
//!
//! 1. A candidate is rejected if its question is too similar to any question in
//!    the test benchmarks.
//! 2. Survivors are processed in input order and rejected if too similar to a
//!    question already kept for the same concept.
//!
//! Similarity is ROUGE-L F1 over question tokens. Both steps prune with an
//! inverted token index and the bound `LCS <= min(multiset overlap, |a|, |b|)`;
//! pruning never changes a result.

mod rouge;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Benchmark, Corpus, McqItem};
use crate::taxonomy::PathKey;

pub use rouge::{f1, lcs_len, rouge_l, score_tokens, tokenize, SimilarityScore};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DecontamError {
    #[error("candidate `{0}` has no concept path")]
    MissingConceptPath(String),
    #[error("threshold {0} must be in (0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Reject when score >= threshold.
    #[default]
    AtLeast,
    /// Reject when score > threshold.
    Exceeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecontamConfig {
    pub threshold: f64,
    pub mode: ThresholdMode,
}

impl Default for DecontamConfig {
    fn default() -> Self {
        DecontamConfig {
            threshold: DEFAULT_THRESHOLD,
            mode: ThresholdMode::AtLeast,
        }
    }
}

impl DecontamConfig {
    pub fn new(threshold: f64) -> Result<Self, DecontamError> {
        let c = DecontamConfig {
            threshold,
            ..Self::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), DecontamError> {
        if self.threshold > 0.0 && self.threshold <= 1.0 {
            Ok(())
        } else {
            Err(DecontamError::InvalidThreshold(self.threshold))
        }
    }

    pub fn rejects(&self, value: f64) -> bool {
        match self.mode {
            ThresholdMode::AtLeast => value >= self.threshold,
            ThresholdMode::Exceeds => value > self.threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Kept,
    RejectedTestset,
    RejectedPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecontamDecision {
    pub item_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<SimilarityScore>,
}

impl DecontamDecision {
    fn kept(id: &str) -> Self {
        DecontamDecision {
            item_id: id.to_string(),
            verdict: Verdict::Kept,
            matched_id: None,
            score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecontamOutcome {
    pub kept: Vec<McqItem>,
    /// One decision per candidate, in input order.
    pub decisions: Vec<DecontamDecision>,
}

impl DecontamOutcome {
    pub fn count(&self, verdict: Verdict) -> usize {
        self.decisions.iter().filter(|d| d.verdict == verdict).count()
    }
}

/// Maps token strings to dense ids so comparisons work on `u32`s.
#[derive(Debug, Default)]
struct Vocab(HashMap<String, u32>);

impl Vocab {
    fn encode(&mut self, text: &str) -> Vec<u32> {
        tokenize(text)
            .into_iter()
            .map(|t| {
                let next = self.0.len() as u32;
                *self.0.entry(t).or_insert(next)
            })
            .collect()
    }
}

fn token_counts(tokens: &[u32]) -> HashMap<u32, u32> {
    let mut counts = HashMap::new();
    for &t in tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
struct Match {
    doc: usize,
    score: SimilarityScore,
}

/// Inverted index over token-id documents.
#[derive(Debug, Default)]
struct SimilarityIndex {
    docs: Vec<Vec<u32>>,
    postings: HashMap<u32, Vec<(u32, u32)>>,
    empty_docs: Vec<usize>,
}

impl SimilarityIndex {
    fn add(&mut self, tokens: Vec<u32>) -> usize {
        let doc = self.docs.len();
        if tokens.is_empty() {
            self.empty_docs.push(doc);
        }
        for (tok, count) in token_counts(&tokens) {
            self.postings.entry(tok).or_default().push((doc as u32, count));
        }
        self.docs.push(tokens);
        doc
    }

    /// Highest-scoring rejecting document for `query`; ties go to the earliest document.
    fn best_match(&self, query: &[u32], config: &DecontamConfig) -> Option<Match> {
        if query.is_empty() {
            // Only another empty document can score above zero.
            return self.empty_docs.first().map(|&doc| Match {
                doc,
                score: SimilarityScore::from_counts(0, 0, 0),
            });
        }

        let mut overlap: HashMap<u32, u32> = HashMap::new();
        for (tok, qcount) in token_counts(query) {
            if let Some(list) = self.postings.get(&tok) {
                for &(doc, dcount) in list {
                    *overlap.entry(doc).or_insert(0) += qcount.min(dcount);
                }
            }
        }
        let mut candidates: Vec<(u32, u32)> = overlap.into_iter().collect();
        candidates.sort_unstable_by_key(|&(doc, _)| doc);

        let mut best: Option<Match> = None;
        for (doc, shared) in candidates {
            let reference = &self.docs[doc as usize];
            let upper = f1(shared as usize, query.len(), reference.len());
            if !config.rejects(upper) {
                continue;
            }
            if best.as_ref().is_some_and(|b| upper <= b.score.value) {
                continue;
            }
            let score = score_tokens(query, reference);
            if config.rejects(score.value) && best.as_ref().is_none_or(|b| score.value > b.score.value) {
                best = Some(Match {
                    doc: doc as usize,
                    score,
                });
            }
        }
        best
    }
}

/// Runs both steps over `candidates` (in order) against the questions of `test_sets`.
pub fn decontaminate_items(
    candidates: &[McqItem],
    test_sets: &[Benchmark],
    config: &DecontamConfig,
) -> Result<DecontamOutcome, DecontamError> {
    config.validate()?;
    let mut concept_of: Vec<PathKey> = Vec::with_capacity(candidates.len());
    for c in candidates {
        match &c.path {
            Some(p) => concept_of.push(p.key()),
            None => return Err(DecontamError::MissingConceptPath(c.id.clone())),
        }
    }

    let mut vocab = Vocab::default();
    let mut test_index = SimilarityIndex::default();
    let mut test_ids = Vec::new();
    for item in test_sets.iter().flat_map(|b| &b.items) {
        test_index.add(vocab.encode(&item.question));
        test_ids.push(item.id.as_str());
    }
    let cand_tokens: Vec<Vec<u32>> = candidates.iter().map(|c| vocab.encode(&c.question)).collect();

    // Step 1: independent per candidate.
    let step1: Vec<Option<Match>> = cand_tokens
        .par_iter()
        .map(|tokens| test_index.best_match(tokens, config))
        .collect();

    let mut decisions: Vec<Option<DecontamDecision>> = vec![None; candidates.len()];
    let mut groups: HashMap<&PathKey, Vec<usize>> = HashMap::new();
    for (i, hit) in step1.into_iter().enumerate() {
        match hit {
            Some(m) => {
                decisions[i] = Some(DecontamDecision {
                    item_id: candidates[i].id.clone(),
                    verdict: Verdict::RejectedTestset,
                    matched_id: Some(test_ids[m.doc].to_string()),
                    score: Some(m.score),
                })
            }
            None => groups.entry(&concept_of[i]).or_default().push(i),
        }
    }

    // Step 2: sequential within a concept, concepts in parallel.
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_unstable_by_key(|g| g[0]);
    let step2: Vec<Vec<(usize, DecontamDecision)>> = groups
        .par_iter()
        .map(|members| {
            let mut pool = SimilarityIndex::default();
            let mut pool_items: Vec<usize> = Vec::new();
            members
                .iter()
                .map(|&i| {
                    let decision = match pool.best_match(&cand_tokens[i], config) {
                        Some(m) => DecontamDecision {
                            item_id: candidates[i].id.clone(),
                            verdict: Verdict::RejectedPool,
                            matched_id: Some(candidates[pool_items[m.doc]].id.clone()),
                            score: Some(m.score),
                        },
                        None => {
                            pool.add(cand_tokens[i].clone());
                            pool_items.push(i);
                            DecontamDecision::kept(&candidates[i].id)
                        }
                    };
                    (i, decision)
                })
                .collect()
        })
        .collect();
    for (i, d) in step2.into_iter().flatten() {
        decisions[i] = Some(d);
    }

    let decisions: Vec<DecontamDecision> = decisions
        .into_iter()
        .map(|d| d.expect("every candidate gets a decision"))
        .collect();
    let kept = candidates
        .iter()
        .zip(&decisions)
        .filter(|(_, d)| d.verdict == Verdict::Kept)
        .map(|(c, _)| c.clone())
        .collect();
    Ok(DecontamOutcome { kept, decisions })
}

pub fn decontaminate(
    candidates: &Corpus,
    test_sets: &[Benchmark],
    config: &DecontamConfig,
) -> Result<(Corpus, Vec<DecontamDecision>), DecontamError> {
    let outcome = decontaminate_items(candidates.items(), test_sets, config)?;
    let kept = Corpus::new(candidates.name.clone(), outcome.kept)
        .expect("subset of a valid corpus is valid");
    Ok((kept, outcome.decisions))
}
