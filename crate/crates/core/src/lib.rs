//! Pipeline toolkit for synthetic nursing MCQ data: taxonomy-driven generation,
//! ROUGE-L decontamination, benchmark evaluation, multi-agent debate, and DARE
//! weight merging. Every model call goes through [`llmclient::Client`], which
//! can target a live OpenAI-compatible endpoint or a deterministic scripted mock.

pub mod cli;
pub mod datamodel;
pub mod decontam;
pub mod evalharness;
pub mod generator;
pub mod llmclient;
pub mod mas;
pub mod merge;
pub mod taxonomy;
pub mod template;

mod pool;
