//! Accuracy tables: one row per model, one column per benchmark or category.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EvalReport;

/// Column order for the MultiMedQA sub-datasets.
pub const MULTIMEDQA_CATEGORIES: [&str; 9] = [
    "Clinical KG",
    "Medical Genetics",
    "Anatomy",
    "Pro Medicine",
    "College Biology",
    "College Medicine",
    "MedQA 4 opts",
    "PubMedQA",
    "MedMCQA",
];

pub const AVG_COLUMN: &str = "Avg.";

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("model `{model}` covers categories {found:?}, expected {expected:?}")]
    CategoryMismatch {
        model: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("two reports for model `{model}` on `{benchmark}`")]
    DuplicateCell { model: String, benchmark: String },
    #[error("no reports to format")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Columns are whole benchmarks; models may miss some.
    PerBenchmark,
    /// Columns are sub-dataset categories, preceded by their unweighted mean.
    PerCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    /// Mean of the present cells (the Avg. column in per-category layout).
    pub avg: f64,
    /// Accuracies in [0, 1], aligned with `ReportTable::columns`.
    pub cells: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub layout: Layout,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// Percent with two decimals: `0.7601 → "76.01"`.
pub fn percent(accuracy: f64) -> String {
    format!("{:.2}", accuracy * 100.0)
}

/// Builds the table. Rows are sorted by mean accuracy, best first, unless
/// `row_order` pins them; columns follow `column_order`, else the MultiMedQA
/// order when the categories are drawn from it, else first appearance.
pub fn format_report(
    reports: &[EvalReport],
    layout: Layout,
    row_order: Option<&[String]>,
    column_order: Option<&[String]>,
) -> Result<ReportTable, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }

    let mut by_model: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    for r in reports {
        if !first_seen.contains(&r.benchmark_name.as_str()) {
            first_seen.push(&r.benchmark_name);
        }
        let cells = by_model.entry(&r.model_id).or_default();
        if cells.insert(&r.benchmark_name, r.accuracy).is_some() {
            return Err(ReportError::DuplicateCell {
                model: r.model_id.clone(),
                benchmark: r.benchmark_name.clone(),
            });
        }
    }

    let universe: BTreeSet<&str> = first_seen.iter().copied().collect();
    let columns: Vec<String> = match column_order {
        Some(order) => order.to_vec(),
        None if universe.iter().all(|c| MULTIMEDQA_CATEGORIES.contains(c)) => MULTIMEDQA_CATEGORIES
            .iter()
            .filter(|c| universe.contains(*c))
            .map(|c| c.to_string())
            .collect(),
        None => first_seen.iter().map(|s| s.to_string()).collect(),
    };

    if layout == Layout::PerCategory {
        let expected: BTreeSet<&str> = columns.iter().map(String::as_str).collect();
        for (model, cells) in &by_model {
            let found: BTreeSet<&str> = cells.keys().copied().collect();
            if found != expected {
                return Err(ReportError::CategoryMismatch {
                    model: model.to_string(),
                    expected: expected.iter().map(|s| s.to_string()).collect(),
                    found: found.iter().map(|s| s.to_string()).collect(),
                });
            }
        }
    }

    let mut rows: Vec<ReportRow> = by_model
        .iter()
        .map(|(model, cells)| {
            let cells: Vec<Option<f64>> = columns.iter().map(|c| cells.get(c.as_str()).copied()).collect();
            let present: Vec<f64> = cells.iter().flatten().copied().collect();
            let avg = if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            };
            ReportRow {
                model: model.to_string(),
                avg,
                cells,
            }
        })
        .collect();

    match row_order {
        Some(order) => rows.sort_by_key(|r| order.iter().position(|m| *m == r.model).unwrap_or(usize::MAX)),
        None => rows.sort_by(|a, b| b.avg.total_cmp(&a.avg).then_with(|| a.model.cmp(&b.model))),
    }

    Ok(ReportTable {
        layout,
        columns,
        rows,
    })
}

impl ReportTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["Model".to_string()];
        if self.layout == Layout::PerCategory {
            h.push(AVG_COLUMN.to_string());
        }
        h.extend(self.columns.iter().cloned());
        h
    }

    fn text_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut out = vec![r.model.clone()];
                if self.layout == Layout::PerCategory {
                    out.push(percent(r.avg));
                }
                out.extend(r.cells.iter().map(|c| c.map_or_else(|| "-".to_string(), percent)));
                out
            })
            .collect()
    }

    pub fn render(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Markdown => self.to_markdown(),
            TableFormat::Csv => self.to_csv(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        for row in self.text_rows() {
            let _ = writeln!(out, "| {} |", row.join(" | "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory csv");
        for row in self.text_rows() {
            w.write_record(row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }
}
