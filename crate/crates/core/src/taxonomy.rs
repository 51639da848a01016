//! The four-level nursing taxonomy (specialization → domain → topic → concept)
//! that seeds every generation slot.
//!
//! Taxonomies are stored as CSV with the columns `Specialization,Domain,Topic,Concept`.
//! The header row is optional. Comparison and counting are case-insensitive, but the
//! original casing is kept for output.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const HEADER: [&str; 4] = ["Specialization", "Domain", "Topic", "Concept"];

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: u64, reason: String },
    #[error("duplicate concept path at line {line} (first seen at line {first_line})")]
    DuplicatePath { line: u64, first_line: u64 },
    #[error("invalid concept path: {0}")]
    InvalidPath(String),
    #[error("taxonomy i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One leaf of the taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptPath {
    pub specialization: String,
    pub domain: String,
    pub topic: String,
    pub concept: String,
}

impl ConceptPath {
    /// Builds a path, trimming every field. Fails if any field is blank.
    pub fn new(
        specialization: impl AsRef<str>,
        domain: impl AsRef<str>,
        topic: impl AsRef<str>,
        concept: impl AsRef<str>,
    ) -> Result<Self, TaxonomyError> {
        let path = ConceptPath {
            specialization: specialization.as_ref().trim().to_string(),
            domain: domain.as_ref().trim().to_string(),
            topic: topic.as_ref().trim().to_string(),
            concept: concept.as_ref().trim().to_string(),
        };
        if let Some(level) = path.first_blank_level() {
            return Err(TaxonomyError::InvalidPath(format!("{level} is empty")));
        }
        Ok(path)
    }

    pub(crate) fn first_blank_level(&self) -> Option<&'static str> {
        self.levels()
            .iter()
            .zip(HEADER)
            .find(|(value, _)| value.trim().is_empty())
            .map(|(_, name)| name)
    }

    pub fn levels(&self) -> [&str; 4] {
        [&self.specialization, &self.domain, &self.topic, &self.concept]
    }

    /// Case-insensitive identity of the path.
    pub fn key(&self) -> PathKey {
        PathKey(self.levels().map(|s| s.trim().to_lowercase()))
    }

    /// Stable hex digest of the case-insensitive key; used to address checkpoints.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for level in self.key().0 {
            hasher.update(level.as_bytes());
            hasher.update([0x1f]);
        }
        hex::encode(&hasher.finalize()[..12])
    }
}

impl fmt::Display for ConceptPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} > {} > {} > {}",
            self.specialization, self.domain, self.topic, self.concept
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathKey([String; 4]);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomySource {
    pub path: Option<PathBuf>,
    /// sha256 of the raw file bytes.
    pub digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub specializations: usize,
    pub domains: usize,
    pub topics: usize,
    pub concepts: usize,
    /// Number of leaf paths (generation slots).
    pub paths: usize,
}

impl LevelCounts {
    pub fn as_tuple(&self) -> (usize, usize, usize, usize) {
        (self.specializations, self.domains, self.topics, self.concepts)
    }
}

impl fmt::Display for LevelCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "specializations={} domains={} topics={} concepts={} paths={}",
            self.specializations, self.domains, self.topics, self.concepts, self.paths
        )
    }
}

/// A row that was dropped by [`Taxonomy::from_reader_skipping_duplicates`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedDuplicate {
    pub line: u64,
    pub first_line: u64,
    pub path: ConceptPath,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    paths: Vec<ConceptPath>,
    source: TaxonomySource,
}

impl Taxonomy {
    /// Builds a taxonomy from in-memory paths, rejecting duplicates.
    pub fn from_paths(paths: Vec<ConceptPath>) -> Result<Self, TaxonomyError> {
        let mut seen = std::collections::HashMap::new();
        for (i, path) in paths.iter().enumerate() {
            if path.first_blank_level().is_some() {
                return Err(TaxonomyError::InvalidPath(path.to_string()));
            }
            let line = i as u64 + 1;
            if let Some(first_line) = seen.insert(path.key(), line) {
                return Err(TaxonomyError::DuplicatePath { line, first_line });
            }
        }
        let mut csv_bytes = Vec::new();
        write_csv(&paths, &mut csv_bytes)?;
        Ok(Taxonomy {
            paths,
            source: TaxonomySource {
                path: None,
                digest: sha256_hex(&csv_bytes),
            },
        })
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, TaxonomyError> {
        let (taxonomy, _) = parse(reader, false)?;
        Ok(taxonomy)
    }

    /// Like [`Taxonomy::from_reader`] but drops repeated 4-tuples instead of failing,
    /// returning what was dropped.
    pub fn from_reader_skipping_duplicates(
        reader: impl Read,
    ) -> Result<(Self, Vec<SkippedDuplicate>), TaxonomyError> {
        parse(reader, true)
    }

    pub fn paths(&self) -> &[ConceptPath] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn source(&self) -> &TaxonomySource {
        &self.source
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ConceptPath> {
        self.paths.iter()
    }

    pub fn summarize(&self) -> LevelCounts {
        summarize(self)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), TaxonomyError> {
        write_csv(&self.paths, writer)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaxonomyError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

impl<'a> IntoIterator for &'a Taxonomy {
    type Item = &'a ConceptPath;
    type IntoIter = std::slice::Iter<'a, ConceptPath>;

    fn into_iter(self) -> Self::IntoIter {
        self.paths.iter()
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let mut taxonomy = Taxonomy::from_reader(bytes.as_slice())?;
    taxonomy.source = TaxonomySource {
        path: Some(path.to_path_buf()),
        digest: sha256_hex(&bytes),
    };
    Ok(taxonomy)
}

pub fn load_taxonomy_skipping_duplicates(
    path: impl AsRef<Path>,
) -> Result<(Taxonomy, Vec<SkippedDuplicate>), TaxonomyError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let (mut taxonomy, skipped) = Taxonomy::from_reader_skipping_duplicates(bytes.as_slice())?;
    taxonomy.source = TaxonomySource {
        path: Some(path.to_path_buf()),
        digest: sha256_hex(&bytes),
    };
    Ok((taxonomy, skipped))
}

/// Distinct case-insensitive values in each column.
pub fn summarize(taxonomy: &Taxonomy) -> LevelCounts {
    let mut levels: [HashSet<String>; 4] = Default::default();
    for path in taxonomy.iter() {
        for (set, value) in levels.iter_mut().zip(path.key().0) {
            set.insert(value);
        }
    }
    LevelCounts {
        specializations: levels[0].len(),
        domains: levels[1].len(),
        topics: levels[2].len(),
        concepts: levels[3].len(),
        paths: taxonomy.len(),
    }
}

fn parse(
    reader: impl Read,
    skip_duplicates: bool,
) -> Result<(Taxonomy, Vec<SkippedDuplicate>), TaxonomyError> {
    let mut bytes = Vec::new();
    let mut reader = reader;
    reader.read_to_end(&mut bytes)?;

    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes.as_slice());

    let mut paths = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (i, record) in csv_reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            match e.into_kind() {
                csv::ErrorKind::Io(io) => TaxonomyError::Io(io),
                other => TaxonomyError::MalformedRecord {
                    line,
                    reason: format!("{other:?}"),
                },
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if i == 0 && record.iter().eq(HEADER.iter().copied()) {
            continue;
        }
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if record.len() != 4 {
            return Err(TaxonomyError::MalformedRecord {
                line,
                reason: format!("expected 4 columns, found {}", record.len()),
            });
        }
        let path = ConceptPath::new(&record[0], &record[1], &record[2], &record[3]).map_err(
            |e| TaxonomyError::MalformedRecord {
                line,
                reason: e.to_string(),
            },
        )?;
        match seen.get(&path.key()) {
            Some(&first_line) if skip_duplicates => skipped.push(SkippedDuplicate {
                line,
                first_line,
                path,
            }),
            Some(&first_line) => return Err(TaxonomyError::DuplicatePath { line, first_line }),
            None => {
                seen.insert(path.key(), line);
                paths.push(path);
            }
        }
    }

    Ok((
        Taxonomy {
            paths,
            source: TaxonomySource {
                path: None,
                digest: sha256_hex(&bytes),
            },
        },
        skipped,
    ))
}

fn write_csv(paths: &[ConceptPath], writer: impl Write) -> Result<(), TaxonomyError> {
    let mut w = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| TaxonomyError::Io(std::io::Error::other(e));
    w.write_record(HEADER).map_err(to_io)?;
    for p in paths {
        w.write_record(p.levels()).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Taxonomy, TaxonomyError> {
        Taxonomy::from_reader(text.as_bytes())
    }

    #[test]
    fn lochia_row_is_loaded() {
        let tax = load(
            "Specialization,Domain,Topic,Concept\n\
             Special Domains of Nursing,Obstetric and Neonatal Care,Postpartum,lochia types\n",
        )
        .unwrap();
        assert_eq!(tax.len(), 1);
        let p = &tax.paths()[0];
        assert_eq!(p.specialization, "Special Domains of Nursing");
        assert_eq!(p.domain, "Obstetric and Neonatal Care");
        assert_eq!(p.topic, "Postpartum");
        assert_eq!(p.concept, "lochia types");
    }

    #[test]
    fn header_only_is_empty() {
        let tax = load("Specialization,Domain,Topic,Concept\n").unwrap();
        assert!(tax.is_empty());
        assert_eq!(tax.summarize().as_tuple(), (0, 0, 0, 0));
    }

    #[test]
    fn header_is_optional_and_fields_trimmed() {
        let tax = load("  A , B,C ,  D\n").unwrap();
        assert_eq!(tax.paths()[0].levels(), ["A", "B", "C", "D"]);
    }

    #[test]
    fn repeated_row_is_duplicate() {
        let err = load("a,b,c,d\nx,y,z,w\nA,B,C,D\n").unwrap_err();
        assert!(matches!(
            err,
            TaxonomyError::DuplicatePath {
                line: 3,
                first_line: 1
            }
        ));
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let err = load("Specialization,Domain,Topic,Concept\na,b,c,d\na,b,c\n").unwrap_err();
        assert!(matches!(err, TaxonomyError::MalformedRecord { line: 3, .. }));
    }

    #[test]
    fn blank_field_is_malformed() {
        let err = load("a,b, ,d\n").unwrap_err();
        assert!(matches!(err, TaxonomyError::MalformedRecord { line: 1, .. }));
    }

    #[test]
    fn counting_definition() {
        let single = load("a,b,c,d\n").unwrap();
        assert_eq!(single.summarize().as_tuple(), (1, 1, 1, 1));
        let two = load("S,D,T1,C1\nS,D,T2,C2\n").unwrap();
        assert_eq!(two.summarize().as_tuple(), (1, 1, 2, 2));
        let casing = load("S,D,Care management,C1\ns,d,care Management,C2\n").unwrap();
        assert_eq!(casing.summarize().as_tuple(), (1, 1, 1, 2));
    }

    #[test]
    fn skipping_duplicates_reports_them() {
        let (tax, skipped) =
            Taxonomy::from_reader_skipping_duplicates("a,b,c,d\nx,y,z,w\na,b,c,d\n".as_bytes())
                .unwrap();
        assert_eq!(tax.len(), 2);
        assert_eq!(skipped.len(), 1);
        assert_eq!((skipped[0].line, skipped[0].first_line), (3, 1));
    }

    #[test]
    fn quoted_fields_with_commas() {
        let tax = load("S,D,\"Cancer screenings (e.g., mammograms)\",c\n").unwrap();
        assert_eq!(tax.paths()[0].topic, "Cancer screenings (e.g., mammograms)");
    }

    #[test]
    fn digest_is_case_insensitive() {
        let a = ConceptPath::new("A", "B", "C", "D").unwrap();
        let b = ConceptPath::new("a", "b", "c", "d").unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), ConceptPath::new("a", "b", "c", "e").unwrap().digest());
    }
}
