//! Answer sources for binary questions about triplets.
//!
//! Augmentation asks "is this triplet present in this scan?" and appends a
//! finding according to the answer. Three sources exist: answers derived
//! from reference findings (a triplet absent from the references answers
//! false), answers loaded from a JSONL file (e.g. model or expert output),
//! and a constant answer for baselines.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::triplets::{report_to_triplets, CanonicalMap, Lexicon, Triplet};

/// Identifies one answerable query: a report plus an (entity, position) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnswerKey {
    pub report_id: String,
    pub entity: String,
    pub position: String,
}

#[derive(Debug, Error)]
pub enum OracleError {
    /// An answers JSONL line failed to parse or validate. 1-based.
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    /// Two lines answer the same (id, entity, position).
    #[error("duplicate answer for report '{id}', triplet ('{entity}', '{position}')")]
    DuplicateKey { id: String, entity: String, position: String },
    /// A file-backed source has no answer for the queried key.
    #[error("no answer for report '{id}', triplet ('{entity}', '{position}')")]
    MissingAnswer { id: String, entity: String, position: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where answers to binary triplet questions come from.
#[derive(Debug, Clone)]
pub enum AnswerSource {
    /// Per-report reference triplets; queries answer with the matching
    /// reference's exist flag, or false when no reference matches.
    Reference(HashMap<String, Vec<Triplet>>),
    /// Explicit per-(report, triplet) answers loaded from JSONL.
    File(HashMap<AnswerKey, bool>),
    /// The same answer for every query.
    Constant(bool),
}

impl AnswerSource {
    /// Builds a reference-derived source from a corpus: for each report, the
    /// canonical triplets of its reference findings, merged across regions
    /// in canonical order (first occurrence wins on duplicates).
    pub fn reference_from_corpus(
        corpus: &Corpus,
        lexicon: &Lexicon,
        map: &CanonicalMap,
    ) -> AnswerSource {
        let mut refs = HashMap::new();
        for report in corpus {
            let mut triplets: Vec<Triplet> = Vec::new();
            for region in report.regions() {
                if let Some(text) = report.findings.get(&region) {
                    for t in report_to_triplets(text, lexicon, map) {
                        if !triplets.iter().any(|kept| kept.key() == t.key()) {
                            triplets.push(t);
                        }
                    }
                }
            }
            refs.insert(report.id.clone(), triplets);
        }
        AnswerSource::Reference(refs)
    }

    /// Answers a query for one report. See [`answer`].
    pub fn answer(&self, report_id: &str, query: &Triplet) -> Result<bool, OracleError> {
        match self {
            AnswerSource::Reference(refs) => Ok(refs
                .get(report_id)
                .is_some_and(|triplets| reference_answer(query, triplets))),
            AnswerSource::File(answers) => {
                let key = AnswerKey {
                    report_id: report_id.to_string(),
                    entity: query.entity.clone(),
                    position: query.position.clone(),
                };
                answers.get(&key).copied().ok_or(OracleError::MissingAnswer {
                    id: key.report_id,
                    entity: key.entity,
                    position: key.position,
                })
            }
            AnswerSource::Constant(value) => Ok(*value),
        }
    }
}

/// The labeling rule for reference-derived answers: the first reference
/// sharing the query's entity and position supplies its exist flag; a query
/// matching no reference answers false. The query's own exist flag is
/// ignored.
pub fn reference_answer(query: &Triplet, references: &[Triplet]) -> bool {
    references
        .iter()
        .find(|r| r.key() == query.key())
        .is_some_and(|r| r.exist)
}

/// Answers `query` about `report_id` from the given source.
///
/// Deterministic: the result depends only on the source contents and the
/// query, never on query order. File-backed sources error on unknown keys.
pub fn answer(
    source: &AnswerSource,
    report_id: &str,
    query: &Triplet,
) -> Result<bool, OracleError> {
    source.answer(report_id, query)
}

/// One answers JSONL line.
#[derive(Debug, Serialize, Deserialize)]
struct AnswerLine {
    id: String,
    entity: String,
    position: String,
    answer: bool,
}

/// Reads a file-backed answer source from JSONL.
pub fn read_answers<R: BufRead>(reader: R) -> Result<AnswerSource, OracleError> {
    let mut answers: HashMap<AnswerKey, bool> = HashMap::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnswerLine =
            serde_json::from_str(&line).map_err(|e| OracleError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        if record.id.trim().is_empty() {
            return Err(OracleError::MalformedLine { line: line_no, reason: "empty id".into() });
        }
        let triplet = Triplet::new(&record.entity, &record.position, record.answer).map_err(
            |e| OracleError::MalformedLine { line: line_no, reason: e.to_string() },
        )?;
        let key = AnswerKey {
            report_id: record.id.clone(),
            entity: triplet.entity,
            position: triplet.position,
        };
        if answers.contains_key(&key) {
            return Err(OracleError::DuplicateKey {
                id: key.report_id,
                entity: key.entity,
                position: key.position,
            });
        }
        answers.insert(key, record.answer);
    }
    Ok(AnswerSource::File(answers))
}

/// Loads a file-backed answer source from a JSONL path.
pub fn load_answers(path: impl AsRef<Path>) -> Result<AnswerSource, OracleError> {
    let file = File::open(path.as_ref())?;
    read_answers(BufReader::new(file))
}
