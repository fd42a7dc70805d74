//! Report corpora: multi-region CT report records with JSONL persistence.
//!
//! A corpus is an ordered collection of [`Report`]s, each holding reference
//! findings and optional machine-generated text per body region. On disk a
//! corpus is JSONL: one object per (report, region) pair, so a report spans
//! as many lines as it has regions. Lines sharing an `id` are merged on load.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Body region a report section describes.
///
/// The derived ordering (chest < abdomen < pelvis) is the canonical emission
/// order for serialized corpora and metric reports.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Chest,
    Abdomen,
    Pelvis,
}

impl Region {
    /// All regions in canonical order.
    pub const ALL: [Region; 3] = [Region::Chest, Region::Abdomen, Region::Pelvis];

    /// Lowercase name used in serialized payloads.
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Chest => "chest",
            Region::Abdomen => "abdomen",
            Region::Pelvis => "pelvis",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chest" => Ok(Region::Chest),
            "abdomen" => Ok(Region::Abdomen),
            "pelvis" => Ok(Region::Pelvis),
            other => Err(format!("unknown region '{other}'")),
        }
    }
}

/// One report: reference findings and optional generated text per region.
///
/// Texts are stored verbatim. A report is only valid inside a corpus when it
/// has a non-empty id and at least one region carrying text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub id: String,
    /// Reference findings per region.
    pub findings: BTreeMap<Region, String>,
    /// Machine-generated text per region, where available.
    pub generated: BTreeMap<Region, String>,
}

impl Report {
    pub fn new(id: impl Into<String>) -> Self {
        Report {
            id: id.into(),
            findings: BTreeMap::new(),
            generated: BTreeMap::new(),
        }
    }

    /// Regions present in either map, in canonical order.
    pub fn regions(&self) -> Vec<Region> {
        Region::ALL
            .into_iter()
            .filter(|r| self.findings.contains_key(r) || self.generated.contains_key(r))
            .collect()
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.id.trim().is_empty() {
            return Err(CorpusError::InvalidReport {
                id: self.id.clone(),
                reason: "empty id".into(),
            });
        }
        if self.regions().is_empty() {
            return Err(CorpusError::InvalidReport {
                id: self.id.clone(),
                reason: "no region carries any text".into(),
            });
        }
        for text in self.findings.values().chain(self.generated.values()) {
            if text.trim().is_empty() {
                return Err(CorpusError::InvalidReport {
                    id: self.id.clone(),
                    reason: "region text is empty after trimming".into(),
                });
            }
        }
        Ok(())
    }
}

/// Ordered collection of reports with unique ids.
///
/// Iteration order equals construction (file) order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    reports: Vec<Report>,
}

impl Corpus {
    /// Builds a corpus, validating id uniqueness and per-report invariants.
    pub fn from_reports(reports: Vec<Report>) -> Result<Self, CorpusError> {
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for report in &reports {
            report.validate()?;
            if seen.insert(report.id.as_str(), ()).is_some() {
                return Err(CorpusError::InvalidReport {
                    id: report.id.clone(),
                    reason: "duplicate report id".into(),
                });
            }
        }
        Ok(Corpus { reports })
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn into_reports(self) -> Vec<Report> {
        self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Report> {
        self.reports.iter().find(|r| r.id == id)
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Report;
    type IntoIter = std::slice::Iter<'a, Report>;

    fn into_iter(self) -> Self::IntoIter {
        self.reports.iter()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    /// Line is not a valid corpus record (bad JSON, unknown region, empty or
    /// missing text fields). Line numbers are 1-based.
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    /// Two lines define the same (id, region) pair.
    #[error("report '{id}' repeats region '{region}'")]
    DuplicateRegion { id: String, region: Region },
    /// The corpus holds no records.
    #[error("corpus is empty")]
    EmptyCorpus,
    /// A programmatically built report violates corpus invariants.
    #[error("invalid report '{id}': {reason}")]
    InvalidReport { id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One serialized (report, region) line. Unknown fields are ignored on read.
#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    region: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    findings: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generated: Option<String>,
}

/// Reads a JSONL corpus from any buffered reader.
///
/// Lines sharing an id are merged into one report; report order follows first
/// occurrence. Whitespace-only lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut reports: Vec<Report> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut records = 0usize;

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RecordLine =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        validate_record(&record, line_no)?;
        records += 1;

        let idx = match index.get(&record.id) {
            Some(&i) => i,
            None => {
                reports.push(Report::new(record.id.clone()));
                index.insert(record.id.clone(), reports.len() - 1);
                reports.len() - 1
            }
        };
        let report = &mut reports[idx];
        if report.findings.contains_key(&record.region)
            || report.generated.contains_key(&record.region)
        {
            return Err(CorpusError::DuplicateRegion {
                id: record.id,
                region: record.region,
            });
        }
        if let Some(text) = record.findings {
            report.findings.insert(record.region, text);
        }
        if let Some(text) = record.generated {
            report.generated.insert(record.region, text);
        }
    }

    if records == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(Corpus { reports })
}

fn validate_record(record: &RecordLine, line_no: usize) -> Result<(), CorpusError> {
    let malformed = |reason: &str| CorpusError::MalformedLine {
        line: line_no,
        reason: reason.to_string(),
    };
    if record.id.trim().is_empty() {
        return Err(malformed("empty id"));
    }
    if record.findings.is_none() && record.generated.is_none() {
        return Err(malformed("record carries neither findings nor generated text"));
    }
    if let Some(t) = &record.findings {
        if t.trim().is_empty() {
            return Err(malformed("findings text is empty after trimming"));
        }
    }
    if let Some(t) = &record.generated {
        if t.trim().is_empty() {
            return Err(malformed("generated text is empty after trimming"));
        }
    }
    Ok(())
}

/// Loads a JSONL corpus from a file path.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = File::open(path.as_ref())?;
    read_corpus(BufReader::new(file))
}

/// Writes a corpus to any writer, one line per (report, region) pair.
///
/// Regions are emitted in canonical order (chest, abdomen, pelvis), reports
/// in corpus order. Refuses empty corpora so a written file always loads
/// back. Output is byte-deterministic for a given corpus.
pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut writer: W) -> Result<(), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    for report in corpus {
        report.validate()?;
        for region in report.regions() {
            let record = RecordLine {
                id: report.id.clone(),
                region,
                findings: report.findings.get(&region).cloned(),
                generated: report.generated.get(&region).cloned(),
            };
            let line = serde_json::to_string(&record)
                .expect("corpus record serialization cannot fail");
            writeln!(writer, "{line}")?;
        }
    }
    Ok(())
}

/// Writes a corpus to a file path. UTF-8, LF line endings.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    write_corpus_to(corpus, &mut writer)?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(s: &str) -> Result<Corpus, CorpusError> {
        read_corpus(s.as_bytes())
    }

    fn write_str(corpus: &Corpus) -> String {
        let mut buf = Vec::new();
        write_corpus_to(corpus, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn test_region_order_is_chest_abdomen_pelvis() {
        assert!(Region::Chest < Region::Abdomen);
        assert!(Region::Abdomen < Region::Pelvis);
        assert_eq!(Region::ALL, [Region::Chest, Region::Abdomen, Region::Pelvis]);
    }

    #[test]
    fn test_region_string_round_trip() {
        for region in Region::ALL {
            assert_eq!(region.as_str().parse::<Region>().unwrap(), region);
        }
        assert!("thorax".parse::<Region>().is_err());
    }

    #[test]
    fn test_load_single_line() {
        let corpus =
            load_str(r#"{"id": "c1", "region": "chest", "findings": "No nodules."}"#).unwrap();
        assert_eq!(corpus.len(), 1);
        let report = corpus.get("c1").unwrap();
        assert_eq!(report.findings[&Region::Chest], "No nodules.");
        assert!(report.generated.is_empty());
    }

    #[test]
    fn test_load_merges_lines_with_same_id() {
        let corpus = load_str(concat!(
            r#"{"id": "c1", "region": "abdomen", "findings": "Liver normal."}"#,
            "\n",
            r#"{"id": "c1", "region": "chest", "findings": "Clear lungs.", "generated": "Lungs are clear."}"#,
        ))
        .unwrap();
        assert_eq!(corpus.len(), 1);
        let report = corpus.get("c1").unwrap();
        assert_eq!(report.regions(), vec![Region::Chest, Region::Abdomen]);
        assert_eq!(report.generated[&Region::Chest], "Lungs are clear.");
    }

    #[test]
    fn test_load_rejects_duplicate_region() {
        let err = load_str(concat!(
            r#"{"id": "c1", "region": "chest", "findings": "a."}"#,
            "\n",
            r#"{"id": "c1", "region": "chest", "generated": "b."}"#,
        ))
        .unwrap_err();
        match err {
            CorpusError::DuplicateRegion { id, region } => {
                assert_eq!(id, "c1");
                assert_eq!(region, Region::Chest);
            }
            other => panic!("expected DuplicateRegion, got {other:?}"),
        }
    }

    #[test]
    fn test_load_reports_malformed_line_number() {
        let err = load_str(concat!(
            r#"{"id": "c1", "region": "chest", "findings": "a."}"#,
            "\n",
            "not json",
        ))
        .unwrap_err();
        match err {
            CorpusError::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("expected MalformedLine, got {other:?}"),
        }
    }

    #[test]
    fn test_load_rejects_unknown_region_and_empty_texts() {
        assert!(matches!(
            load_str(r#"{"id": "c1", "region": "thorax", "findings": "a."}"#),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            load_str(r#"{"id": "c1", "region": "chest", "findings": "   "}"#),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            load_str(r#"{"id": "c1", "region": "chest"}"#),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            load_str(r#"{"id": "", "region": "chest", "findings": "a."}"#),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn test_load_rejects_empty_input() {
        assert!(matches!(load_str(""), Err(CorpusError::EmptyCorpus)));
        assert!(matches!(load_str("\n  \n"), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn test_load_ignores_unknown_fields() {
        let corpus = load_str(
            r#"{"id": "c1", "region": "chest", "findings": "a.", "score": 0.5, "meta": {}}"#,
        )
        .unwrap();
        assert_eq!(corpus.get("c1").unwrap().findings[&Region::Chest], "a.");
    }

    #[test]
    fn test_write_emits_regions_in_canonical_order() {
        let mut report = Report::new("c1");
        report.findings.insert(Region::Pelvis, "Pelvis normal.".into());
        report.findings.insert(Region::Chest, "Chest normal.".into());
        let corpus = Corpus::from_reports(vec![report]).unwrap();
        let text = write_str(&corpus);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains(r#""region":"chest""#));
        assert!(lines[1].contains(r#""region":"pelvis""#));
    }

    #[test]
    fn test_write_refuses_empty_corpus() {
        let corpus = Corpus::default();
        let mut buf = Vec::new();
        assert!(matches!(
            write_corpus_to(&corpus, &mut buf),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn test_round_trip_preserves_reports_and_order() {
        let mut a = Report::new("c2");
        a.findings.insert(Region::Chest, "No nodules are seen in the lungs.".into());
        a.generated.insert(Region::Chest, "The lungs are clear.".into());
        a.findings.insert(Region::Abdomen, "Liver is unremarkable.".into());
        let mut b = Report::new("c1");
        b.generated.insert(Region::Pelvis, "Prostate enlargement is observed.".into());
        let corpus = Corpus::from_reports(vec![a, b]).unwrap();

        let text = write_str(&corpus);
        let reloaded = load_str(&text).unwrap();
        assert_eq!(reloaded, corpus);
        assert_eq!(write_str(&reloaded), text);
    }

    #[test]
    fn test_from_reports_rejects_duplicate_ids() {
        let mut a = Report::new("c1");
        a.findings.insert(Region::Chest, "a.".into());
        let mut b = Report::new("c1");
        b.findings.insert(Region::Abdomen, "b.".into());
        assert!(matches!(
            Corpus::from_reports(vec![a, b]),
            Err(CorpusError::InvalidReport { .. })
        ));
    }

    #[test]
    fn test_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut report = Report::new("c1");
        report.findings.insert(Region::Chest, "No nodules.".into());
        let corpus = Corpus::from_reports(vec![report]).unwrap();
        write_corpus(&corpus, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), corpus);
    }
}
