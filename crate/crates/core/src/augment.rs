//! Report augmentation: appending findings a generated report leaves out.
//!
//! Two stages run in sequence:
//!
//! 1. **Binary-based questioning (BQ)**: a [`KnowledgeBase`] lists triplets
//!    that generated reports commonly miss. For each entry whose guard
//!    keywords are absent from the report so far, an answer source is asked
//!    whether the triplet holds, and the entry's positive or negative
//!    finding is appended accordingly.
//! 2. **Naive normality (NN)**: each [`NormalityRule`] appends a normal
//!    finding whenever its required keywords never appear, so organs the
//!    report ignores are explicitly called normal.
//!
//! Both stages only append: the original generated text is always a verbatim
//! prefix of the augmented text.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Region, Report};
use crate::oracle::{answer, AnswerSource, OracleError};
use crate::triplets::{normalize_phrase, split_sentences, word_boundary_spans, Triplet};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("keyword list is empty")]
    EmptyKeywordList,
    #[error("report '{id}' has no generated text for region '{region}'")]
    MissingGenerated { id: String, region: Region },
    #[error("invalid knowledge base: {0}")]
    InvalidKnowledgeBase(String),
    #[error("invalid normality rule: {0}")]
    InvalidRule(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One commonly missed triplet with its guard and the findings to append.
///
/// `guard_keywords` decide whether the report already addresses the triplet;
/// `positive_finding`/`negative_finding` are appended for a true/false
/// answer. Findings are complete sentences ending with '.'.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonTripletEntry {
    pub region: Region,
    pub entity: String,
    pub position: String,
    pub guard_keywords: Vec<String>,
    pub positive_finding: String,
    pub negative_finding: String,
}

impl CommonTripletEntry {
    /// The triplet this entry asks about (exist flag is a placeholder; answer
    /// sources ignore it).
    pub fn query(&self) -> Triplet {
        Triplet::new(&self.entity, &self.position, true)
            .expect("knowledge base entries are validated at load")
    }
}

/// Ordered list of [`CommonTripletEntry`] values; BQ walks entries of the
/// report's region in list order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeBase {
    entries: Vec<CommonTripletEntry>,
}

#[derive(Serialize, Deserialize)]
struct KnowledgeBaseFile {
    entries: Vec<CommonTripletEntry>,
}

impl KnowledgeBase {
    /// A knowledge base with no entries; BQ under it appends nothing.
    pub fn empty() -> Self {
        KnowledgeBase::default()
    }

    pub fn new(entries: Vec<CommonTripletEntry>) -> Result<Self, AugmentError> {
        let mut seen: HashMap<(Region, String, String), ()> = HashMap::new();
        for entry in &entries {
            let invalid = |reason: String| AugmentError::InvalidKnowledgeBase(reason);
            let entity = normalize_phrase(&entry.entity);
            let position = normalize_phrase(&entry.position);
            if entity != entry.entity || position != entry.position {
                return Err(invalid(format!(
                    "triplet ('{}', '{}') must be lowercase, trimmed, and single-spaced",
                    entry.entity, entry.position
                )));
            }
            if entity.is_empty() && position.is_empty() {
                return Err(invalid("entry has neither entity nor position".into()));
            }
            validate_keywords(&entry.guard_keywords, None)
                .map_err(|e| invalid(format!("guard keywords: {e}")))?;
            for (finding, label) in [
                (&entry.positive_finding, "positive_finding"),
                (&entry.negative_finding, "negative_finding"),
            ] {
                validate_finding_sentence(finding)
                    .map_err(|e| invalid(format!("{label}: {e}")))?;
            }
            let key = (entry.region, entity, position);
            if seen.insert(key, ()).is_some() {
                return Err(invalid(format!(
                    "duplicate entry for region '{}', triplet ('{}', '{}')",
                    entry.region, entry.entity, entry.position
                )));
            }
        }
        Ok(KnowledgeBase { entries })
    }

    pub fn from_json_str(s: &str) -> Result<Self, AugmentError> {
        let raw: KnowledgeBaseFile = serde_json::from_str(s)
            .map_err(|e| AugmentError::InvalidKnowledgeBase(e.to_string()))?;
        KnowledgeBase::new(raw.entries)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        KnowledgeBase::from_json_str(&text)
    }

    pub fn entries(&self) -> &[CommonTripletEntry] {
        &self.entries
    }

    /// Entries for one region, in list order.
    pub fn entries_for(&self, region: Region) -> impl Iterator<Item = &CommonTripletEntry> {
        self.entries.iter().filter(move |e| e.region == region)
    }
}

/// A normality statement for an organ plus the keywords proving the report
/// already mentions that organ. The normal finding must contain its own
/// required keywords, which makes NN idempotent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalityRule {
    pub region: Region,
    pub required_keywords: Vec<String>,
    pub normal_finding: String,
}

#[derive(Serialize, Deserialize)]
struct NormalityRulesFile {
    rules: Vec<NormalityRule>,
}

/// Validates one normality rule: 1..=2 lowercase keywords, a finding that
/// ends with '.' and contains every keyword itself.
pub fn validate_normality_rule(rule: &NormalityRule) -> Result<(), AugmentError> {
    let invalid = |reason: String| AugmentError::InvalidRule(reason);
    validate_keywords(&rule.required_keywords, Some(2))
        .map_err(|e| invalid(format!("required keywords: {e}")))?;
    validate_finding_sentence(&rule.normal_finding)
        .map_err(|e| invalid(format!("normal_finding: {e}")))?;
    let covered = keyword_present(&rule.normal_finding, &rule.required_keywords)
        .expect("keyword list was just validated non-empty");
    if !covered {
        return Err(invalid(format!(
            "normal_finding '{}' does not contain its required keywords {:?}",
            rule.normal_finding, rule.required_keywords
        )));
    }
    Ok(())
}

pub fn normality_rules_from_json_str(s: &str) -> Result<Vec<NormalityRule>, AugmentError> {
    let raw: NormalityRulesFile =
        serde_json::from_str(s).map_err(|e| AugmentError::InvalidRule(e.to_string()))?;
    for rule in &raw.rules {
        validate_normality_rule(rule)?;
    }
    Ok(raw.rules)
}

pub fn load_normality_rules(path: impl AsRef<Path>) -> Result<Vec<NormalityRule>, AugmentError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    normality_rules_from_json_str(&text)
}

fn validate_keywords(keywords: &[String], max: Option<usize>) -> Result<(), String> {
    if keywords.is_empty() {
        return Err("list is empty".into());
    }
    if let Some(max) = max {
        if keywords.len() > max {
            return Err(format!("list has {} keywords, at most {max} allowed", keywords.len()));
        }
    }
    for k in keywords {
        if k.is_empty() || normalize_phrase(k) != *k {
            return Err(format!("keyword '{k}' must be non-empty, lowercase, and single-spaced"));
        }
    }
    Ok(())
}

fn validate_finding_sentence(finding: &str) -> Result<(), String> {
    if finding.trim() != finding || finding.is_empty() {
        return Err("finding must be non-empty without surrounding whitespace".into());
    }
    if !finding.ends_with('.') {
        return Err(format!("finding '{finding}' must end with '.'"));
    }
    Ok(())
}

/// Whether the keywords are present in the text (case-insensitive,
/// word-boundary). A single keyword may appear anywhere; multiple keywords
/// must co-occur within one sentence.
pub fn keyword_present(text: &str, keywords: &[String]) -> Result<bool, AugmentError> {
    if keywords.is_empty() {
        return Err(AugmentError::EmptyKeywordList);
    }
    let lowered: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
    if lowered.len() == 1 {
        return Ok(!word_boundary_spans(&text.to_lowercase(), &lowered[0]).is_empty());
    }
    for sentence in split_sentences(text) {
        let sentence = sentence.to_lowercase();
        if lowered.iter().all(|k| !word_boundary_spans(&sentence, k).is_empty()) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// One BQ append: the sentence plus the queried triplet and its answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BqAppend {
    pub sentence: String,
    pub entity: String,
    pub position: String,
    pub answer: bool,
}

/// One NN append: the sentence plus the keywords that were missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NnAppend {
    pub sentence: String,
    pub required_keywords: Vec<String>,
}

/// The result of augmenting one (report, region) pair.
///
/// `final_text` is `original_generated` followed by every appended sentence,
/// joined with single spaces; the original text is preserved verbatim as a
/// prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedReport {
    pub id: String,
    pub region: Region,
    pub original_generated: String,
    pub appended_bq: Vec<BqAppend>,
    pub appended_nn: Vec<NnAppend>,
    pub final_text: String,
}

/// One appended sentence as recorded in a provenance sidecar: which report
/// and region it was added to, which stage added it ("bq" or "nn"), and the
/// stage-specific fields (queried triplet and answer for BQ, missing
/// keywords for NN).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub id: String,
    pub region: Region,
    pub stage: String,
    pub sentence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_keywords: Option<Vec<String>>,
}

impl AugmentedReport {
    /// Flattens the appends into provenance records, BQ first, in the order
    /// the sentences were attached.
    pub fn provenance(&self) -> Vec<ProvenanceRecord> {
        let mut out = Vec::with_capacity(self.appended_bq.len() + self.appended_nn.len());
        for bq in &self.appended_bq {
            out.push(ProvenanceRecord {
                id: self.id.clone(),
                region: self.region,
                stage: "bq".into(),
                sentence: bq.sentence.clone(),
                entity: Some(bq.entity.clone()),
                position: Some(bq.position.clone()),
                answer: Some(bq.answer),
                required_keywords: None,
            });
        }
        for nn in &self.appended_nn {
            out.push(ProvenanceRecord {
                id: self.id.clone(),
                region: self.region,
                stage: "nn".into(),
                sentence: nn.sentence.clone(),
                entity: None,
                position: None,
                answer: None,
                required_keywords: Some(nn.required_keywords.clone()),
            });
        }
        out
    }
}

fn append_sentence(text: &mut String, sentence: &str) {
    text.push(' ');
    text.push_str(sentence);
}

/// Runs the BQ stage for one (report, region) pair.
///
/// Walks the region's knowledge-base entries in order. An entry whose guard
/// keywords already appear in the text so far (original plus earlier
/// appends) is skipped; otherwise the answer source is queried and the
/// positive or negative finding appended.
pub fn bq_augment(
    report: &Report,
    region: Region,
    kb: &KnowledgeBase,
    source: &AnswerSource,
) -> Result<AugmentedReport, AugmentError> {
    let original = report.generated.get(&region).ok_or(AugmentError::MissingGenerated {
        id: report.id.clone(),
        region,
    })?;
    let mut text = original.clone();
    let mut appended = Vec::new();
    for entry in kb.entries_for(region) {
        if keyword_present(&text, &entry.guard_keywords)? {
            continue;
        }
        let ans = answer(source, &report.id, &entry.query())?;
        let sentence = if ans { &entry.positive_finding } else { &entry.negative_finding };
        append_sentence(&mut text, sentence);
        appended.push(BqAppend {
            sentence: sentence.clone(),
            entity: entry.entity.clone(),
            position: entry.position.clone(),
            answer: ans,
        });
    }
    Ok(AugmentedReport {
        id: report.id.clone(),
        region,
        original_generated: original.clone(),
        appended_bq: appended,
        appended_nn: Vec::new(),
        final_text: text,
    })
}

/// Runs the NN stage over a report text: appends each rule's normal finding
/// when its required keywords are absent from the text so far. Returns the
/// grown text and the appends. Idempotent for validated rules.
pub fn nn_augment(
    text: &str,
    region: Region,
    rules: &[NormalityRule],
) -> Result<(String, Vec<NnAppend>), AugmentError> {
    let mut current = text.to_string();
    let mut appended = Vec::new();
    for rule in rules.iter().filter(|r| r.region == region) {
        if keyword_present(&current, &rule.required_keywords)? {
            continue;
        }
        append_sentence(&mut current, &rule.normal_finding);
        appended.push(NnAppend {
            sentence: rule.normal_finding.clone(),
            required_keywords: rule.required_keywords.clone(),
        });
    }
    Ok((current, appended))
}

/// Full augmentation for one (report, region) pair: BQ, then NN on the BQ
/// output.
pub fn augment_pipeline(
    report: &Report,
    region: Region,
    kb: &KnowledgeBase,
    rules: &[NormalityRule],
    source: &AnswerSource,
) -> Result<AugmentedReport, AugmentError> {
    let mut augmented = bq_augment(report, region, kb, source)?;
    let (final_text, appended_nn) = nn_augment(&augmented.final_text, region, rules)?;
    augmented.final_text = final_text;
    augmented.appended_nn = appended_nn;
    Ok(augmented)
}
