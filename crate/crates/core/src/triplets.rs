//! Structuring findings text into `{entity, position, exist}` triplets.
//!
//! Extraction is rule-based: a [`Lexicon`] lists surface forms for clinical
//! entities and anatomical positions plus negation cues. Within a sentence,
//! each matched entity is paired with the nearest matched position, and a
//! negation cue anywhere before the entity flips `exist` to false. A
//! [`CanonicalMap`] then rewrites variant phrasings onto one canonical
//! triplet so that downstream comparison is exact string equality.
//!
//! Triplets render into binary questions with three fixed templates,
//! depending on which fields are present.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Region;

/// One structured finding: what was (or was not) observed, and where.
///
/// `entity` or `position` may be empty (but not both): a normality statement
/// like "The lungs are clear." carries a position with no entity. Fields are
/// lowercase, internally single-spaced, and trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub entity: String,
    pub position: String,
    pub exist: bool,
}

impl Triplet {
    /// Builds a triplet, normalizing both phrases. Errors when both fields
    /// are empty after normalization.
    pub fn new(
        entity: impl AsRef<str>,
        position: impl AsRef<str>,
        exist: bool,
    ) -> Result<Self, TripletError> {
        let entity = normalize_phrase(entity.as_ref());
        let position = normalize_phrase(position.as_ref());
        if entity.is_empty() && position.is_empty() {
            return Err(TripletError::InvalidTriplet);
        }
        Ok(Triplet { entity, position, exist })
    }

    /// The (entity, position) pair, ignoring the exist flag.
    pub fn key(&self) -> (&str, &str) {
        (&self.entity, &self.position)
    }
}

/// A rendered binary question together with the triplet it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub text: String,
    pub source: Triplet,
}

#[derive(Debug, Error)]
pub enum TripletError {
    /// Both entity and position are empty.
    #[error("triplet has neither entity nor position")]
    InvalidTriplet,
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("invalid canonical map: {0}")]
    InvalidMap(String),
    /// A triplet JSONL line failed to parse or validate. 1-based.
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases, trims, and collapses internal whitespace to single spaces.
pub fn normalize_phrase(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_normalized(s: &str) -> bool {
    s == normalize_phrase(s)
}

/// Surface-form lists for extraction.
///
/// Each entity and position pairs a surface form (matched in text) with the
/// canonical phrase written into triplets. Surface forms and cues must be
/// lowercase, single-spaced, and unique within their list; matching itself
/// is case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    entities: Vec<(String, String)>,
    positions: Vec<(String, String)>,
    negation_cues: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    entities: Vec<(String, String)>,
    positions: Vec<(String, String)>,
    negation_cues: Vec<String>,
}

impl Lexicon {
    pub fn new(
        entities: Vec<(String, String)>,
        positions: Vec<(String, String)>,
        negation_cues: Vec<String>,
    ) -> Result<Self, TripletError> {
        validate_surface_list(&entities, "entities")?;
        validate_surface_list(&positions, "positions")?;
        let mut seen = HashMap::new();
        for cue in &negation_cues {
            if cue.is_empty() || !is_normalized(cue) {
                return Err(TripletError::InvalidLexicon(format!(
                    "negation cue '{cue}' must be non-empty, lowercase, and single-spaced"
                )));
            }
            if seen.insert(cue.clone(), ()).is_some() {
                return Err(TripletError::InvalidLexicon(format!(
                    "duplicate negation cue '{cue}'"
                )));
            }
        }
        Ok(Lexicon { entities, positions, negation_cues })
    }

    pub fn from_json_str(s: &str) -> Result<Self, TripletError> {
        let raw: LexiconFile = serde_json::from_str(s)
            .map_err(|e| TripletError::InvalidLexicon(e.to_string()))?;
        Lexicon::new(raw.entities, raw.positions, raw.negation_cues)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, TripletError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Lexicon::from_json_str(&text)
    }

    pub fn entities(&self) -> &[(String, String)] {
        &self.entities
    }

    pub fn positions(&self) -> &[(String, String)] {
        &self.positions
    }

    pub fn negation_cues(&self) -> &[String] {
        &self.negation_cues
    }
}

fn validate_surface_list(
    list: &[(String, String)],
    what: &str,
) -> Result<(), TripletError> {
    let mut seen = HashMap::new();
    for (surface, canonical) in list {
        if surface.is_empty() || !is_normalized(surface) {
            return Err(TripletError::InvalidLexicon(format!(
                "{what} surface form '{surface}' must be non-empty, lowercase, and single-spaced"
            )));
        }
        if canonical.is_empty() || !is_normalized(canonical) {
            return Err(TripletError::InvalidLexicon(format!(
                "{what} canonical form '{canonical}' must be non-empty, lowercase, and single-spaced"
            )));
        }
        if seen.insert(surface.clone(), ()).is_some() {
            return Err(TripletError::InvalidLexicon(format!(
                "duplicate {what} surface form '{surface}'"
            )));
        }
    }
    Ok(())
}

/// An (entity, position) string pair used by canonical map rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletPattern {
    pub entity: String,
    pub position: String,
}

/// One rewrite rule: triplets matching `from` exactly become `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapRule {
    pub from: TripletPattern,
    pub to: TripletPattern,
}

/// Ordered rewrite rules mapping variant (entity, position) pairs onto one
/// canonical pair. The first matching rule applies; rule outputs must be
/// fixed points of the map, so canonicalization is idempotent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CanonicalMap {
    rules: Vec<MapRule>,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    rules: Vec<MapRule>,
}

impl CanonicalMap {
    /// A map with no rules; canonicalization under it is the identity.
    pub fn empty() -> Self {
        CanonicalMap::default()
    }

    pub fn new(rules: Vec<MapRule>) -> Result<Self, TripletError> {
        for rule in &rules {
            for (pattern, side) in [(&rule.from, "from"), (&rule.to, "to")] {
                if !is_normalized(&pattern.entity) || !is_normalized(&pattern.position) {
                    return Err(TripletError::InvalidMap(format!(
                        "{side} pattern ('{}', '{}') must be lowercase, trimmed, and single-spaced",
                        pattern.entity, pattern.position
                    )));
                }
                if pattern.entity.is_empty() && pattern.position.is_empty() {
                    return Err(TripletError::InvalidMap(format!(
                        "{side} pattern has neither entity nor position"
                    )));
                }
            }
        }
        let map = CanonicalMap { rules };
        for rule in &map.rules {
            let rewritten = map.apply(&rule.to.entity, &rule.to.position);
            if rewritten != (rule.to.entity.as_str(), rule.to.position.as_str()) {
                return Err(TripletError::InvalidMap(format!(
                    "rule output ('{}', '{}') is rewritten again to ('{}', '{}'); outputs must be fixed points",
                    rule.to.entity, rule.to.position, rewritten.0, rewritten.1
                )));
            }
        }
        Ok(map)
    }

    pub fn from_json_str(s: &str) -> Result<Self, TripletError> {
        let raw: MapFile =
            serde_json::from_str(s).map_err(|e| TripletError::InvalidMap(e.to_string()))?;
        CanonicalMap::new(raw.rules)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, TripletError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        CanonicalMap::from_json_str(&text)
    }

    pub fn rules(&self) -> &[MapRule] {
        &self.rules
    }

    /// First matching rule's output, or the input unchanged.
    fn apply<'a>(&'a self, entity: &'a str, position: &'a str) -> (&'a str, &'a str) {
        for rule in &self.rules {
            if rule.from.entity == entity && rule.from.position == position {
                return (&rule.to.entity, &rule.to.position);
            }
        }
        (entity, position)
    }
}

/// Splits report text into sentences on '.', ';', and newlines.
///
/// Terminal '.' and ';' stay attached to their sentence; fragments that are
/// empty (or bare punctuation) after trimming are dropped. Joining the
/// result with single spaces reproduces the input up to whitespace
/// normalization.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for (i, ch) in text.char_indices() {
        if ch == '.' || ch == ';' || ch == '\n' {
            let end = if ch == '\n' { i } else { i + ch.len_utf8() };
            push_sentence(&mut out, &text[start..end]);
            start = i + ch.len_utf8();
        }
    }
    push_sentence(&mut out, &text[start..]);
    out
}

fn push_sentence(out: &mut Vec<String>, fragment: &str) {
    let sentence = fragment.trim();
    if sentence.trim_matches(|c| c == '.' || c == ';' || char::is_whitespace(c)).is_empty() {
        return;
    }
    out.push(sentence.to_string());
}

/// A resolved surface-form match: byte span in the lowercased sentence plus
/// the canonical phrase it maps to.
#[derive(Debug, Clone)]
struct SurfaceMatch<'a> {
    start: usize,
    end: usize,
    canonical: &'a str,
}

/// All word-boundary occurrences of `phrase` in `text` (both lowercase).
pub(crate) fn word_boundary_spans(text: &str, phrase: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    for (start, found) in text.match_indices(phrase) {
        let end = start + found.len();
        let before_ok = text[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            spans.push((start, end));
        }
    }
    spans
}

/// Gathers matches for every surface form and resolves overlaps
/// leftmost-first, longest-first, so nested surface forms (e.g. "lesion"
/// inside "low-density lesion") yield only the longer match.
fn resolved_matches<'a>(text: &str, surfaces: &'a [(String, String)]) -> Vec<SurfaceMatch<'a>> {
    let mut raw: Vec<SurfaceMatch<'a>> = Vec::new();
    for (surface, canonical) in surfaces {
        for (start, end) in word_boundary_spans(text, surface) {
            raw.push(SurfaceMatch { start, end, canonical });
        }
    }
    raw.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut kept: Vec<SurfaceMatch<'a>> = Vec::new();
    for m in raw {
        if kept.last().is_none_or(|last| m.start >= last.end) {
            kept.push(m);
        }
    }
    kept
}

/// Pairing rank of position span `p` relative to entity span `e`: overlaps
/// first, then following positions by gap, then preceding ones. Findings
/// read "entity in the position", so a following position outranks a
/// preceding one even when the preceding gap is smaller.
fn pairing_rank(e: (usize, usize), p: (usize, usize)) -> (u8, usize) {
    if p.0 >= e.1 {
        (1, p.0 - e.1)
    } else if e.0 >= p.1 {
        (2, e.0 - p.1)
    } else {
        (0, 0)
    }
}

/// Extracts raw triplets from a single sentence.
///
/// Each matched entity pairs with the nearest matched position, preferring
/// positions that follow the entity (see [`pairing_rank`]). A negation cue
/// ending before the entity match flips `exist` to false. Sentences with
/// positions but no entities yield position-only triplets; sentences with no
/// matches yield nothing.
pub fn extract_triplets(sentence: &str, lexicon: &Lexicon) -> Vec<Triplet> {
    let lower = sentence.to_lowercase();
    let entities = resolved_matches(&lower, &lexicon.entities);
    let positions = resolved_matches(&lower, &lexicon.positions);
    let mut cue_ends: Vec<usize> = Vec::new();
    for cue in &lexicon.negation_cues {
        for (_, end) in word_boundary_spans(&lower, cue) {
            cue_ends.push(end);
        }
    }
    let negated_before = |start: usize| cue_ends.iter().any(|&end| end <= start);

    if entities.is_empty() {
        return positions
            .iter()
            .map(|p| {
                Triplet::new("", p.canonical, !negated_before(p.start))
                    .expect("lexicon canonical forms are non-empty")
            })
            .collect();
    }
    entities
        .iter()
        .map(|e| {
            let nearest = positions
                .iter()
                .min_by_key(|p| (pairing_rank((e.start, e.end), (p.start, p.end)), p.start));
            let position = nearest.map_or("", |p| p.canonical);
            Triplet::new(e.canonical, position, !negated_before(e.start))
                .expect("lexicon canonical forms are non-empty")
        })
        .collect()
}

/// Rewrites a triplet through the canonical map, preserving `exist`.
pub fn canonicalize(triplet: &Triplet, map: &CanonicalMap) -> Triplet {
    let (entity, position) = map.apply(&triplet.entity, &triplet.position);
    Triplet {
        entity: entity.to_string(),
        position: position.to_string(),
        exist: triplet.exist,
    }
}

/// Renders the binary question for a triplet.
///
/// Both fields present: "Is there {entity} in the {position}?". Entity
/// missing: "Is the {position} normal?". Position missing: "Can you observe
/// {entity} in this CT scan?".
pub fn render_question(triplet: &Triplet) -> Result<Question, TripletError> {
    let text = match (triplet.entity.is_empty(), triplet.position.is_empty()) {
        (false, false) => format!("Is there {} in the {}?", triplet.entity, triplet.position),
        (true, false) => format!("Is the {} normal?", triplet.position),
        (false, true) => format!("Can you observe {} in this CT scan?", triplet.entity),
        (true, true) => return Err(TripletError::InvalidTriplet),
    };
    Ok(Question { text, source: triplet.clone() })
}

/// Full pipeline over a report text: split, extract, canonicalize, dedup.
///
/// Duplicates share entity and position; the first occurrence wins. A
/// duplicate with a conflicting exist flag is dropped with a logged warning.
pub fn report_to_triplets(text: &str, lexicon: &Lexicon, map: &CanonicalMap) -> Vec<Triplet> {
    let mut out: Vec<Triplet> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for sentence in split_sentences(text) {
        for raw in extract_triplets(&sentence, lexicon) {
            let triplet = canonicalize(&raw, map);
            let key = (triplet.entity.clone(), triplet.position.clone());
            match index.entry(key) {
                Entry::Occupied(e) => {
                    let kept: &Triplet = &out[*e.get()];
                    if kept.exist != triplet.exist {
                        log::warn!(
                            "conflicting exist flags for ('{}', '{}'); keeping {}",
                            triplet.entity,
                            triplet.position,
                            kept.exist
                        );
                    }
                }
                Entry::Vacant(e) => {
                    e.insert(out.len());
                    out.push(triplet);
                }
            }
        }
    }
    out
}

/// One triplet JSONL line, as produced by extraction over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    pub entity: String,
    pub position: String,
    pub exist: bool,
}

impl TripletRecord {
    pub fn triplet(&self) -> Result<Triplet, TripletError> {
        Triplet::new(&self.entity, &self.position, self.exist)
    }
}

/// One question JSONL line: the rendered text plus its source triplet, whose
/// exist flag travels along as the ground-truth answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    pub text: String,
    pub entity: String,
    pub position: String,
    pub exist: bool,
}

/// Reads triplet JSONL, validating each record.
pub fn read_triplet_records<R: BufRead>(reader: R) -> Result<Vec<TripletRecord>, TripletError> {
    let mut out = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TripletRecord =
            serde_json::from_str(&line).map_err(|e| TripletError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        if record.id.trim().is_empty() {
            return Err(TripletError::MalformedLine {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        record.triplet().map_err(|e| TripletError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_triplet_records(path: impl AsRef<Path>) -> Result<Vec<TripletRecord>, TripletError> {
    let file = File::open(path.as_ref())?;
    read_triplet_records(BufReader::new(file))
}

pub fn write_triplet_records(
    records: &[TripletRecord],
    path: impl AsRef<Path>,
) -> Result<(), TripletError> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    write_jsonl(records, &mut writer)?;
    writer.flush()?;
    Ok(())
}

/// Writes any serializable records as JSONL.
pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], writer: &mut W) -> std::io::Result<()> {
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}
