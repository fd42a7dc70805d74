//! Report evaluation: surface metrics and a triplet-level clinical proxy.
//!
//! All text metrics share one tokenizer (lowercase, split on runs of
//! non-alphanumeric characters, digits kept):
//!
//! - **BLEU**: clipped n-gram precisions up to `max_n` under a geometric
//!   mean with brevity penalty. When any higher-order match count is zero,
//!   add-one smoothing applies to numerator and denominator for n >= 2.
//! - **ROUGE-1 / ROUGE-L**: unigram overlap and longest common subsequence,
//!   reported as F-scores with beta = 1.2.
//! - **METEOR**: exact-token matching with a maximum one-to-one alignment
//!   that minimizes chunk count, alpha = 0.9, beta = 3.0, gamma = 0.5.
//! - **Triplet F1**: precision/recall/F1 over canonical triplets extracted
//!   from both texts; a prediction counts only when entity, position, and
//!   exist flag all match.
//!
//! [`evaluate_corpus`] applies the metrics per (report, region), averages
//! per region, then averages the regions unweighted.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Region};
use crate::triplets::{report_to_triplets, CanonicalMap, Lexicon};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("prediction token sequence is empty")]
    EmptyPrediction,
    #[error("reference token sequences are empty or absent")]
    EmptyReference,
    #[error("BLEU max_n must be at least 1")]
    InvalidMaxN,
    #[error("report '{0}' is missing from the prediction corpus")]
    IdMismatch(String),
    #[error("external metric '{0}' collides with a computed metric")]
    MetricNameCollision(String),
    /// An external scores JSONL line failed to parse or validate. 1-based.
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases and splits on maximal runs of non-alphanumeric characters.
/// Digits are ordinary tokens; empty tokens never occur.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-style BLEU for a single prediction against one or more references.
///
/// Clipped precision at order n counts each predicted n-gram at most as
/// often as its maximum count in any single reference. If any match count
/// for n >= 2 is zero, numerator and denominator gain one for all n >= 2
/// (order 1 is never smoothed). Brevity penalty uses the reference length
/// closest to the prediction length (ties toward the shorter).
pub fn bleu(pred: &[String], refs: &[Vec<String>], max_n: usize) -> Result<f64, MetricError> {
    if max_n == 0 {
        return Err(MetricError::InvalidMaxN);
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyPrediction);
    }
    if refs.is_empty() || refs.iter().any(|r| r.is_empty()) {
        return Err(MetricError::EmptyReference);
    }

    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    for n in 1..=max_n {
        let ref_counts: Vec<HashMap<&[String], usize>> =
            refs.iter().map(|r| ngram_counts(r, n)).collect();
        let pred_counts = ngram_counts(pred, n);
        let mut matched = 0usize;
        for (gram, &count) in &pred_counts {
            let best = ref_counts.iter().map(|rc| rc.get(gram).copied().unwrap_or(0)).max();
            matched += count.min(best.unwrap_or(0));
        }
        matches[n - 1] = matched;
        totals[n - 1] = pred.len().saturating_sub(n - 1);
    }

    let smooth = (2..=max_n).any(|n| matches[n - 1] == 0);
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut m, mut t) = (matches[n - 1], totals[n - 1]);
        if smooth && n >= 2 {
            m += 1;
            t += 1;
        }
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let precision = (log_sum / max_n as f64).exp();

    let c = pred.len();
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("refs verified non-empty");
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * precision)
}

/// ROUGE-1 and ROUGE-L F-scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScores {
    pub rouge1_f: f64,
    pub rouge_l_f: f64,
}

const ROUGE_BETA: f64 = 1.2;

fn rouge_fscore(precision: f64, recall: f64) -> f64 {
    if precision == 0.0 && recall == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * precision * recall / (recall + b2 * precision)
}

/// Longest common subsequence length, O(min) space.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-1 (clipped unigram overlap) and ROUGE-L (LCS), beta = 1.2.
/// Either side empty scores zero on both.
pub fn rouge(pred: &[String], reference: &[String]) -> RougeScores {
    if pred.is_empty() || reference.is_empty() {
        return RougeScores { rouge1_f: 0.0, rouge_l_f: 0.0 };
    }
    let pred_counts = ngram_counts(pred, 1);
    let ref_counts = ngram_counts(reference, 1);
    let overlap: usize = pred_counts
        .iter()
        .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let rouge1_f =
        rouge_fscore(overlap as f64 / pred.len() as f64, overlap as f64 / reference.len() as f64);
    let lcs = lcs_len(pred, reference);
    let rouge_l_f =
        rouge_fscore(lcs as f64 / pred.len() as f64, lcs as f64 / reference.len() as f64);
    RougeScores { rouge1_f, rouge_l_f }
}

/// Node budget for the exact alignment search; beyond it a deterministic
/// greedy alignment (still maximum cardinality) supplies the chunk count.
const ALIGN_NODE_BUDGET: usize = 500_000;

struct AlignSearch<'a> {
    candidates: &'a [Vec<usize>],
    suffix_candidates: &'a [usize],
    m_max: usize,
    used: Vec<bool>,
    best_chunks: usize,
    nodes: usize,
    aborted: bool,
}

impl AlignSearch<'_> {
    fn dfs(&mut self, i: usize, matched: usize, chunks: usize, prev: Option<(usize, usize)>) {
        if self.aborted || chunks >= self.best_chunks {
            return;
        }
        self.nodes += 1;
        if self.nodes > ALIGN_NODE_BUDGET {
            self.aborted = true;
            return;
        }
        if matched + self.suffix_candidates[i] < self.m_max {
            return;
        }
        if i == self.candidates.len() {
            if matched == self.m_max {
                self.best_chunks = chunks;
            }
            return;
        }
        // Try the chunk-extending candidate first so good alignments are
        // found early and pruning bites.
        let extension = match prev {
            Some((pi, pj)) if pi + 1 == i => Some(pj + 1),
            _ => None,
        };
        let mut order: Vec<usize> = Vec::with_capacity(self.candidates[i].len());
        if let Some(e) = extension {
            if self.candidates[i].contains(&e) {
                order.push(e);
            }
        }
        order.extend(self.candidates[i].iter().copied().filter(|&j| Some(j) != extension));
        for j in order {
            if self.used[j] {
                continue;
            }
            let new_chunks = match prev {
                Some((pi, pj)) if pi + 1 == i && pj + 1 == j => chunks,
                _ => chunks + 1,
            };
            self.used[j] = true;
            self.dfs(i + 1, matched + 1, new_chunks, Some((i, j)));
            self.used[j] = false;
        }
        self.dfs(i + 1, matched, chunks, prev);
    }
}

/// Maximum-cardinality greedy alignment in left-to-right order, preferring
/// the chunk-extending reference position. Every prediction occurrence of a
/// token matches while unused reference copies remain, so the match count
/// always equals the maximum; only the chunk count may exceed the optimum.
fn greedy_align(pred: &[String], reference: &[String]) -> (usize, usize) {
    let mut used = vec![false; reference.len()];
    let mut matched = 0usize;
    let mut chunks = 0usize;
    let mut prev: Option<(usize, usize)> = None;
    for (i, token) in pred.iter().enumerate() {
        let extension = match prev {
            Some((pi, pj)) if pi + 1 == i => Some(pj + 1),
            _ => None,
        };
        let pick = match extension {
            Some(j) if j < reference.len() && !used[j] && reference[j] == *token => Some(j),
            _ => (0..reference.len()).find(|&j| !used[j] && reference[j] == *token),
        };
        if let Some(j) = pick {
            used[j] = true;
            matched += 1;
            if Some(j) != extension {
                chunks += 1;
            }
            prev = Some((i, j));
        }
    }
    (matched, chunks)
}

/// Match and chunk counts of a maximum one-to-one exact-token alignment
/// minimizing the number of chunks (runs contiguous in both sequences).
fn align_tokens(pred: &[String], reference: &[String]) -> (usize, usize) {
    let ref_counts = ngram_counts(reference, 1);
    let pred_counts = ngram_counts(pred, 1);
    let m_max: usize = pred_counts
        .iter()
        .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    if m_max == 0 {
        return (0, 0);
    }
    let candidates: Vec<Vec<usize>> = pred
        .iter()
        .map(|token| {
            reference
                .iter()
                .enumerate()
                .filter(|(_, t)| *t == token)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut suffix_candidates = vec![0usize; pred.len() + 1];
    for i in (0..pred.len()).rev() {
        suffix_candidates[i] =
            suffix_candidates[i + 1] + usize::from(!candidates[i].is_empty());
    }
    let mut search = AlignSearch {
        candidates: &candidates,
        suffix_candidates: &suffix_candidates,
        m_max,
        used: vec![false; reference.len()],
        best_chunks: usize::MAX,
        nodes: 0,
        aborted: false,
    };
    search.dfs(0, 0, 0, None);
    if search.aborted {
        return greedy_align(pred, reference);
    }
    (m_max, search.best_chunks)
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_BETA: f64 = 3.0;
const METEOR_GAMMA: f64 = 0.5;

/// METEOR with exact token matching only.
///
/// With m matches, P = m/|pred|, R = m/|ref|,
/// Fmean = P*R / (alpha*P + (1-alpha)*R), penalty = gamma*(chunks/m)^beta,
/// score = Fmean * (1 - penalty). Zero matches score zero; identical
/// sequences of m tokens score 1 - gamma/m^beta.
pub fn meteor(pred: &[String], reference: &[String]) -> f64 {
    let (matches, chunks) = align_tokens(pred, reference);
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / pred.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

/// Precision, recall, and F1 over sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Triplet-level scores: both texts reduce to canonical triplet sets and a
/// predicted triplet counts when an identical (entity, position, exist)
/// triplet appears in the reference set.
///
/// Empty sides are scored vacuously: an empty prediction has precision 1, an
/// empty reference has recall 1, so two empty texts score 1.0 across the
/// board. Swapping prediction and reference swaps precision and recall.
pub fn triplet_f1(
    pred_text: &str,
    ref_text: &str,
    lexicon: &Lexicon,
    map: &CanonicalMap,
) -> PrfScores {
    let pred = report_to_triplets(pred_text, lexicon, map);
    let reference = report_to_triplets(ref_text, lexicon, map);
    let correct = pred.iter().filter(|t| reference.contains(t)).count();
    let precision = if pred.is_empty() { 1.0 } else { correct as f64 / pred.len() as f64 };
    let recall = if reference.is_empty() {
        1.0
    } else {
        correct as f64 / reference.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrfScores { precision, recall, f1 }
}

/// One externally computed score row, merged into reports as an extra
/// metric column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    pub id: String,
    pub region: Region,
    pub metric: String,
    pub score: f64,
}

/// Reads external scores JSONL ({"id", "region", "metric", "score"}).
pub fn read_external_scores<R: BufRead>(reader: R) -> Result<Vec<ExternalScore>, MetricError> {
    let mut out = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExternalScore =
            serde_json::from_str(&line).map_err(|e| MetricError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        if record.id.trim().is_empty() || record.metric.trim().is_empty() {
            return Err(MetricError::MalformedLine {
                line: line_no,
                reason: "empty id or metric name".into(),
            });
        }
        if !record.score.is_finite() {
            return Err(MetricError::MalformedLine {
                line: line_no,
                reason: "score is not finite".into(),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_external_scores(path: impl AsRef<Path>) -> Result<Vec<ExternalScore>, MetricError> {
    let file = File::open(path.as_ref())?;
    read_external_scores(BufReader::new(file))
}

/// Configuration for [`evaluate_corpus`].
#[derive(Debug, Default)]
pub struct EvalConfig {
    /// Highest BLEU n-gram order; 0 means the default of 4.
    pub max_n: usize,
    /// Lexicon and canonical map enabling the triplet metrics.
    pub triplet: Option<(Lexicon, CanonicalMap)>,
    /// Externally computed rows merged as additional columns.
    pub external_scores: Vec<ExternalScore>,
    /// When set, only these computed metric names are produced (external
    /// columns are unaffected).
    pub metrics: Option<BTreeSet<String>>,
}

impl EvalConfig {
    fn max_n(&self) -> usize {
        if self.max_n == 0 {
            4
        } else {
            self.max_n
        }
    }

    fn active_names(&self) -> Vec<&'static str> {
        let mut names = vec!["bleu", "meteor", "rouge1", "rougeL"];
        if self.triplet.is_some() {
            names.extend(["triplet_precision", "triplet_recall", "triplet_f1"]);
        }
        match &self.metrics {
            Some(filter) => names.into_iter().filter(|n| filter.contains(*n)).collect(),
            None => names,
        }
    }
}

/// Per-region metric columns plus their unweighted cross-region average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_region: BTreeMap<Region, BTreeMap<String, f64>>,
    pub averages: BTreeMap<String, f64>,
}

/// Scores a prediction corpus against a reference corpus.
///
/// For every reference report and region with findings, the prediction's
/// generated text is scored; a region without generated text scores 0 on
/// every active metric. Region columns are means over that region's
/// (report, region) pairs, and `averages` is the unweighted mean over the
/// regions present. External scores merge as extra columns and never alter
/// computed ones (a name collision is an error).
pub fn evaluate_corpus(
    pred: &Corpus,
    reference: &Corpus,
    config: &EvalConfig,
) -> Result<MetricReport, MetricError> {
    let names = config.active_names();
    let mut sums: BTreeMap<Region, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    let add = |region: Region, metric: &str, score: f64,
                   sums: &mut BTreeMap<Region, BTreeMap<String, (f64, usize)>>| {
        let cell = sums
            .entry(region)
            .or_default()
            .entry(metric.to_string())
            .or_insert((0.0, 0));
        cell.0 += score;
        cell.1 += 1;
    };

    for ref_report in reference {
        let pred_report = pred
            .get(&ref_report.id)
            .ok_or_else(|| MetricError::IdMismatch(ref_report.id.clone()))?;
        for (&region, ref_text) in &ref_report.findings {
            match pred_report.generated.get(&region) {
                None => {
                    for name in &names {
                        add(region, name, 0.0, &mut sums);
                    }
                }
                Some(pred_text) => {
                    let pred_tokens = tokenize(pred_text);
                    let ref_tokens = tokenize(ref_text);
                    for name in &names {
                        let score = match *name {
                            "bleu" => bleu(&pred_tokens, std::slice::from_ref(&ref_tokens), config.max_n())
                                .unwrap_or(0.0),
                            "meteor" => meteor(&pred_tokens, &ref_tokens),
                            "rouge1" => rouge(&pred_tokens, &ref_tokens).rouge1_f,
                            "rougeL" => rouge(&pred_tokens, &ref_tokens).rouge_l_f,
                            "triplet_precision" | "triplet_recall" | "triplet_f1" => {
                                let (lexicon, map) =
                                    config.triplet.as_ref().expect("name active only with triplet config");
                                let prf = triplet_f1(pred_text, ref_text, lexicon, map);
                                match *name {
                                    "triplet_precision" => prf.precision,
                                    "triplet_recall" => prf.recall,
                                    _ => prf.f1,
                                }
                            }
                            _ => unreachable!("unknown computed metric"),
                        };
                        add(region, name, score, &mut sums);
                    }
                }
            }
        }
    }

    let computed: BTreeSet<&str> = names.iter().copied().collect();
    for row in &config.external_scores {
        if computed.contains(row.metric.as_str()) {
            return Err(MetricError::MetricNameCollision(row.metric.clone()));
        }
        add(row.region, &row.metric, row.score, &mut sums);
    }

    let mut per_region: BTreeMap<Region, BTreeMap<String, f64>> = BTreeMap::new();
    for (region, metrics) in &sums {
        let row = per_region.entry(*region).or_default();
        for (metric, (sum, count)) in metrics {
            row.insert(metric.clone(), sum / *count as f64);
        }
    }
    let mut averages: BTreeMap<String, f64> = BTreeMap::new();
    let metric_names: BTreeSet<&String> =
        per_region.values().flat_map(|row| row.keys()).collect();
    for metric in metric_names {
        let values: Vec<f64> =
            per_region.values().filter_map(|row| row.get(metric)).copied().collect();
        averages.insert(metric.clone(), values.iter().sum::<f64>() / values.len() as f64);
    }
    Ok(MetricReport { per_region, averages })
}
