//! `ctreport evaluate`: score a prediction corpus against a reference
//! corpus, printing per-region metric columns and their averages as JSON.

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;

use ctreport_core::metrics::load_external_scores;
use ctreport_core::{evaluate_corpus, load_corpus, CanonicalMap, EvalConfig, Lexicon};

use crate::config::{pick, require, require_file, ConfigFile};
use crate::error::{data_err, validation, CliError};
use crate::output::write_payload;

const KNOWN_METRICS: [&str; 7] = [
    "bleu",
    "meteor",
    "rouge1",
    "rougeL",
    "triplet_precision",
    "triplet_recall",
    "triplet_f1",
];

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction corpus (JSONL); its generated texts are scored.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Reference corpus (JSONL); its findings texts are the ground truth.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Lexicon (JSON); enables the triplet metrics.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Canonicalization map (JSON) applied before triplet comparison.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Externally computed scores (JSONL) merged as extra columns.
    #[arg(long)]
    pub external_scores: Option<PathBuf>,
    /// Comma-separated subset of metrics to compute.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Highest BLEU n-gram order (default 4).
    #[arg(long)]
    pub max_n: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_evaluate(args: EvaluateArgs, config: &ConfigFile) -> Result<(), CliError> {
    let pred_path = require(pick(args.pred, config.pred.clone()), "pred")?;
    let ref_path = require(pick(args.reference, config.reference.clone()), "ref")?;
    require_file(&pred_path, "pred")?;
    require_file(&ref_path, "ref")?;
    let pred = load_corpus(&pred_path).map_err(|e| data_err("pred", e))?;
    let reference = load_corpus(&ref_path).map_err(|e| data_err("ref", e))?;

    let metrics: Option<BTreeSet<String>> = pick(args.metrics, config.metrics.clone())
        .map(|names| {
            let mut set = BTreeSet::new();
            for name in names {
                if !KNOWN_METRICS.contains(&name.as_str()) {
                    return Err(validation(format!(
                        "--metrics: unknown metric '{name}' (expected one of {})",
                        KNOWN_METRICS.join(", ")
                    )));
                }
                set.insert(name);
            }
            Ok(set)
        })
        .transpose()?;

    let lexicon_path = pick(args.lexicon, config.lexicon.clone());
    let wants_triplets = metrics
        .as_ref()
        .is_none_or(|set| set.iter().any(|m| m.starts_with("triplet_")));
    if lexicon_path.is_none() {
        if let Some(set) = &metrics {
            if let Some(name) = set.iter().find(|m| m.starts_with("triplet_")) {
                return Err(validation(format!(
                    "--metrics {name} requires --lexicon"
                )));
            }
        }
    }
    let triplet = match lexicon_path {
        Some(path) if wants_triplets => {
            require_file(&path, "lexicon")?;
            let lexicon =
                Lexicon::from_json_file(&path).map_err(|e| data_err("loading lexicon", e))?;
            let map = match pick(args.map, config.map.clone()) {
                Some(map_path) => {
                    require_file(&map_path, "map")?;
                    CanonicalMap::from_json_file(&map_path)
                        .map_err(|e| data_err("loading map", e))?
                }
                None => CanonicalMap::empty(),
            };
            Some((lexicon, map))
        }
        _ => None,
    };

    let external_scores = match pick(args.external_scores, config.external_scores.clone()) {
        Some(path) => {
            require_file(&path, "external-scores")?;
            load_external_scores(&path).map_err(|e| data_err("loading external scores", e))?
        }
        None => Vec::new(),
    };

    let eval = EvalConfig {
        max_n: pick(args.max_n, config.max_n).unwrap_or(0),
        triplet,
        external_scores,
        metrics,
    };
    let report =
        evaluate_corpus(&pred, &reference, &eval).map_err(|e| data_err("evaluating", e))?;
    let mut payload =
        serde_json::to_string_pretty(&report).map_err(|e| data_err("serializing report", e))?;
    payload.push('\n');
    write_payload(args.out.or(config.out.clone()).as_deref(), payload.as_bytes())
}
