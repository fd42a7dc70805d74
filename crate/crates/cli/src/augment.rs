//! `ctreport augment`: grow machine-generated region texts with
//! knowledge-base questioning and normality rules, emitting the augmented
//! corpus plus a provenance sidecar describing every appended sentence.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;

use ctreport_core::triplets::write_jsonl;
use ctreport_core::{
    augment_pipeline, bq_augment, load_answers, load_corpus, load_normality_rules, nn_augment,
    write_corpus, AnswerSource, AugmentedReport, CanonicalMap, Corpus, KnowledgeBase, Lexicon,
    NormalityRule, ProvenanceRecord, Region, Report,
};

use crate::config::{pick, require, require_file, with_jobs, ConfigFile};
use crate::error::{data_err, validation, CliError};

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Input corpus (JSONL, one report per line).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Knowledge base of common triplets to question (JSON). Defaults to an
    /// empty knowledge base, which makes the questioning stage a no-op.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Normality rules (JSON). Defaults to no rules, which makes the
    /// normality stage a no-op.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Lexicon for the `reference` oracle (JSON).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Canonicalization map applied when building reference answers (JSON).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Answer oracle: `reference`, `file:<path>`, `const:true`, or
    /// `const:false`.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Directory receiving `augmented.jsonl` and `provenance.jsonl`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Run only the questioning stage.
    #[arg(long)]
    pub bq_only: bool,
    /// Run only the normality stage (no oracle needed).
    #[arg(long)]
    pub nn_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Full,
    BqOnly,
    NnOnly,
}

/// Everything `run_augment` needs after flag/config merging and file loads.
struct AugmentSetup {
    corpus: Corpus,
    kb: KnowledgeBase,
    rules: Vec<NormalityRule>,
    oracle: Option<AnswerSource>,
    out_dir: PathBuf,
    stage: Stage,
}

fn resolve_stage(args: &AugmentArgs, config: &ConfigFile) -> Result<Stage, CliError> {
    let bq_only = args.bq_only || config.bq_only.unwrap_or(false);
    let nn_only = args.nn_only || config.nn_only.unwrap_or(false);
    match (bq_only, nn_only) {
        (true, true) => Err(validation(
            "--bq-only and --nn-only are mutually exclusive",
        )),
        (true, false) => Ok(Stage::BqOnly),
        (false, true) => Ok(Stage::NnOnly),
        (false, false) => Ok(Stage::Full),
    }
}

/// Parses the oracle selector and loads whatever it references. `reference`
/// builds per-report answers from the corpus' own findings, so it needs the
/// lexicon (the map defaults to the identity).
fn resolve_oracle(
    selector: &str,
    corpus: &Corpus,
    lexicon: Option<&PathBuf>,
    map: Option<&PathBuf>,
) -> Result<AnswerSource, CliError> {
    if selector == "reference" {
        let lexicon_path = require(lexicon, "lexicon")?;
        require_file(lexicon_path, "lexicon")?;
        let lexicon = Lexicon::from_json_file(lexicon_path)
            .map_err(|e| data_err("loading lexicon", e))?;
        let map = match map {
            Some(path) => {
                require_file(path, "map")?;
                CanonicalMap::from_json_file(path).map_err(|e| data_err("loading map", e))?
            }
            None => CanonicalMap::empty(),
        };
        return Ok(AnswerSource::reference_from_corpus(corpus, &lexicon, &map));
    }
    if let Some(path) = selector.strip_prefix("file:") {
        if path.is_empty() {
            return Err(validation("--oracle file: requires a path after the colon"));
        }
        let path = PathBuf::from(path);
        require_file(&path, "oracle")?;
        return load_answers(&path).map_err(|e| data_err("loading answers", e));
    }
    match selector {
        "const:true" => Ok(AnswerSource::Constant(true)),
        "const:false" => Ok(AnswerSource::Constant(false)),
        other => Err(validation(format!(
            "--oracle: unknown selector '{other}' (expected reference, file:<path>, const:true, or const:false)"
        ))),
    }
}

fn resolve_augment(args: AugmentArgs, config: &ConfigFile) -> Result<AugmentSetup, CliError> {
    let stage = resolve_stage(&args, config)?;
    let corpus_path = require(pick(args.corpus, config.corpus.clone()), "corpus")?;
    let out_dir = require(pick(args.out_dir, config.out_dir.clone()), "out-dir")?;
    require_file(&corpus_path, "corpus")?;
    let corpus = load_corpus(&corpus_path).map_err(|e| data_err("corpus", e))?;

    let kb = match pick(args.kb, config.kb.clone()) {
        Some(path) => {
            require_file(&path, "kb")?;
            KnowledgeBase::from_json_file(&path).map_err(|e| data_err("loading kb", e))?
        }
        None => KnowledgeBase::empty(),
    };
    let rules = match pick(args.rules, config.rules.clone()) {
        Some(path) => {
            require_file(&path, "rules")?;
            load_normality_rules(&path).map_err(|e| data_err("loading rules", e))?
        }
        None => Vec::new(),
    };

    let lexicon = pick(args.lexicon, config.lexicon.clone());
    let map = pick(args.map, config.map.clone());
    // A bare `answers` path in the config is shorthand for `file:<path>`.
    let selector = pick(args.oracle, config.oracle.clone()).or_else(|| {
        config
            .answers
            .as_ref()
            .map(|p| format!("file:{}", p.display()))
    });
    let oracle = match stage {
        Stage::NnOnly => None,
        Stage::Full | Stage::BqOnly => {
            let selector = require(selector, "oracle")?;
            Some(resolve_oracle(
                &selector,
                &corpus,
                lexicon.as_ref(),
                map.as_ref(),
            )?)
        }
    };

    Ok(AugmentSetup {
        corpus,
        kb,
        rules,
        oracle,
        out_dir,
        stage,
    })
}

/// Runs the selected stage over one (report, region) pair that carries
/// generated text.
fn augment_region(
    report: &Report,
    region: Region,
    setup: &AugmentSetup,
) -> Result<AugmentedReport, CliError> {
    let run = || -> Result<AugmentedReport, ctreport_core::AugmentError> {
        match setup.stage {
            Stage::Full => augment_pipeline(
                report,
                region,
                &setup.kb,
                &setup.rules,
                setup.oracle.as_ref().expect("oracle resolved for full stage"),
            ),
            Stage::BqOnly => bq_augment(
                report,
                region,
                &setup.kb,
                setup.oracle.as_ref().expect("oracle resolved for bq stage"),
            ),
            Stage::NnOnly => {
                let original = report
                    .generated
                    .get(&region)
                    .expect("caller selects regions with generated text");
                let (final_text, appended_nn) = nn_augment(original, region, &setup.rules)?;
                Ok(AugmentedReport {
                    id: report.id.clone(),
                    region,
                    original_generated: original.clone(),
                    appended_bq: Vec::new(),
                    appended_nn,
                    final_text,
                })
            }
        }
    };
    run().map_err(|e| data_err(&format!("augmenting report '{}'", report.id), e))
}

pub fn run_augment(args: AugmentArgs, config: &ConfigFile, jobs: Option<usize>) -> Result<(), CliError> {
    let setup = resolve_augment(args, config)?;

    let results: Vec<Result<Vec<AugmentedReport>, CliError>> = with_jobs(jobs, || {
        setup
            .corpus
            .reports()
            .par_iter()
            .map(|report| {
                report
                    .generated
                    .keys()
                    .copied()
                    .collect::<Vec<Region>>()
                    .into_iter()
                    .map(|region| augment_region(report, region, &setup))
                    .collect()
            })
            .collect()
    });

    let mut augmented_reports = Vec::with_capacity(setup.corpus.len());
    let mut provenance: Vec<ProvenanceRecord> = Vec::new();
    for (report, result) in setup.corpus.reports().iter().zip(results) {
        let mut updated = report.clone();
        for augmented in result? {
            provenance.extend(augmented.provenance());
            updated
                .generated
                .insert(augmented.region, augmented.final_text);
        }
        augmented_reports.push(updated);
    }
    let augmented_corpus =
        Corpus::from_reports(augmented_reports).map_err(|e| data_err("assembling output", e))?;

    std::fs::create_dir_all(&setup.out_dir)
        .map_err(|e| data_err(&format!("creating '{}'", setup.out_dir.display()), e))?;
    let corpus_path = setup.out_dir.join("augmented.jsonl");
    write_corpus(&augmented_corpus, &corpus_path)
        .map_err(|e| data_err(&format!("writing '{}'", corpus_path.display()), e))?;
    let provenance_path = setup.out_dir.join("provenance.jsonl");
    let mut buffer = Vec::new();
    write_jsonl(&provenance, &mut buffer)
        .map_err(|e| data_err(&format!("writing '{}'", provenance_path.display()), e))?;
    std::fs::write(&provenance_path, buffer)
        .map_err(|e| data_err(&format!("writing '{}'", provenance_path.display()), e))?;
    Ok(())
}
