//! The triplet flow: `extract` mines reports into triplet records,
//! `canonicalize` rewrites stored records through a canonical map, and
//! `questions` renders the binary question for every extracted triplet.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;

use ctreport_core::corpus::{load_corpus, Corpus, Report};
use ctreport_core::triplets::{
    load_triplet_records, render_question, report_to_triplets, write_jsonl, CanonicalMap,
    Lexicon, QuestionRecord, TripletRecord,
};

use crate::config::{pick, require, require_file, with_jobs, ConfigFile};
use crate::error::{data_err, validation, CliError};
use crate::output::write_payload;

/// Which report text a command mines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TextSource {
    /// Reference findings written by a radiologist.
    Findings,
    /// Machine-generated report text.
    Generated,
}

impl TextSource {
    fn from_setting(s: &str) -> Result<Self, CliError> {
        match s {
            "findings" => Ok(TextSource::Findings),
            "generated" => Ok(TextSource::Generated),
            other => Err(validation(format!(
                "--source must be 'findings' or 'generated', got '{other}'"
            ))),
        }
    }

    fn text<'a>(
        &self,
        report: &'a Report,
        region: ctreport_core::corpus::Region,
    ) -> Option<&'a String> {
        match self {
            TextSource::Findings => report.findings.get(&region),
            TextSource::Generated => report.generated.get(&region),
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Corpus JSONL to mine.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Lexicon JSON (entities, positions, negation cues).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Canonical map JSON; omitted means no rewriting.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Which report text to mine [default: findings].
    #[arg(long, value_enum)]
    source: Option<TextSource>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Shared inputs of `extract` and `questions`.
struct ExtractSetup {
    corpus: Corpus,
    lexicon: Lexicon,
    map: CanonicalMap,
    source: TextSource,
    out: Option<PathBuf>,
}

fn resolve_extract(args: ExtractArgs, config: &ConfigFile) -> Result<ExtractSetup, CliError> {
    let corpus_path = require(pick(args.corpus, config.corpus.clone()), "corpus")?;
    let lexicon_path = require(pick(args.lexicon, config.lexicon.clone()), "lexicon")?;
    let map_path = pick(args.map, config.map.clone());
    let source = match args.source {
        Some(s) => s,
        None => match &config.source {
            Some(s) => TextSource::from_setting(s)?,
            None => TextSource::Findings,
        },
    };
    require_file(&corpus_path, "corpus")?;
    require_file(&lexicon_path, "lexicon")?;
    if let Some(p) = &map_path {
        require_file(p, "map")?;
    }
    let corpus = load_corpus(&corpus_path).map_err(|e| data_err("corpus", e))?;
    let lexicon = Lexicon::from_json_file(&lexicon_path).map_err(|e| data_err("lexicon", e))?;
    let map = match &map_path {
        Some(p) => CanonicalMap::from_json_file(p).map_err(|e| data_err("canonical map", e))?,
        None => CanonicalMap::empty(),
    };
    Ok(ExtractSetup { corpus, lexicon, map, source, out: pick(args.out, config.out.clone()) })
}

pub fn run_extract(
    args: ExtractArgs,
    config: &ConfigFile,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    let setup = resolve_extract(args, config)?;
    let records: Vec<Vec<TripletRecord>> = with_jobs(jobs, || {
        setup
            .corpus
            .reports()
            .par_iter()
            .map(|report| {
                let mut rows = Vec::new();
                for region in report.regions() {
                    let Some(text) = setup.source.text(report, region) else {
                        continue;
                    };
                    for t in report_to_triplets(text, &setup.lexicon, &setup.map) {
                        rows.push(TripletRecord {
                            id: report.id.clone(),
                            region: Some(region),
                            entity: t.entity,
                            position: t.position,
                            exist: t.exist,
                        });
                    }
                }
                rows
            })
            .collect()
    });
    let flat: Vec<TripletRecord> = records.into_iter().flatten().collect();
    let mut buffer = Vec::new();
    write_jsonl(&flat, &mut buffer).map_err(|e| data_err("triplet output", e))?;
    write_payload(setup.out.as_deref(), &buffer)
}

#[derive(Debug, Args)]
pub struct CanonicalizeArgs {
    /// Triplet records JSONL to rewrite.
    #[arg(long)]
    triplets: Option<PathBuf>,
    /// Canonical map JSON.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run_canonicalize(args: CanonicalizeArgs, config: &ConfigFile) -> Result<(), CliError> {
    let triplets_path = require(pick(args.triplets, config.triplets.clone()), "triplets")?;
    let map_path = require(pick(args.map, config.map.clone()), "map")?;
    let out = pick(args.out, config.out.clone());
    require_file(&triplets_path, "triplets")?;
    require_file(&map_path, "map")?;
    let records =
        load_triplet_records(&triplets_path).map_err(|e| data_err("triplet records", e))?;
    let map = CanonicalMap::from_json_file(&map_path).map_err(|e| data_err("canonical map", e))?;
    let rewritten: Vec<TripletRecord> = records
        .into_iter()
        .map(|record| {
            let triplet = record.triplet().map_err(|e| data_err("triplet records", e))?;
            let canonical = ctreport_core::triplets::canonicalize(&triplet, &map);
            Ok(TripletRecord {
                id: record.id,
                region: record.region,
                entity: canonical.entity,
                position: canonical.position,
                exist: canonical.exist,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let mut buffer = Vec::new();
    write_jsonl(&rewritten, &mut buffer).map_err(|e| data_err("triplet output", e))?;
    write_payload(out.as_deref(), &buffer)
}

#[derive(Debug, Args)]
pub struct QuestionsArgs {
    #[command(flatten)]
    extract: ExtractArgs,
}

pub fn run_questions(
    args: QuestionsArgs,
    config: &ConfigFile,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    let setup = resolve_extract(args.extract, config)?;
    let records: Vec<Result<Vec<QuestionRecord>, CliError>> = with_jobs(jobs, || {
        setup
            .corpus
            .reports()
            .par_iter()
            .map(|report| {
                let mut rows = Vec::new();
                for region in report.regions() {
                    let Some(text) = setup.source.text(report, region) else {
                        continue;
                    };
                    for t in report_to_triplets(text, &setup.lexicon, &setup.map) {
                        let question =
                            render_question(&t).map_err(|e| data_err("question", e))?;
                        rows.push(QuestionRecord {
                            id: report.id.clone(),
                            region: Some(region),
                            text: question.text,
                            entity: t.entity,
                            position: t.position,
                            exist: t.exist,
                        });
                    }
                }
                Ok(rows)
            })
            .collect()
    });
    let mut flat = Vec::new();
    for batch in records {
        flat.extend(batch?);
    }
    let mut buffer = Vec::new();
    write_jsonl(&flat, &mut buffer).map_err(|e| data_err("question output", e))?;
    write_payload(setup.out.as_deref(), &buffer)
}
