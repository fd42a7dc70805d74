//! Toolkit for working with machine-generated CT radiology reports.
//!
//! The crate covers four areas:
//!
//! - **Corpora** ([`corpus`]): multi-region report records (chest, abdomen,
//!   pelvis) with JSONL persistence.
//! - **Structuring** ([`triplets`], [`oracle`]): rule-based extraction of
//!   `{entity, position, exist}` triplets from findings text, canonical
//!   rewriting of variant phrasings, binary question rendering, and answer
//!   sources for those questions.
//! - **Augmentation** ([`augment`]): appending findings to generated reports,
//!   either by querying an answer source about commonly missed triplets
//!   (binary-based questioning) or by asserting normality for organs a report
//!   never mentions (naive normality).
//! - **Visual geometry** ([`vol3d`]): token arithmetic for 3D patch
//!   tokenization, multi-crop planning for high-resolution volumes, and
//!   reference forward passes of MLP, SPP, and TokenPacker-style projectors
//!   with seeded weights.
//!
//! Text evaluation ([`metrics`]) ties the pieces together: BLEU, ROUGE-1/L,
//! METEOR, and a triplet-level F1 that scores clinical content rather than
//! surface wording.

pub mod augment;
pub mod corpus;
pub mod metrics;
pub mod oracle;
pub mod triplets;
pub mod vol3d;

pub use augment::{
    augment_pipeline, bq_augment, keyword_present, load_normality_rules, nn_augment,
    AugmentError, AugmentedReport, BqAppend, KnowledgeBase, NnAppend, NormalityRule,
    ProvenanceRecord,
};
pub use corpus::{load_corpus, write_corpus, Corpus, CorpusError, Region, Report};
pub use oracle::{load_answers, AnswerKey, AnswerSource, OracleError};
pub use metrics::{bleu, evaluate_corpus, meteor, rouge, tokenize, triplet_f1, EvalConfig,
    MetricError, MetricReport};
pub use triplets::{
    canonicalize, extract_triplets, render_question, report_to_triplets, split_sentences,
    CanonicalMap, Lexicon, Question, Triplet, TripletError,
};
pub use vol3d::{
    anyres_plan, anyres_token_budget, concat_streams, mean_pool, mlp_project, spp_project,
    token_count, tokenpacker3d_project, CropPlan, GridShape, Kernel3, MlpProjector, PatchDims,
    TokenGrid, TokenPacker3d, Vol3dError, VolumeDims,
};
