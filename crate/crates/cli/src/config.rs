//! Run configuration: an optional JSON manifest whose values fill in any
//! flag the command line leaves unset. Flags always win.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{validation, CliError};

/// Every setting any subcommand understands, all optional. Unknown keys are
/// rejected so manifest typos fail loudly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    pub triplets: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    #[serde(rename = "ref")]
    pub reference: Option<PathBuf>,
    pub external_scores: Option<PathBuf>,
    pub oracle: Option<String>,
    pub source: Option<String>,
    pub metrics: Option<Vec<String>>,
    pub max_n: Option<usize>,
    pub out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub bq_only: Option<bool>,
    pub nn_only: Option<bool>,
    pub vol: Option<String>,
    pub patch: Option<String>,
    pub crop: Option<String>,
    pub global: Option<String>,
    pub projector: Option<String>,
    pub pool: Option<String>,
    pub down: Option<String>,
    pub embed_dim: Option<usize>,
    pub out_dim: Option<usize>,
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| {
        validation(format!("--config: cannot read '{}': {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| validation(format!("--config: '{}' is not valid: {e}", path.display())))
}

/// Flag value if present, otherwise the manifest value.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Unwraps a merged setting, naming the flag that would supply it.
pub fn require<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| validation(format!("missing required setting --{flag}")))
}

/// Validates that an input path exists before any processing starts.
pub fn require_file(path: &Path, flag: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(validation(format!("--{flag}: file '{}' does not exist", path.display())))
    }
}

/// Runs `f` on a thread pool of the requested width; `None` uses the
/// default pool. Results are ordered by input, never by scheduling.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool construction")
            .install(f),
        None => f(),
    }
}
