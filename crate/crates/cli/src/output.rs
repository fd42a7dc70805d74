//! Payload output: stdout by default, a file when `--out` is given.

use std::io::Write;
use std::path::Path;

use crate::error::{data_err, CliError};

pub fn write_payload(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| data_err(&format!("cannot write '{}'", path.display()), e)),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(bytes).map_err(|e| data_err("cannot write to stdout", e))?;
            lock.flush().map_err(|e| data_err("cannot write to stdout", e))
        }
    }
}
