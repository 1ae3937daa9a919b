//! File outputs and their provenance header.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ResolvedConfig;
use crate::error::{CliError, Result};

pub const TOOL: &str = "sptransfer";

/// Provenance carried by every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
}

impl RunMetadata {
    pub fn new(command: &str, config: &ResolvedConfig) -> Result<Self> {
        Ok(Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed()?,
            config_sha256: config.digest(),
        })
    }

    /// `# key = value` comment lines that precede a CSV header.
    pub fn csv_header(&self, extra: &[(&str, &str)]) -> String {
        let mut s = format!(
            "# tool = {} {}\n# command = {}\n# seed = {}\n# config_sha256 = {}\n",
            self.tool, self.version, self.command, self.seed, self.config_sha256
        );
        for (k, v) in extra {
            s.push_str(&format!("# {k} = {v}\n"));
        }
        s
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("outputs serialize");
    s.push('\n');
    write_file(path, &s)
}

pub fn emit(out: &mut dyn Write, s: &str) -> Result<()> {
    out.write_all(s.as_bytes())
        .map_err(|e| CliError::io("cannot write to standard output", e))
}
