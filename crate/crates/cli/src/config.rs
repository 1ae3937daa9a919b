//! Flat `key = value` run configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! key = value
//! list_key = a, b, c
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! lower-case identifiers; a key may appear once per file. Values run to
//! the end of the line and are trimmed. Overrides (`--set key=value` and
//! the dedicated flags) replace file values.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use spatial_transfer::bench::Method;
use spatial_transfer::spatial_model::Likelihood;
use spatial_transfer::spectral::EigenRule;
use spatial_transfer::{BasisOptions, GbdtConfig, ResponseKind, TransferOptions};

use crate::error::{CliError, Result};

/// Every recognised key with its default, in digest order.
const DEFAULTS: &[(&str, &str)] = &[
    ("target", ""),
    ("sources", ""),
    ("response", "gaussian"),
    ("l_max", "auto"),
    ("centered", "true"),
    ("eigen_rule", "connectivity"),
    ("likelihood", "marginal"),
    ("n_trees", "3000"),
    ("max_depth", "3"),
    ("learning_rate", "0.05"),
    ("min_leaf", "5"),
    ("holdout_fraction", "0.5"),
    ("include_coordinates", "false"),
    ("n_obs", "20, 50"),
    ("iterations", "200"),
    ("methods", "LM, SPLM, GBDT_loc, GBDT, Proposed"),
    ("seed", "1"),
    ("output_dir", "."),
    ("split", "random"),
    ("source_window", "1"),
    ("grid_side", "60"),
    ("grid_range", "1"),
    ("grid_nugget", "1"),
    ("grid_max_points", "8192"),
    ("scene_sources", "1"),
    ("scene_target_n", "1000"),
    ("scene_source_n", "2000"),
    ("scene_covariates", "4"),
];

/// Defaults that differ for one `bench` subcommand.
pub fn command_defaults(command: &str) -> &'static [(&'static str, &'static str)] {
    match command {
        "toy" => &[
            ("n_obs", "100, 1000"),
            ("iterations", "20"),
            ("methods", "SPLM, GBDT_loc"),
        ],
        "transfer" => &[("iterations", "50")],
        _ => &[],
    }
}

/// Parses the file grammar into raw entries.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().to_string();
        check_key(&key).map_err(|e| CliError::config(format!("line {}: {e}", i + 1)))?;
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::config(format!(
                "line {}: duplicate key `{key}`",
                i + 1
            )));
        }
    }
    Ok(out)
}

fn check_key(key: &str) -> std::result::Result<(), String> {
    if DEFAULTS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(format!("unknown key `{key}`"))
    }
}

/// Parses one `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{s}` is not key=value")))?;
    let key = k.trim().to_string();
    check_key(&key).map_err(CliError::config)?;
    Ok((key, v.trim().to_string()))
}

/// Merged configuration: defaults, then command defaults, then the file,
/// then overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    values: BTreeMap<String, String>,
}

impl ResolvedConfig {
    pub fn resolve(
        command: &str,
        file: Option<&BTreeMap<String, String>>,
        overrides: &[(String, String)],
    ) -> Self {
        let mut values: BTreeMap<String, String> = DEFAULTS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        for (k, v) in command_defaults(command) {
            values.insert(k.to_string(), v.to_string());
        }
        if let Some(f) = file {
            values.extend(f.clone());
        }
        for (k, v) in overrides {
            values.insert(k.clone(), v.clone());
        }
        Self { values }
    }

    fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// Canonical `key = value` text of every key.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical text without `output_dir`, hex encoded.
    /// Where results are written does not change them.
    pub fn digest(&self) -> String {
        let text: String = self
            .values
            .iter()
            .filter(|(k, _)| k.as_str() != "output_dir")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::config(format!("`{key}` has invalid value `{v}`")))
    }

    fn parse_bool(&self, key: &str) -> Result<bool> {
        match self.get(key).to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(CliError::config(format!(
                "`{key}` must be true or false, got `{v}`"
            ))),
        }
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn target(&self) -> Result<String> {
        let t = self.get("target");
        if t.is_empty() {
            return Err(CliError::config("`target` is required"));
        }
        Ok(t.to_string())
    }

    /// Source ids; empty means every non-target area in the input.
    pub fn sources(&self) -> Vec<String> {
        self.list("sources")
    }

    pub fn response(&self) -> Result<ResponseKind> {
        Ok(self.get("response").parse()?)
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.get("output_dir"))
    }

    pub fn transfer_options(&self) -> Result<TransferOptions> {
        let max_rank = match self.get("l_max") {
            "auto" => None,
            _ => match self.parse::<usize>("l_max") {
                Ok(l) if l > 0 => Some(l),
                _ => {
                    return Err(CliError::config(
                        "`l_max` must be a positive integer or `auto`",
                    ))
                }
            },
        };
        let rule = match self.get("eigen_rule") {
            "connectivity" => EigenRule::Connectivity,
            "positive" => EigenRule::Positive,
            v => {
                return Err(CliError::config(format!(
                    "`eigen_rule` must be connectivity or positive, got `{v}`"
                )))
            }
        };
        let likelihood = match self.get("likelihood") {
            "marginal" => Likelihood::Marginal,
            "mean_restricted" => Likelihood::MeanRestricted,
            v => {
                return Err(CliError::config(format!(
                    "`likelihood` must be marginal or mean_restricted, got `{v}`"
                )))
            }
        };
        let gbdt = GbdtConfig {
            n_trees: self.parse("n_trees")?,
            max_depth: self.parse("max_depth")?,
            learning_rate: self.parse("learning_rate")?,
            min_leaf: self.parse("min_leaf")?,
            holdout_fraction: self.parse("holdout_fraction")?,
            seed: self.seed()?,
            ..GbdtConfig::default()
        };
        gbdt.validate()?;
        let mut options = TransferOptions {
            gbdt,
            basis: BasisOptions {
                max_rank,
                centered: self.parse_bool("centered")?,
                rule,
            },
            include_coordinates: self.parse_bool("include_coordinates")?,
            ..TransferOptions::default()
        };
        options.spatial.likelihood = likelihood;
        Ok(options)
    }

    pub fn n_obs(&self) -> Result<Vec<usize>> {
        self.list("n_obs")
            .iter()
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::config(format!("`n_obs` entry `{v}` is not an integer")))
            })
            .collect()
    }

    pub fn iterations(&self) -> Result<usize> {
        self.parse("iterations")
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        Ok(self
            .list("methods")
            .iter()
            .map(|m| m.parse())
            .collect::<spatial_transfer::Result<_>>()?)
    }

    pub fn split(&self) -> Result<Split> {
        match self.get("split") {
            "random" => Ok(Split::Random),
            "temporal" => Ok(Split::Temporal {
                source_window: self.parse("source_window")?,
            }),
            v => Err(CliError::config(format!(
                "`split` must be random or temporal, got `{v}`"
            ))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Random,
    Temporal { source_window: usize },
}
