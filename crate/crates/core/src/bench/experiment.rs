//! Monte-Carlo subsampling experiments.
//!
//! A cell is one `(n_obs, iteration)` pair. Its subsample and the GBDT
//! holdout seed are drawn from streams keyed by `(seed, n_obs, iteration)`,
//! so a cell recomputed on its own matches the same cell of a full run.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::GpGridSampler;
use super::methods::{self, CellInputs, Method};
use super::metrics::{self, quantile};
use super::rng;
use crate::error::{Error, Result};
use crate::transfer::{self, AreaDataset, AreaModel, TransferOptions};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "method,n_obs,iteration,rmse,mae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_obs: Vec<usize>,
    pub iterations: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub options: TransferOptions,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.n_obs.is_empty() || self.n_obs.contains(&0) {
            return Err(Error::config("n_obs list must be non-empty and positive"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods requested"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::config(format!("method {m} listed twice")));
            }
        }
        self.options.gbdt.validate()
    }

    fn needs_sources(&self) -> bool {
        self.methods.iter().any(|m| m.uses_sources())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub n_obs: usize,
    pub iteration: usize,
    pub rmse: f64,
    pub mae: f64,
}

impl ReportRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.method, self.n_obs, self.iteration, self.rmse, self.mae
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub iterations: usize,
    pub n_obs: Vec<usize>,
    pub methods: Vec<Method>,
    pub target: String,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: quantile(values, 0.0),
            q25: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q75: quantile(values, 0.75),
            max: quantile(values, 1.0),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub method: Method,
    pub n_obs: usize,
    pub count: usize,
    pub rmse: Stats,
    pub mae: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub metadata: ReportMetadata,
    pub cells: Vec<SummaryCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    /// Ordered by `n_obs` (as configured), iteration, then method.
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn cell(&self, method: Method, n_obs: usize, iteration: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.n_obs == n_obs && r.iteration == iteration)
    }

    pub fn rmse_values(&self, method: Method, n_obs: usize) -> Vec<f64> {
        self.select(method, n_obs).map(|r| r.rmse).collect()
    }

    pub fn mae_values(&self, method: Method, n_obs: usize) -> Vec<f64> {
        self.select(method, n_obs).map(|r| r.mae).collect()
    }

    fn select(&self, method: Method, n_obs: usize) -> impl Iterator<Item = &ReportRow> {
        self.rows
            .iter()
            .filter(move |r| r.method == method && r.n_obs == n_obs)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> ReportSummary {
        let mut cells = Vec::new();
        for &n in &self.metadata.n_obs {
            for &m in &self.metadata.methods {
                let rmse = self.rmse_values(m, n);
                if rmse.is_empty() {
                    continue;
                }
                cells.push(SummaryCell {
                    method: m,
                    n_obs: n,
                    count: rmse.len(),
                    rmse: Stats::of(&rmse),
                    mae: Stats::of(&self.mae_values(m, n)),
                });
            }
        }
        ReportSummary {
            metadata: self.metadata.clone(),
            cells,
        }
    }
}

pub(crate) fn metadata(
    target: &str,
    sources: &[String],
    config: &ExperimentConfig,
) -> ReportMetadata {
    ReportMetadata {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        iterations: config.iterations,
        n_obs: config.n_obs.clone(),
        methods: config.methods.clone(),
        target: target.to_string(),
        sources: sources.to_vec(),
    }
}

/// Pre-trains the sources once for all cells. Empty when no requested
/// method reads them.
pub fn prepare_sources(
    sources: &[AreaDataset],
    config: &ExperimentConfig,
) -> Result<Vec<AreaModel>> {
    if !config.needs_sources() {
        return Ok(Vec::new());
    }
    sources
        .par_iter()
        .map(|s| transfer::pretrain_area(s, &config.options))
        .collect()
}

/// Observed and held-out parts of `target` for one cell.
pub fn cell_split(n: usize, n_obs: usize, seed: u64, iteration: usize) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng::stream(seed, &[n_obs as u64, iteration as u64]);
    let mut observed = index::sample(&mut r, n, n_obs).into_vec();
    observed.sort_unstable();
    let mut is_obs = vec![false; n];
    for &i in &observed {
        is_obs[i] = true;
    }
    let held = (0..n).filter(|&i| !is_obs[i]).collect();
    (observed, held)
}

/// One cell of the experiment.
pub fn run_cell(
    target: &AreaDataset,
    source_models: &[AreaModel],
    config: &ExperimentConfig,
    n_obs: usize,
    iteration: usize,
) -> Result<Vec<ReportRow>> {
    if n_obs >= target.n() {
        return Err(Error::config(format!(
            "n_obs {n_obs} must be below the target size {}",
            target.n()
        )));
    }
    let (obs_idx, held_idx) = cell_split(target.n(), n_obs, config.seed, iteration);
    let observed = target.subset(&obs_idx)?;
    let held_out = target.subset(&held_idx)?;
    let mut options = config.options.clone();
    options.gbdt.seed = rng::derive_seed(config.seed, &[n_obs as u64, iteration as u64, 1]);
    let inputs = CellInputs {
        observed: &observed,
        held_out: &held_out,
        sources: source_models,
        options: &options,
    };
    let (preds, truth) = methods::predict_methods(&inputs, &config.methods)?;
    config
        .methods
        .iter()
        .zip(preds)
        .map(|(&method, p)| {
            Ok(ReportRow {
                method,
                n_obs,
                iteration,
                rmse: metrics::rmse(&truth, &p)?,
                mae: metrics::mae(&truth, &p)?,
            })
        })
        .collect()
}

fn cells(config: &ExperimentConfig) -> Vec<(usize, usize)> {
    config
        .n_obs
        .iter()
        .flat_map(|&n| (0..config.iterations).map(move |it| (n, it)))
        .collect()
}

fn run_cells<F>(
    config: &ExperimentConfig,
    on_cell: &(dyn Fn(&[ReportRow]) + Sync),
    f: F,
) -> Result<Vec<ReportRow>>
where
    F: Fn(usize, usize) -> Result<Vec<ReportRow>> + Sync,
{
    let per_cell = cells(config)
        .into_par_iter()
        .map(|(n, it)| {
            let rows = f(n, it).inspect_err(|e| {
                log::error!("cell n_obs={n}, iteration={it} failed: {e}");
            })?;
            on_cell(&rows);
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

pub fn run_subsample_experiment(
    target: &AreaDataset,
    sources: &[AreaDataset],
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    run_subsample_experiment_with(target, sources, config, &|_| {})
}

/// As [`run_subsample_experiment`], calling `on_cell` with each finished
/// cell's rows, in completion order.
pub fn run_subsample_experiment_with(
    target: &AreaDataset,
    sources: &[AreaDataset],
    config: &ExperimentConfig,
    on_cell: &(dyn Fn(&[ReportRow]) + Sync),
) -> Result<ExperimentReport> {
    config.validate()?;
    if let Some(&n) = config.n_obs.iter().find(|&&n| n >= target.n()) {
        return Err(Error::config(format!(
            "n_obs {n} must be below the target size {}",
            target.n()
        )));
    }
    let k = target.n_covariates();
    if let Some(s) = sources.iter().find(|s| s.n_covariates() != k) {
        return Err(Error::config(format!(
            "source `{}` has {} covariates, target has {k}",
            s.area_id,
            s.n_covariates()
        )));
    }
    let source_models = prepare_sources(sources, config)?;
    let rows = run_cells(config, on_cell, |n, it| {
        run_cell(target, &source_models, config, n, it)
    })?;
    let names: Vec<String> = sources.iter().map(|s| s.area_id.clone()).collect();
    Ok(ExperimentReport {
        metadata: metadata(&target.area_id, &names, config),
        rows,
    })
}

/// Seed of the field drawn for one toy iteration.
pub fn toy_field_seed(seed: u64, iteration: usize) -> u64 {
    rng::derive_seed(seed, &[0x0074_6f79, iteration as u64])
}

/// Single-area GP-on-grid experiment: each iteration draws a fresh field
/// (shared by every `n_obs`), observes a random subsample and scores the
/// remaining grid points.
pub fn run_toy_experiment(
    sampler: &GpGridSampler,
    config: &ExperimentConfig,
    on_cell: &(dyn Fn(&[ReportRow]) + Sync),
) -> Result<ExperimentReport> {
    config.validate()?;
    if config.needs_sources() {
        return Err(Error::config("the grid experiment has no source areas"));
    }
    let n = sampler.spec().side.pow(2);
    if let Some(&m) = config.n_obs.iter().find(|&&m| m >= n) {
        return Err(Error::config(format!(
            "n_obs {m} must be below the grid size {n}"
        )));
    }
    let rows = run_cells(config, on_cell, |n_obs, it| {
        let field = sampler.draw(toy_field_seed(config.seed, it)).data;
        run_cell(&field, &[], config, n_obs, it)
    })?;
    Ok(ExperimentReport {
        metadata: metadata("grid", &[], config),
        rows,
    })
}
