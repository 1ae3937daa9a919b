//! One-step-ahead temporal splits over month-stamped rows.

use rayon::prelude::*;

use super::experiment::{self, ExperimentConfig, ExperimentReport, ReportRow};
use super::methods::{self, CellInputs};
use super::{metrics, rng};
use crate::error::{Error, Result};
use crate::transfer::{self, AreaDataset};

/// Parses `yyyy-mm` into a month index.
pub fn parse_month(s: &str) -> Result<i64> {
    let bad = || Error::input(format!("invalid month `{s}` (expected yyyy-mm)"));
    let (y, m) = s.split_once('-').ok_or_else(bad)?;
    if y.len() != 4 || m.len() != 2 {
        return Err(bad());
    }
    let year: i64 = y.parse().map_err(|_| bad())?;
    let month: i64 = m.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&month) {
        return Err(bad());
    }
    Ok(year * 12 + month - 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonthSplit {
    pub train_month: String,
    pub test_month: String,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Train on month `t`, test on `t + 1`, for every `t` whose following
/// calendar month is present. Splits are in chronological order.
pub fn month_splits(months: &[String]) -> Result<Vec<MonthSplit>> {
    let idx = months
        .iter()
        .map(|m| parse_month(m))
        .collect::<Result<Vec<_>>>()?;
    let mut distinct: Vec<(i64, &str)> = idx
        .iter()
        .copied()
        .zip(months.iter().map(String::as_str))
        .collect();
    distinct.sort_unstable();
    distinct.dedup_by_key(|(i, _)| *i);
    let rows_of = |m: i64| -> Vec<usize> { (0..idx.len()).filter(|&r| idx[r] == m).collect() };
    Ok(distinct
        .windows(2)
        .filter(|w| w[1].0 == w[0].0 + 1)
        .map(|w| MonthSplit {
            train_month: w[0].1.to_string(),
            test_month: w[1].1.to_string(),
            train_rows: rows_of(w[0].0),
            test_rows: rows_of(w[1].0),
        })
        .collect())
}

/// An area whose rows carry a `yyyy-mm` stamp.
#[derive(Debug, Clone)]
pub struct MonthlyArea {
    pub data: AreaDataset,
    pub months: Vec<String>,
}

impl MonthlyArea {
    pub fn new(data: AreaDataset, months: Vec<String>) -> Result<Self> {
        if months.len() != data.n() {
            return Err(Error::input(format!(
                "area `{}`: {} rows but {} month stamps",
                data.area_id,
                data.n(),
                months.len()
            )));
        }
        for m in &months {
            parse_month(m)?;
        }
        Ok(Self { data, months })
    }

    /// Rows stamped within the `window` months ending at `last`.
    fn window(&self, last: i64, window: usize) -> Result<Option<AreaDataset>> {
        let first = last - window as i64 + 1;
        let mut rows = Vec::new();
        for (i, m) in self.months.iter().enumerate() {
            if (first..=last).contains(&parse_month(m)?) {
                rows.push(i);
            }
        }
        if rows.is_empty() {
            return Ok(None);
        }
        self.data.subset(&rows).map(Some)
    }
}

/// One-step-ahead evaluation: for every consecutive month pair of the
/// target, observe the target rows of month `t` and the source rows of the
/// `source_window` months ending at `t`, then score the target rows of
/// `t + 1`. Row `iteration` is the split index and `n_obs` the number of
/// observed target rows. Sources with no rows in a window are skipped.
/// `config.n_obs` and `config.iterations` are ignored.
pub fn run_temporal_experiment(
    target: &MonthlyArea,
    sources: &[MonthlyArea],
    source_window: usize,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    if source_window == 0 {
        return Err(Error::config("source window must be at least 1 month"));
    }
    let splits = month_splits(&target.months)?;
    if splits.is_empty() {
        return Err(Error::config(format!(
            "target `{}` has no two consecutive months",
            target.data.area_id
        )));
    }
    let per_split = splits
        .par_iter()
        .enumerate()
        .map(|(it, split)| -> Result<Vec<ReportRow>> {
            let observed = target.data.subset(&split.train_rows)?;
            let held_out = target.data.subset(&split.test_rows)?;
            let last = parse_month(&split.train_month)?;
            let mut source_models = Vec::new();
            if config.methods.iter().any(|m| m.uses_sources()) {
                for s in sources {
                    if let Some(ds) = s.window(last, source_window)? {
                        source_models.push(transfer::pretrain_area(&ds, &config.options)?);
                    }
                }
            }
            let mut options = config.options.clone();
            options.gbdt.seed = rng::derive_seed(config.seed, &[0x7465_6d70, it as u64]);
            let inputs = CellInputs {
                observed: &observed,
                held_out: &held_out,
                sources: &source_models,
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
                        n_obs: observed.n(),
                        iteration: it,
                        rmse: metrics::rmse(&truth, &p)?,
                        mae: metrics::mae(&truth, &p)?,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ReportRow> = per_split.into_iter().flatten().collect();
    let mut n_obs: Vec<usize> = rows.iter().map(|r| r.n_obs).collect();
    n_obs.sort_unstable();
    n_obs.dedup();
    let names: Vec<String> = sources.iter().map(|s| s.data.area_id.clone()).collect();
    let mut meta_config = config.clone();
    meta_config.n_obs = n_obs;
    meta_config.iterations = splits.len();
    Ok(ExperimentReport {
        metadata: experiment::metadata(&target.data.area_id, &names, &meta_config),
        rows,
    })
}
