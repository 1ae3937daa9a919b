use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use spatial_transfer::bench::experiment::{
    self, ExperimentReport, ReportRow, ReportSummary, CSV_HEADER,
};
use spatial_transfer::bench::generators::{
    gen_transfer_scene, GpGridSampler, GpGridSpec, TransferSceneSpec,
};
use spatial_transfer::bench::{run_temporal_experiment, ExperimentConfig};
use spatial_transfer::transfer::{self, AreaModel, TransferProblem};
use spatial_transfer::{AreaDataset, CoordinateSet, ResponseKind, TransferModel};

use crate::config::{ResolvedConfig, Split};
use crate::error::{CliError, Result};
use crate::output::{self, emit, RunMetadata};
use crate::table::{InputTable, PredictionTable};

pub const MODEL_FILE: &str = "model.json";
pub const FIT_SUMMARY_FILE: &str = "fit_summary.json";
pub const REPORT_FILE: &str = "report.csv";
pub const PARTIAL_REPORT_FILE: &str = "report.partial.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Persisted model with its provenance and covariate names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bundle {
    pub metadata: RunMetadata,
    pub covariates: Vec<String>,
    pub model: TransferModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub area_id: String,
    pub role: String,
    pub n: usize,
    pub rank: usize,
    pub kernel_range: f64,
    pub tau2: f64,
    pub alpha: f64,
    pub sigma2: f64,
    pub log_marginal_likelihood: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub metadata: RunMetadata,
    pub areas: Vec<AreaSummary>,
    pub n_features: usize,
    pub trees_grown: usize,
    pub best_iteration: usize,
}

fn area_summary(a: &AreaModel, role: &str) -> AreaSummary {
    AreaSummary {
        area_id: a.area_id.clone(),
        role: role.to_string(),
        n: a.n(),
        rank: a.fit.basis.rank(),
        kernel_range: a.fit.basis.range(),
        tau2: a.fit.hyper.tau2,
        alpha: a.fit.hyper.alpha,
        sigma2: a.fit.hyper.sigma2,
        log_marginal_likelihood: a.fit.log_marginal_likelihood,
        converged: a.fit.converged,
    }
}

/// Target and source datasets named by the config. An empty source list
/// selects every other area of the table.
fn select_areas(
    config: &ResolvedConfig,
    table: &InputTable,
) -> Result<(AreaDataset, Vec<AreaDataset>)> {
    let (target, sources) = area_roster(config, table)?;
    let kind = config.response()?;
    let t = table.dataset(&target, kind)?;
    let s = sources
        .iter()
        .map(|id| table.dataset(id, kind))
        .collect::<Result<Vec<_>>>()?;
    Ok((t, s))
}

fn area_roster(config: &ResolvedConfig, table: &InputTable) -> Result<(String, Vec<String>)> {
    let target = config.target()?;
    let ids = table.area_ids();
    if !ids.contains(&target) {
        return Err(CliError::config(format!(
            "target area `{target}` not found in the input"
        )));
    }
    let mut sources = config.sources();
    if sources.is_empty() {
        sources = ids.into_iter().filter(|id| *id != target).collect();
    }
    if sources.contains(&target) {
        return Err(CliError::config(format!(
            "area `{target}` is both target and source"
        )));
    }
    for (i, s) in sources.iter().enumerate() {
        if !table.area_ids().contains(s) {
            return Err(CliError::config(format!(
                "source area `{s}` not found in the input"
            )));
        }
        if sources[..i].contains(s) {
            return Err(CliError::config(format!("source area `{s}` listed twice")));
        }
    }
    Ok((target, sources))
}

pub fn fit(config: &ResolvedConfig, input: &Path, out: &mut dyn Write) -> Result<FitSummary> {
    let metadata = RunMetadata::new("fit", config)?;
    let options = config.transfer_options()?;
    let table = InputTable::read(input)?;
    let (target, sources) = select_areas(config, &table)?;
    let problem = TransferProblem::new(target, sources)?;
    let model = transfer::train_transfer(&problem, &options)?;

    let mut areas = vec![area_summary(&model.target, "target")];
    areas.extend(model.sources.iter().map(|s| area_summary(s, "source")));
    let summary = FitSummary {
        metadata: metadata.clone(),
        areas,
        n_features: model.ensemble.n_features,
        trees_grown: model.ensemble.trees.len(),
        best_iteration: model.ensemble.best_iteration,
    };
    let bundle = Bundle {
        metadata,
        covariates: table.covariates.clone(),
        model,
    };
    let dir = config.output_dir();
    output::ensure_dir(&dir)?;
    output::write_json(&dir.join(MODEL_FILE), &bundle)?;
    output::write_json(&dir.join(FIT_SUMMARY_FILE), &summary)?;
    emit(out, &render_fit_summary(&summary))?;
    Ok(summary)
}

fn render_fit_summary(s: &FitSummary) -> String {
    let mut t = format!(
        "{:<16} {:<7} {:>6} {:>5} {:>10} {:>10} {:>7} {:>10}\n",
        "area", "role", "n", "L", "range", "tau2", "alpha", "sigma2"
    );
    for a in &s.areas {
        t.push_str(&format!(
            "{:<16} {:<7} {:>6} {:>5} {:>10.4} {:>10.4} {:>7.3} {:>10.4}{}\n",
            a.area_id,
            a.role,
            a.n,
            a.rank,
            a.kernel_range,
            a.tau2,
            a.alpha,
            a.sigma2,
            if a.converged { "" } else { "  (not converged)" }
        ));
    }
    t.push_str(&format!(
        "gbdt: {} features, {} trees grown, best iteration {}\n",
        s.n_features, s.trees_grown, s.best_iteration
    ));
    t
}

pub fn read_bundle(path: &Path) -> Result<Bundle> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    let bundle: Bundle = serde_json::from_str(&text)
        .map_err(|e| CliError::schema(format!("invalid model bundle {}: {e}", path.display())))?;
    // Re-check the inner version through the core loader.
    TransferModel::from_json(&bundle.model.to_json())?;
    Ok(bundle)
}

/// Predictions CSV for every row of `input`, on the target's reporting
/// scale.
pub fn predict(model_path: &Path, input: &Path) -> Result<String> {
    let bundle = read_bundle(model_path)?;
    let table = PredictionTable::read(input)?;
    if table.covariates != bundle.covariates {
        return Err(CliError::schema(format!(
            "prediction covariates {:?} do not match the model's {:?}",
            table.covariates, bundle.covariates
        )));
    }
    let preds = if table.coords.is_empty() {
        Vec::new()
    } else {
        let coords = CoordinateSet::new(table.coords.clone())?;
        transfer::predict_target(&bundle.model, &coords, &table.x)?
    };
    let scale = match bundle.model.target.standardizer.kind {
        ResponseKind::Gaussian => "original",
        ResponseKind::Count => "transformed_standardized",
    };
    let meta = RunMetadata {
        command: "predict".to_string(),
        ..bundle.metadata
    };
    let mut s = meta.csv_header(&[("y_hat_scale", scale)]);
    s.push_str("row_id,y_hat\n");
    for (i, p) in preds.iter().enumerate() {
        s.push_str(&format!("{i},{p}\n"));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKind {
    Toy,
    Transfer,
    Subsample,
}

impl BenchKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchKind::Toy => "toy",
            BenchKind::Transfer => "transfer",
            BenchKind::Subsample => "subsample",
        }
    }
}

fn experiment_config(config: &ResolvedConfig) -> Result<ExperimentConfig> {
    let c = ExperimentConfig {
        n_obs: config.n_obs()?,
        iterations: config.iterations()?,
        methods: config.methods()?,
        seed: config.seed()?,
        options: config.transfer_options()?,
    };
    c.validate()?;
    Ok(c)
}

fn grid_spec(config: &ResolvedConfig) -> Result<GpGridSpec> {
    let spec = GpGridSpec {
        side: config.usize("grid_side")?,
        range: config.f64("grid_range")?,
        nugget: config.f64("grid_nugget")?,
        seed: config.seed()?,
        max_points: config.usize("grid_max_points")?,
    };
    spec.validate()?;
    Ok(spec)
}

fn scene_spec(config: &ResolvedConfig) -> Result<TransferSceneSpec> {
    let spec = TransferSceneSpec::standard(
        config.usize("scene_sources")?,
        config.usize("scene_target_n")?,
        config.usize("scene_source_n")?,
        config.usize("scene_covariates")?,
        config.seed()?,
    );
    spec.validate()?;
    Ok(spec)
}

fn check_n_obs(n_obs: &[usize], n: usize) -> Result<()> {
    match n_obs.iter().find(|&&m| m >= n) {
        Some(m) => Err(CliError::config(format!(
            "n_obs {m} must be below the target size {n}"
        ))),
        None => Ok(()),
    }
}

/// Appends finished cells to the partial report as they complete.
struct PartialReport {
    path: PathBuf,
    file: Mutex<BufWriter<File>>,
}

impl PartialReport {
    fn create(path: PathBuf, meta: &RunMetadata) -> Result<Self> {
        let f = File::create(&path)
            .map_err(|e| CliError::io(format!("cannot create {}", path.display()), e))?;
        let mut w = BufWriter::new(f);
        let head = format!(
            "{}{CSV_HEADER}\n",
            meta.csv_header(&[("status", "partial")])
        );
        w.write_all(head.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
        Ok(Self {
            path,
            file: Mutex::new(w),
        })
    }

    fn append(&self, rows: &[ReportRow]) {
        let mut w = self.file.lock().expect("partial report lock");
        let res = rows
            .iter()
            .try_for_each(|r| writeln!(w, "{}", r.csv_line()))
            .and_then(|_| w.flush());
        if let Err(e) = res {
            log::warn!("cannot append to {}: {e}", self.path.display());
        }
    }

    fn finish(self) -> Result<()> {
        drop(self.file);
        fs::remove_file(&self.path)
            .map_err(|e| CliError::io(format!("cannot remove {}", self.path.display()), e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSummary {
    pub run: RunMetadata,
    pub summary: ReportSummary,
}

/// Runs one benchmark. With `dry_run`, validates the configuration (and
/// input), prints the resolved configuration and stops.
pub fn bench(
    kind: BenchKind,
    config: &ResolvedConfig,
    input: Option<&Path>,
    dry_run: bool,
    out: &mut dyn Write,
) -> Result<Option<ExperimentReport>> {
    let command = format!("bench {}", kind.name());
    let meta = RunMetadata::new(&command, config)?;
    let exp = experiment_config(config)?;
    let dir = config.output_dir();

    enum Plan {
        Toy(GpGridSpec),
        Scene(TransferSceneSpec),
        Table(InputTable, Split),
    }
    let plan = match kind {
        BenchKind::Toy => {
            let spec = grid_spec(config)?;
            check_n_obs(&exp.n_obs, spec.side * spec.side)?;
            if exp.methods.iter().any(|m| m.uses_sources()) {
                return Err(CliError::config("the grid experiment has no source areas"));
            }
            Plan::Toy(spec)
        }
        BenchKind::Transfer => {
            let spec = scene_spec(config)?;
            check_n_obs(&exp.n_obs, spec.areas[0].size)?;
            Plan::Scene(spec)
        }
        BenchKind::Subsample => {
            let path = input.ok_or_else(|| CliError::config("`bench subsample` needs --input"))?;
            let table = InputTable::read(path)?;
            let split = config.split()?;
            let (t, _) = select_areas(config, &table)?;
            match split {
                Split::Random => check_n_obs(&exp.n_obs, t.n())?,
                Split::Temporal { source_window: 0 } => {
                    return Err(CliError::config("`source_window` must be at least 1"))
                }
                Split::Temporal { .. } if !table.has_month => {
                    return Err(CliError::schema("temporal split needs a `month` column"))
                }
                Split::Temporal { .. } => {}
            }
            Plan::Table(table, split)
        }
    };
    if dry_run {
        emit(
            out,
            &format!(
                "{command}: configuration valid\n{}config_sha256 = {}\n",
                config.canonical(),
                meta.config_sha256
            ),
        )?;
        return Ok(None);
    }

    output::ensure_dir(&dir)?;
    let partial = PartialReport::create(dir.join(PARTIAL_REPORT_FILE), &meta)?;
    let sink = |rows: &[ReportRow]| partial.append(rows);
    let report = match plan {
        Plan::Toy(spec) => {
            let sampler = GpGridSampler::new(&spec)?;
            experiment::run_toy_experiment(&sampler, &exp, &sink)?
        }
        Plan::Scene(spec) => {
            let scene = gen_transfer_scene(&spec)?;
            experiment::run_subsample_experiment_with(
                &scene.areas[0],
                &scene.areas[1..],
                &exp,
                &sink,
            )?
        }
        Plan::Table(table, Split::Random) => {
            let (t, s) = select_areas(config, &table)?;
            experiment::run_subsample_experiment_with(&t, &s, &exp, &sink)?
        }
        Plan::Table(table, Split::Temporal { source_window }) => {
            let (target, sources) = area_roster(config, &table)?;
            let kind = config.response()?;
            let t = table.monthly(&target, kind)?;
            let s = sources
                .iter()
                .map(|id| table.monthly(id, kind))
                .collect::<Result<Vec<_>>>()?;
            let r = run_temporal_experiment(&t, &s, source_window, &exp)?;
            sink(&r.rows);
            r
        }
    };

    let csv = format!("{}{}", meta.csv_header(&[]), report.to_csv());
    output::write_file(&dir.join(REPORT_FILE), &csv)?;
    let summary = BenchSummary {
        run: meta,
        summary: report.summary(),
    };
    output::write_json(&dir.join(SUMMARY_FILE), &summary)?;
    partial.finish()?;
    emit(out, &render_summary(&summary.summary))?;
    Ok(Some(report))
}

fn render_summary(s: &ReportSummary) -> String {
    let mut t = format!(
        "{:<9} {:>6} {:>5} {:>10} {:>10} {:>10} {:>10}\n",
        "method", "n_obs", "reps", "rmse_mean", "rmse_med", "rmse_iqr", "mae_mean"
    );
    for c in &s.cells {
        t.push_str(&format!(
            "{:<9} {:>6} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            c.method.name(),
            c.n_obs,
            c.count,
            c.rmse.mean,
            c.rmse.median,
            c.rmse.iqr(),
            c.mae.mean
        ));
    }
    t
}
