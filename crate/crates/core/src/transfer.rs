//! The transfer pipeline.
//!
//! 1. Standardize every area separately (count areas are transformed first).
//! 2. Fit a spatial regression per area, giving the local feature `z_hat`
//!    at its observed sites.
//! 3. Pool all areas' rows with features `(x_1..x_K, z_hat)` and train one
//!    boosted-tree ensemble on the standardized responses.
//! 4. Predict the target at new sites from its standardized covariates and
//!    the Nyström-extended `z_hat`.
//!
//! Spatial coordinates are not GBDT features unless
//! [`TransferOptions::include_coordinates`] is set.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::CountTransform;
use crate::error::{Error, Result};
use crate::gbdt::{self, GbdtConfig, GbdtEnsemble};
use crate::geo::CoordinateSet;
use crate::spatial_model::{self, SpatialFit, SpatialFitOptions, SpatialTrainingData};
use crate::spectral::{self, BasisOptions};

/// Bundle format version written by [`TransferModel::to_json`].
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Gaussian,
    Count,
}

impl std::str::FromStr for ResponseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "count" => Ok(Self::Count),
            other => Err(Error::config(format!(
                "unknown response kind `{other}` (expected gaussian or count)"
            ))),
        }
    }
}

/// Raw observations for one area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaDataset {
    pub area_id: String,
    pub coords: CoordinateSet,
    /// `n x K` covariates.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub kind: ResponseKind,
}

impl AreaDataset {
    pub fn new(
        area_id: impl Into<String>,
        coords: CoordinateSet,
        x: DMatrix<f64>,
        y: DVector<f64>,
        kind: ResponseKind,
    ) -> Result<Self> {
        let area_id = area_id.into();
        let n = coords.len();
        if x.nrows() != n || y.len() != n {
            return Err(Error::input(format!(
                "area `{area_id}`: {n} sites, {} covariate rows, {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input(format!("area `{area_id}`: non-finite value")));
        }
        if kind == ResponseKind::Count && y.iter().any(|&c| c < 0.0 || c.fract() != 0.0) {
            return Err(Error::input(format!(
                "area `{area_id}`: count responses must be nonnegative integers"
            )));
        }
        Ok(Self {
            area_id,
            coords,
            x,
            y,
            kind,
        })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `indices` as a new dataset with the same id and kind.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(indices);
        let y = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.y[i]));
        Self::new(
            self.area_id.clone(),
            self.coords.select(indices)?,
            x,
            y,
            self.kind,
        )
    }
}

/// Mean and population standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub sd: f64,
    /// Zero variance: standardized values are all zero.
    pub constant: bool,
}

impl ColumnScale {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let constant = !(sd > 1e-12 * mean.abs().max(1.0));
        Self {
            mean,
            sd: if constant { 1.0 } else { sd },
            constant,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            (v - self.mean) / self.sd
        }
    }

    pub fn invert(&self, s: f64) -> f64 {
        if self.constant {
            self.mean
        } else {
            s * self.sd + self.mean
        }
    }
}

/// Per-area scaling of covariates and response. For count areas the
/// response scale refers to the transformed counts and `count_q` holds the
/// area's zero share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x: Vec<ColumnScale>,
    pub y: ColumnScale,
    pub kind: ResponseKind,
    pub count_q: Option<f64>,
}

impl Standardizer {
    pub fn standardize_x(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.x.len() {
            return Err(Error::input(format!(
                "expected {} covariate columns, got {}",
                self.x.len(),
                x.ncols()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            self.x[j].apply(x[(i, j)])
        }))
    }

    /// Raw response to the modelling scale (transformed for counts, then
    /// standardized).
    pub fn standardize_y(&self, raw: f64) -> f64 {
        match self.count_q {
            Some(q) => self.y.apply(CountTransform { q }.response(raw)),
            None => self.y.apply(raw),
        }
    }

    /// Modelling scale back to the scale predictions are reported on: the
    /// original units for Gaussian areas, the transformed standardized scale
    /// (unchanged) for count areas.
    pub fn report_y(&self, s: f64) -> f64 {
        match self.kind {
            ResponseKind::Gaussian => self.y.invert(s),
            ResponseKind::Count => s,
        }
    }

    /// Raw response on the reporting scale of [`Standardizer::report_y`].
    pub fn report_truth(&self, raw: f64) -> f64 {
        self.report_y(self.standardize_y(raw))
    }
}

/// Output of [`standardize_area`].
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedArea {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Sample weights: `c + 0.5` for counts, 1 otherwise.
    pub w: DVector<f64>,
}

pub fn standardize_area(ds: &AreaDataset) -> Result<(StandardizedArea, Standardizer)> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::input(format!(
            "area `{}`: standardization needs at least 2 rows, got {n}",
            ds.area_id
        )));
    }
    let (y_model, w, count_q) = match ds.kind {
        ResponseKind::Gaussian => (ds.y.clone(), DVector::from_element(n, 1.0), None),
        ResponseKind::Count => {
            let t = crate::counts::poisson_transform(ds.y.as_slice())?;
            (DVector::from_vec(t.y), DVector::from_vec(t.w), Some(t.q))
        }
    };
    let x_scales: Vec<ColumnScale> = (0..ds.n_covariates())
        .map(|j| ColumnScale::fit(ds.x.column(j).iter().copied()))
        .collect();
    for (j, s) in x_scales.iter().enumerate() {
        if s.constant {
            log::warn!(
                "area `{}`: covariate {j} is constant; using zeros",
                ds.area_id
            );
        }
    }
    let y_scale = ColumnScale::fit(y_model.iter().copied());
    let st = Standardizer {
        x: x_scales,
        y: y_scale,
        kind: ds.kind,
        count_q,
    };
    let x = st.standardize_x(&ds.x)?;
    let y = y_model.map(|v| y_scale.apply(v));
    Ok((StandardizedArea { x, y, w }, st))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferOptions {
    pub gbdt: GbdtConfig,
    pub basis: BasisOptions,
    pub spatial: SpatialFitOptions,
    /// Append the raw site coordinates as two extra GBDT features.
    pub include_coordinates: bool,
}

/// One area's pre-trained spatial model and its pooled-training rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaModel {
    pub area_id: String,
    pub standardizer: Standardizer,
    pub fit: SpatialFit,
    /// Standardized covariates at the observed sites.
    pub x: DMatrix<f64>,
    /// Standardized (transformed) responses.
    pub y: DVector<f64>,
    pub w: DVector<f64>,
    /// Pooled-model training residuals `y - f(x, z_hat)`; empty until the
    /// ensemble is trained.
    pub residuals: Vec<f64>,
}

impl AreaModel {
    /// Local feature at the observed sites.
    pub fn z_hat(&self) -> &DVector<f64> {
        &self.fit.fitted_z
    }

    pub fn coords(&self) -> &CoordinateSet {
        self.fit.basis.coords()
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Standardizes one area and fits its spatial model.
pub fn pretrain_area(ds: &AreaDataset, options: &TransferOptions) -> Result<AreaModel> {
    let run = || -> Result<AreaModel> {
        let (st, standardizer) = standardize_area(ds)?;
        let basis = spectral::eigenbasis(&ds.coords, &options.basis)?;
        let data = SpatialTrainingData::new(st.x.clone(), st.y.clone(), st.w.clone(), basis)?;
        let fit = spatial_model::fit_spatial(&data, &options.spatial)?;
        Ok(AreaModel {
            area_id: ds.area_id.clone(),
            standardizer,
            fit,
            x: st.x,
            y: st.y,
            w: st.w,
            residuals: Vec::new(),
        })
    };
    run().map_err(|e| e.in_area(&ds.area_id))
}

/// A target area and its sources.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferProblem {
    pub target: AreaDataset,
    pub sources: Vec<AreaDataset>,
}

impl TransferProblem {
    pub fn new(target: AreaDataset, sources: Vec<AreaDataset>) -> Result<Self> {
        let k = target.n_covariates();
        for s in &sources {
            if s.n_covariates() != k {
                return Err(Error::config(format!(
                    "area `{}` has {} covariates but target `{}` has {k}",
                    s.area_id,
                    s.n_covariates(),
                    target.area_id
                )));
            }
            if s.area_id == target.area_id {
                return Err(Error::config(format!(
                    "area `{}` is both target and source",
                    s.area_id
                )));
            }
        }
        Ok(Self { target, sources })
    }
}

/// Pre-trains every area independently. Returns the target model followed
/// by the sources in input order.
pub fn pretrain_local_features(
    problem: &TransferProblem,
    options: &TransferOptions,
) -> Result<(AreaModel, Vec<AreaModel>)> {
    let areas: Vec<&AreaDataset> = std::iter::once(&problem.target)
        .chain(problem.sources.iter())
        .collect();
    let mut fitted = areas
        .par_iter()
        .map(|ds| pretrain_area(ds, options))
        .collect::<Result<Vec<_>>>()?;
    let sources = fitted.split_off(1);
    Ok((fitted.pop().expect("target fit"), sources))
}

/// End-to-end predictor for the target area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferModel {
    pub version: u32,
    pub target: AreaModel,
    pub sources: Vec<AreaModel>,
    pub ensemble: GbdtEnsemble,
    pub include_coordinates: bool,
}

fn feature_matrix(
    x: &DMatrix<f64>,
    z: Option<&DVector<f64>>,
    coords: Option<&CoordinateSet>,
) -> DMatrix<f64> {
    let k = x.ncols();
    let extra = usize::from(z.is_some()) + 2 * usize::from(coords.is_some());
    DMatrix::from_fn(x.nrows(), k + extra, |i, j| {
        if j < k {
            return x[(i, j)];
        }
        match (j - k, z) {
            (0, Some(z)) => z[i],
            (m, z) => {
                let c = m - usize::from(z.is_some());
                coords.expect("coordinate column").get(i)[c]
            }
        }
    })
}

/// Stacks areas' GBDT rows: features, standardized responses and weights.
/// `use_z = false` gives the pooled baseline without local features.
pub fn pooled_rows(
    areas: &[&AreaModel],
    use_z: bool,
    include_coordinates: bool,
) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let blocks: Vec<DMatrix<f64>> = areas
        .iter()
        .map(|a| {
            feature_matrix(
                &a.x,
                use_z.then(|| a.z_hat()),
                include_coordinates.then(|| a.coords()),
            )
        })
        .collect();
    let p = blocks.first().map_or(0, |b| b.ncols());
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut features = DMatrix::zeros(n, p);
    let mut row = 0;
    for b in &blocks {
        features.rows_mut(row, b.nrows()).copy_from(b);
        row += b.nrows();
    }
    let y = areas.iter().flat_map(|a| a.y.iter().copied()).collect();
    let w = areas.iter().flat_map(|a| a.w.iter().copied()).collect();
    (features, y, w)
}

/// Trains the pooled ensemble on already pre-trained areas. Lets callers
/// reuse source fits across target subsamples.
pub fn assemble_transfer(
    target: AreaModel,
    sources: Vec<AreaModel>,
    options: &TransferOptions,
) -> Result<TransferModel> {
    let k = target.x.ncols();
    if let Some(s) = sources.iter().find(|s| s.x.ncols() != k) {
        return Err(Error::config(format!(
            "area `{}` has {} covariates but target `{}` has {k}",
            s.area_id,
            s.x.ncols(),
            target.area_id
        )));
    }
    let mut areas: Vec<&AreaModel> = vec![&target];
    areas.extend(sources.iter());
    let (features, y, w) = pooled_rows(&areas, true, options.include_coordinates);
    let ensemble = gbdt::train_gbdt(&features, &y, &w, &options.gbdt)?;
    let fitted = ensemble.predict(&features)?;

    let mut model = TransferModel {
        version: BUNDLE_VERSION,
        target,
        sources,
        ensemble,
        include_coordinates: options.include_coordinates,
    };
    let mut offset = 0;
    for area in std::iter::once(&mut model.target).chain(model.sources.iter_mut()) {
        let n = area.n();
        area.residuals = (0..n).map(|i| area.y[i] - fitted[offset + i]).collect();
        offset += n;
    }
    Ok(model)
}

pub fn train_transfer(
    problem: &TransferProblem,
    options: &TransferOptions,
) -> Result<TransferModel> {
    let (target, sources) = pretrain_local_features(problem, options)?;
    assemble_transfer(target, sources, options)
}

/// Target-area prediction at new sites; see [`Standardizer::report_y`] for
/// the output scale.
pub fn predict_target(
    model: &TransferModel,
    coords_new: &CoordinateSet,
    x_new_raw: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    if x_new_raw.nrows() != coords_new.len() {
        return Err(Error::input(format!(
            "{} covariate rows but {} coordinates",
            x_new_raw.nrows(),
            coords_new.len()
        )));
    }
    let st = &model.target.standardizer;
    let x = st.standardize_x(x_new_raw)?;
    let z = spatial_model::predict_z(&model.target.fit, &x, coords_new)?;
    let features = feature_matrix(
        &x,
        Some(&z),
        model.include_coordinates.then_some(coords_new),
    );
    let s = model.ensemble.predict(&features)?;
    Ok(s.into_iter().map(|v| st.report_y(v)).collect())
}

impl TransferModel {
    pub fn n_covariates(&self) -> usize {
        self.target.x.ncols()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)
            .map_err(|e| Error::input(format!("invalid model bundle: {e}")))?;
        if m.version != BUNDLE_VERSION {
            return Err(Error::input(format!(
                "unsupported bundle version {} (expected {BUNDLE_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }
}
