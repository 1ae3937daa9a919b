//! Competing predictors for the target area.
//!
//! Every method sees the observed target subsample (and, where relevant,
//! the pre-trained sources) and predicts held-out target sites on the
//! target's reporting scale.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt;
use crate::spatial_model;
use crate::transfer::{self, AreaDataset, AreaModel, Standardizer, TransferOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Weighted least squares on the covariates.
    #[serde(rename = "LM")]
    Lm,
    /// Spatial regression on the target alone.
    #[serde(rename = "SPLM")]
    Splm,
    /// Boosted trees on the target alone. Uses site coordinates when there
    /// are no covariates.
    #[serde(rename = "GBDT_loc")]
    GbdtLoc,
    /// Boosted trees pooled over all areas, without local features.
    #[serde(rename = "GBDT")]
    Gbdt,
    /// Pooled boosted trees with pre-trained local features.
    #[serde(rename = "Proposed")]
    Proposed,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Lm,
        Method::Splm,
        Method::GbdtLoc,
        Method::Gbdt,
        Method::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lm => "LM",
            Method::Splm => "SPLM",
            Method::GbdtLoc => "GBDT_loc",
            Method::Gbdt => "GBDT",
            Method::Proposed => "Proposed",
        }
    }

    /// Whether the method reads the source areas.
    pub fn uses_sources(self) -> bool {
        matches!(self, Method::Gbdt | Method::Proposed)
    }

    fn uses_target_fit(self) -> bool {
        matches!(self, Method::Splm | Method::Proposed)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown method `{s}` (expected one of LM, SPLM, GBDT_loc, GBDT, Proposed)"
                ))
            })
    }
}

fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let k = x.ncols();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let xw = DMatrix::from_fn(x.nrows(), k, |i, j| x[(i, j)] * w[i]);
    let gram = xw.transpose() * x;
    let rhs = xw.transpose() * y;
    let scale = gram.diagonal().amax().max(1.0);
    for jitter in [0.0, 1e-10, 1e-8, 1e-6] {
        let mut g = gram.clone();
        for i in 0..k {
            g[(i, i)] += jitter * scale;
        }
        if let Some(ch) = g.cholesky() {
            return Ok(ch.solve(&rhs));
        }
    }
    Err(Error::Numerical(
        "least-squares normal equations are singular".into(),
    ))
}

fn tree_features(x: &DMatrix<f64>, ds: &AreaDataset, with_coords: bool) -> DMatrix<f64> {
    if !with_coords {
        return x.clone();
    }
    let k = x.ncols();
    DMatrix::from_fn(x.nrows(), k + 2, |i, j| {
        if j < k {
            x[(i, j)]
        } else {
            ds.coords.get(i)[j - k]
        }
    })
}

/// Observed target data prepared once per cell and shared by all methods.
pub struct CellInputs<'a> {
    pub observed: &'a AreaDataset,
    pub held_out: &'a AreaDataset,
    pub sources: &'a [AreaModel],
    pub options: &'a TransferOptions,
}

/// Runs `methods` on one cell. Returns, per method, predictions for the
/// held-out sites, plus the held-out truth on the same reporting scale.
pub fn predict_methods(
    inputs: &CellInputs<'_>,
    methods: &[Method],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let opts = inputs.options;
    let (obs_std, st) = transfer::standardize_area(inputs.observed)?;
    let x_new = st.standardize_x(&inputs.held_out.x)?;
    let truth: Vec<f64> = inputs
        .held_out
        .y
        .iter()
        .map(|&v| st.report_truth(v))
        .collect();
    let report = |st: &Standardizer, s: Vec<f64>| -> Vec<f64> {
        s.into_iter().map(|v| st.report_y(v)).collect()
    };

    let target_model = if methods.iter().any(|m| m.uses_target_fit()) {
        Some(transfer::pretrain_area(inputs.observed, opts)?)
    } else {
        None
    };
    let k = inputs.observed.n_covariates();
    let tree_coords = opts.include_coordinates || k == 0;

    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let pred = match m {
            Method::Lm => {
                let b = weighted_least_squares(&obs_std.x, &obs_std.y, &obs_std.w)?;
                report(&st, (&x_new * b).iter().copied().collect())
            }
            Method::Splm => {
                let model = target_model.as_ref().expect("target fit");
                let z = spatial_model::predict_z(&model.fit, &x_new, &inputs.held_out.coords)?;
                report(&st, z.iter().copied().collect())
            }
            Method::GbdtLoc => {
                let f = tree_features(&obs_std.x, inputs.observed, tree_coords);
                let e =
                    gbdt::train_gbdt(&f, obs_std.y.as_slice(), obs_std.w.as_slice(), &opts.gbdt)?;
                report(
                    &st,
                    e.predict(&tree_features(&x_new, inputs.held_out, tree_coords))?,
                )
            }
            Method::Gbdt => {
                let mut f = tree_features(&obs_std.x, inputs.observed, tree_coords);
                let mut y: Vec<f64> = obs_std.y.iter().copied().collect();
                let mut w: Vec<f64> = obs_std.w.iter().copied().collect();
                if !inputs.sources.is_empty() {
                    let refs: Vec<&AreaModel> = inputs.sources.iter().collect();
                    let (sf, sy, sw) = transfer::pooled_rows(&refs, false, tree_coords);
                    let n0 = f.nrows();
                    f = f.resize_vertically(n0 + sf.nrows(), 0.0);
                    f.rows_mut(n0, sf.nrows()).copy_from(&sf);
                    y.extend(sy);
                    w.extend(sw);
                }
                let e = gbdt::train_gbdt(&f, &y, &w, &opts.gbdt)?;
                report(
                    &st,
                    e.predict(&tree_features(&x_new, inputs.held_out, tree_coords))?,
                )
            }
            Method::Proposed => {
                let model = transfer::assemble_transfer(
                    target_model.clone().expect("target fit"),
                    inputs.sources.to_vec(),
                    opts,
                )?;
                transfer::predict_target(&model, &inputs.held_out.coords, &inputs.held_out.x)?
            }
        };
        out.push(pred);
    }
    Ok((out, truth))
}
