//! Spatial-regression-based transfer learning.
//!
//! Each area (one data-scarce target, any number of data-rich sources) gets
//! its own low-rank spatial Gaussian-process regression. The fitted local
//! feature `z_hat` of every area is then fed, together with the shared
//! covariates, into a single pooled gradient-boosted tree model that
//! predicts the target area.
//!
//! Module map:
//!
//! * [`geo`]: planar distances and the minimum-spanning-tree kernel range
//! * [`spectral`]: exponential kernel eigenbasis and Nyström extension
//! * [`spatial_model`]: weighted low-rank GP regression by marginal likelihood
//! * [`gbdt`]: squared-error gradient-boosted regression trees
//! * [`counts`]: log-Gaussian approximation for over-dispersed counts
//! * [`transfer`]: the standardize / pre-train / pool / predict pipeline
//! * [`bench`]: synthetic generators, baselines and Monte-Carlo experiments

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod counts;
pub mod error;
pub mod gbdt;
pub mod geo;
pub mod optim;
pub mod spatial_model;
pub mod spectral;
pub mod transfer;

pub use error::{Error, Result};
pub use gbdt::{GbdtConfig, GbdtEnsemble};
pub use geo::CoordinateSet;
pub use spatial_model::{SpatialFit, SpatialHyperParams, SpatialTrainingData};
pub use spectral::{BasisOptions, EigenBasis};
pub use transfer::{AreaDataset, ResponseKind, Standardizer, TransferModel, TransferOptions};
