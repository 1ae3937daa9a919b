//! Synthetic data: exact GP fields on a grid and multi-area transfer scenes.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::rng;
use crate::error::{Error, Result};
use crate::geo::{self, CoordinateSet};
use crate::transfer::{AreaDataset, ResponseKind};

/// Largest grid the exact Cholesky path accepts unless raised.
pub const DEFAULT_MAX_GRID_POINTS: usize = 8192;

/// GP field `y = z + e` on a unit-spaced square grid, with
/// `Cov(z_i, z_j) = exp(-d_ij / range)` and `e ~ N(0, nugget)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpGridSpec {
    /// Points per axis.
    pub side: usize,
    pub range: f64,
    pub nugget: f64,
    pub seed: u64,
    pub max_points: usize,
}

impl Default for GpGridSpec {
    fn default() -> Self {
        Self {
            side: 100,
            range: 1.0,
            nugget: 1.0,
            seed: 0,
            max_points: DEFAULT_MAX_GRID_POINTS,
        }
    }
}

impl GpGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.side < 2 {
            return Err(Error::config(format!(
                "grid side must be >= 2, got {}",
                self.side
            )));
        }
        let n = self.side * self.side;
        if n > self.max_points {
            return Err(Error::config(format!(
                "{} x {} grid has {n} points, above the exact-sampling cap of {}; \
                 reduce the side or raise the cap",
                self.side, self.side, self.max_points
            )));
        }
        if !(self.range > 0.0) || !(self.nugget >= 0.0) {
            return Err(Error::config("grid range must be > 0 and nugget >= 0"));
        }
        Ok(())
    }
}

fn grid_coords(side: usize) -> CoordinateSet {
    let pts = (0..side * side)
        .map(|i| [(i % side) as f64, (i / side) as f64])
        .collect();
    CoordinateSet::new(pts).expect("grid coordinates are finite")
}

/// Cholesky factor of `exp(-d / range)`, with growing diagonal jitter if
/// the matrix is numerically indefinite.
fn covariance_factor(coords: &CoordinateSet, range: f64) -> Result<DMatrix<f64>> {
    let cov = geo::pairwise_distances(coords).map(|d| (-d / range).exp());
    let mut jitter = 1e-10;
    while jitter <= 1e-4 {
        let mut c = cov.clone();
        for i in 0..c.nrows() {
            c[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(c) {
            return Ok(ch.unpack());
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(
        "GP covariance could not be factored".into(),
    ))
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Factors the grid covariance once and draws any number of fields.
pub struct GpGridSampler {
    spec: GpGridSpec,
    coords: CoordinateSet,
    factor: DMatrix<f64>,
}

/// One draw: observable dataset plus the latent spatial process.
#[derive(Debug, Clone)]
pub struct GpGridDraw {
    pub data: AreaDataset,
    pub z: DVector<f64>,
}

impl GpGridSampler {
    pub fn new(spec: &GpGridSpec) -> Result<Self> {
        spec.validate()?;
        let coords = grid_coords(spec.side);
        let factor = covariance_factor(&coords, spec.range)?;
        Ok(Self {
            spec: spec.clone(),
            coords,
            factor,
        })
    }

    pub fn spec(&self) -> &GpGridSpec {
        &self.spec
    }

    pub fn draw(&self, seed: u64) -> GpGridDraw {
        let n = self.coords.len();
        let mut rng = rng::stream(seed, &[0x6772_6964]);
        let z = &self.factor * normals(&mut rng, n);
        let e = normals(&mut rng, n) * self.spec.nugget.sqrt();
        let data = AreaDataset::new(
            "grid",
            self.coords.clone(),
            DMatrix::zeros(n, 0),
            &z + e,
            ResponseKind::Gaussian,
        )
        .expect("generated grid data is valid");
        GpGridDraw { data, z }
    }
}

pub fn gen_gp_grid(spec: &GpGridSpec) -> Result<AreaDataset> {
    Ok(GpGridSampler::new(spec)?.draw(spec.seed).data)
}

/// Per-area settings of a transfer scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneArea {
    pub size: usize,
    pub spatial_variance: f64,
    /// Range of the `exp(-d / range)` spatial covariance, in unit-square
    /// coordinates.
    pub spatial_range: f64,
}

/// Target (first entry of `areas`) and `areas.len() - 1` sources. Each area
/// occupies its own unit square, so areas never overlap. Covariates are iid
/// standard normal; every area shares the coefficients `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSceneSpec {
    pub areas: Vec<SceneArea>,
    pub beta: Vec<f64>,
    pub noise_variance: f64,
    pub seed: u64,
}

impl TransferSceneSpec {
    /// One target of `target_n` sites and `g` sources of `source_n` sites
    /// with `k` covariates, unit spatial and noise variances and range 0.2.
    pub fn standard(g: usize, target_n: usize, source_n: usize, k: usize, seed: u64) -> Self {
        let area = |size| SceneArea {
            size,
            spatial_variance: 1.0,
            spatial_range: 0.2,
        };
        let beta = (0..k).map(|j| [1.0, -0.5, 0.75, 0.25][j % 4]).collect();
        Self {
            areas: std::iter::once(area(target_n))
                .chain((0..g).map(|_| area(source_n)))
                .collect(),
            beta,
            noise_variance: 1.0,
            seed,
        }
    }

    pub fn n_sources(&self) -> usize {
        self.areas.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.areas.is_empty() {
            return Err(Error::config("scene needs a target area"));
        }
        for (i, a) in self.areas.iter().enumerate() {
            if a.size < 10 {
                return Err(Error::config(format!(
                    "scene area {i} has {} < 10 sites",
                    a.size
                )));
            }
            if !(a.spatial_variance >= 0.0) || !(a.spatial_range > 0.0) {
                return Err(Error::config(format!(
                    "scene area {i} needs variance >= 0 and range > 0"
                )));
            }
        }
        if !(self.noise_variance >= 0.0) || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::config("scene noise variance and beta must be valid"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TransferScene {
    /// Target first, then sources named `source_1`, `source_2`, ...
    pub areas: Vec<AreaDataset>,
    /// Latent spatial effect at each area's sites.
    pub spatial_effects: Vec<DVector<f64>>,
}

/// Spacing between the lower-left corners of neighbouring areas.
const AREA_SPACING: f64 = 3.0;

pub fn gen_transfer_scene(spec: &TransferSceneSpec) -> Result<TransferScene> {
    spec.validate()?;
    let k = spec.beta.len();
    let beta = DVector::from_column_slice(&spec.beta);
    let mut areas = Vec::with_capacity(spec.areas.len());
    let mut effects = Vec::with_capacity(spec.areas.len());
    for (idx, a) in spec.areas.iter().enumerate() {
        let mut rng = rng::stream(spec.seed, &[idx as u64]);
        let offset = AREA_SPACING * idx as f64;
        let pts: Vec<[f64; 2]> = (0..a.size)
            .map(|_| [offset + rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let coords = CoordinateSet::new(pts)?;
        let x = DMatrix::from_fn(a.size, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let spatial = if a.spatial_variance > 0.0 {
            covariance_factor(&coords, a.spatial_range)?
                * normals(&mut rng, a.size)
                * a.spatial_variance.sqrt()
        } else {
            DVector::zeros(a.size)
        };
        let noise = normals(&mut rng, a.size) * spec.noise_variance.sqrt();
        let y = &x * &beta + &spatial + noise;
        let id = if idx == 0 {
            "target".to_string()
        } else {
            format!("source_{idx}")
        };
        areas.push(AreaDataset::new(id, coords, x, y, ResponseKind::Gaussian)?);
        effects.push(spatial);
    }
    Ok(TransferScene {
        areas,
        spatial_effects: effects,
    })
}
