//! Weighted low-rank spatial regression.
//!
//! ```text
//! y = X b + S gamma + e,   gamma_l ~ N(0, tau2 * lambda_l^alpha),   e ~ N(0, sigma2 W^-1)
//! ```
//!
//! `S`, `lambda` come from an [`EigenBasis`]. With `gamma` integrated out the
//! covariance of `y` is `sigma2 (W^-1 + rho S Lambda^alpha S')` where
//! `rho = tau2 / sigma2`. For fixed `(rho, alpha)`, `b` and `sigma2` have
//! closed-form maximizers, obtained from the penalized weighted least-squares
//! system on the scaled design `[S D^1/2, X]` with `D = rho Lambda^alpha`.
//! Only (L+K)-sized matrices are factorized; the n x n covariance is never
//! formed. The remaining two parameters `(log rho, alpha)` are found by a
//! multi-start Nelder–Mead search.
//!
//! Two objectives are available (see [`Likelihood`]). The mean-restricted
//! variant adds an intercept and integrates it out, which removes the
//! data-free constant direction that otherwise makes the marginal
//! likelihood unbounded when a centered basis spans every mean-zero
//! direction of standardized data.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::CoordinateSet;
use crate::optim::{self, NelderMeadOptions};
use crate::spectral::EigenBasis;

const JITTER: f64 = 1e-10;
/// Largest exponent fed to `exp` when forming prior scales.
const MAX_LOG_SCALE: f64 = 700.0;

/// Inputs for one area's spatial fit.
#[derive(Debug, Clone)]
pub struct SpatialTrainingData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    w: DVector<f64>,
    basis: EigenBasis,
}

impl SpatialTrainingData {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        w: DVector<f64>,
        basis: EigenBasis,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || w.len() != n || basis.n_sites() != n {
            return Err(Error::input(format!(
                "dimension mismatch: y has {n} rows, X {}, w {}, basis {}",
                x.nrows(),
                w.len(),
                basis.n_sites()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("covariates and response must be finite"));
        }
        if let Some(i) = w.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::input(format!(
                "weight {i} is not positive: {}",
                w[i]
            )));
        }
        Ok(Self { x, y, w, basis })
    }

    /// Unit weights.
    pub fn unweighted(x: DMatrix<f64>, y: DVector<f64>, basis: EigenBasis) -> Result<Self> {
        let n = y.len();
        Self::new(x, y, DVector::from_element(n, 1.0), basis)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialHyperParams {
    pub tau2: f64,
    pub alpha: f64,
    pub sigma2: f64,
}

/// Profiled likelihood at one `(rho, alpha)`.
#[derive(Debug, Clone)]
pub struct Profile {
    pub neg_log_lik: f64,
    pub sigma2: f64,
    pub b: DVector<f64>,
    pub gamma: DVector<f64>,
    /// `sigma2 * [(Z'WZ + P)^-1]_bb`, the GLS covariance of `b`.
    b_cov: DMatrix<f64>,
}

/// Weighted cross products reused across likelihood evaluations.
struct CrossProducts {
    sws: DMatrix<f64>,
    swx: DMatrix<f64>,
    xwx: DMatrix<f64>,
    swy: DVector<f64>,
    xwy: DVector<f64>,
    ywy: f64,
    sum_log_w: f64,
    log_lambda: Vec<f64>,
    n: usize,
}

impl CrossProducts {
    fn new(data: &SpatialTrainingData) -> Self {
        let s = data.basis.vectors();
        let ws = weighted_rows(s, &data.w);
        let wx = weighted_rows(&data.x, &data.w);
        let wy = data.y.component_mul(&data.w);
        Self {
            sws: s.tr_mul(&ws),
            swx: s.tr_mul(&wx),
            xwx: data.x.tr_mul(&wx),
            swy: s.tr_mul(&wy),
            xwy: data.x.tr_mul(&wy),
            ywy: data.y.dot(&wy),
            sum_log_w: data.w.iter().map(|v| v.ln()).sum(),
            log_lambda: data.basis.values().iter().map(|v| v.ln()).collect(),
            n: data.n(),
        }
    }

    /// Square roots of the prior scales `rho * lambda_l^alpha`.
    fn prior_sqrt(&self, ratio: f64, alpha: f64) -> Vec<f64> {
        if ratio <= 0.0 {
            return vec![0.0; self.log_lambda.len()];
        }
        let log_ratio = ratio.ln();
        self.log_lambda
            .iter()
            .map(|&ll| (0.5 * (log_ratio + alpha * ll).min(MAX_LOG_SCALE)).exp())
            .collect()
    }

    /// `restricted` leading columns of `X` are integrated out rather than
    /// profiled (restricted likelihood for those columns only).
    fn profile(&self, ratio: f64, alpha: f64, restricted: usize) -> Result<Profile> {
        let l = self.sws.nrows();
        let k = self.xwx.nrows();
        let h = self.prior_sqrt(ratio, alpha);
        let dim = l + k;
        let mut g = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for j in 0..l {
            for i in 0..l {
                g[(i, j)] = h[i] * self.sws[(i, j)] * h[j];
            }
            g[(j, j)] += 1.0;
            rhs[j] = h[j] * self.swy[j];
            for c in 0..k {
                let v = h[j] * self.swx[(j, c)];
                g[(j, l + c)] = v;
                g[(l + c, j)] = v;
            }
        }
        for c in 0..k {
            for r in 0..k {
                g[(l + r, l + c)] = self.xwx[(r, c)];
            }
            rhs[l + c] = self.xwy[c];
        }

        let chol = match Cholesky::new(g.clone()) {
            Some(c) => c,
            None => {
                log::warn!(
                    "penalized normal equations singular; adding {JITTER} ridge on coefficients"
                );
                for c in 0..k {
                    g[(l + c, l + c)] += JITTER;
                }
                Cholesky::new(g).ok_or_else(|| {
                    Error::Numerical("penalized normal equations are singular".into())
                })?
            }
        };
        let sol = chol.solve(&rhs);
        let quad = (self.ywy - sol.dot(&rhs)).max(f64::MIN_POSITIVE);
        let n = (self.n - restricted) as f64;
        let sigma2 = quad / n;
        let factor = chol.l_dirty();
        // Diagonal entries l..l+r of the factor give log|F' V0^-1 F| for the
        // restricted columns F.
        let log_det: f64 = (0..l + restricted).map(|i| 2.0 * factor[(i, i)].ln()).sum();
        let log_det_v0 = log_det - self.sum_log_w;
        let neg_log_lik = 0.5 * (n * (2.0 * std::f64::consts::PI * sigma2).ln() + log_det_v0 + n);

        let gamma = DVector::from_iterator(l, (0..l).map(|i| h[i] * sol[i]));
        let b = sol.rows(l, k).into_owned();
        let b_cov = b_block_inverse(&chol, l, k) * sigma2;
        Ok(Profile {
            neg_log_lik,
            sigma2,
            b,
            gamma,
            b_cov,
        })
    }
}

fn weighted_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut row, &wi) in out.row_iter_mut().zip(w.iter()) {
        row *= wi;
    }
    out
}

fn b_block_inverse(chol: &Cholesky<f64, Dyn>, l: usize, k: usize) -> DMatrix<f64> {
    let dim = l + k;
    let mut out = DMatrix::zeros(k, k);
    for c in 0..k {
        let mut e = DVector::zeros(dim);
        e[l + c] = 1.0;
        let col = chol.solve(&e);
        for r in 0..k {
            out[(r, c)] = col[l + r];
        }
    }
    out
}

/// Negative log marginal likelihood at variance ratio `ratio = tau2/sigma2`
/// and exponent `alpha`, with `b` and `sigma2` profiled out.
pub fn neg_log_marginal_likelihood(
    data: &SpatialTrainingData,
    ratio: f64,
    alpha: f64,
) -> Result<Profile> {
    if !(ratio >= 0.0) || !ratio.is_finite() {
        return Err(Error::Parameter(format!(
            "variance ratio must be >= 0, got {ratio}"
        )));
    }
    CrossProducts::new(data).profile(ratio, alpha, 0)
}

/// Negative log likelihood with an intercept added to `X` and integrated
/// out; `b` and `sigma2` are profiled as in [`neg_log_marginal_likelihood`].
/// `b[0]` of the result is the intercept's GLS estimate.
pub fn neg_log_restricted_likelihood(
    data: &SpatialTrainingData,
    ratio: f64,
    alpha: f64,
) -> Result<Profile> {
    if !(ratio >= 0.0) || !ratio.is_finite() {
        return Err(Error::Parameter(format!(
            "variance ratio must be >= 0, got {ratio}"
        )));
    }
    CrossProducts::new(&with_intercept(data)?).profile(ratio, alpha, 1)
}

fn with_intercept(data: &SpatialTrainingData) -> Result<SpatialTrainingData> {
    let x = data.x().clone().insert_column(0, 1.0);
    SpatialTrainingData::new(x, data.y.clone(), data.w.clone(), data.basis.clone())
}

/// Objective maximized by [`fit_spatial`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// Marginal likelihood of `y` with `b` profiled; no intercept added.
    Marginal,
    /// Intercept added and integrated out, remaining `b` profiled. The
    /// intercept is part of `z_hat`.
    MeanRestricted,
}

/// Search settings for [`fit_spatial`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialFitOptions {
    pub start_log_ratio: Vec<f64>,
    pub start_alpha: Vec<f64>,
    pub log_ratio_bounds: (f64, f64),
    pub alpha_bounds: (f64, f64),
    pub f_tol: f64,
    pub max_evals_per_start: usize,
    pub likelihood: Likelihood,
}

impl Default for SpatialFitOptions {
    fn default() -> Self {
        Self {
            start_log_ratio: vec![-4.0, 0.0, 2.0],
            start_alpha: vec![0.5, 2.0],
            log_ratio_bounds: (-20.0, 20.0),
            alpha_bounds: (0.0, 10.0),
            f_tol: 1e-6,
            max_evals_per_start: 500,
            likelihood: Likelihood::Marginal,
        }
    }
}

/// One objective evaluation recorded during the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub log_ratio: f64,
    pub alpha: f64,
    pub neg_log_lik: f64,
}

/// Estimated spatial model for one area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialFit {
    pub b_hat: DVector<f64>,
    pub b_std_errors: DVector<f64>,
    pub gamma_hat: DVector<f64>,
    pub hyper: SpatialHyperParams,
    pub log_marginal_likelihood: f64,
    pub fitted_z: DVector<f64>,
    pub converged: bool,
    /// `b_hat[0]` is an intercept that callers do not supply in `X`.
    pub intercept: bool,
    pub basis: EigenBasis,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

impl SpatialFit {
    pub fn n_covariates(&self) -> usize {
        self.b_hat.len() - usize::from(self.intercept)
    }

    /// Spatial component `S gamma` at the training sites.
    pub fn spatial_component(&self) -> DVector<f64> {
        self.basis.vectors() * &self.gamma_hat
    }
}

/// Maximizes the configured likelihood over `(log rho, alpha)`. Under
/// [`Likelihood::MeanRestricted`] the fit carries an intercept
/// (`b_hat[0]`).
///
/// If no start converges within its evaluation budget the best point found
/// is returned with `converged == false`.
pub fn fit_spatial(data: &SpatialTrainingData, options: &SpatialFitOptions) -> Result<SpatialFit> {
    match options.likelihood {
        Likelihood::Marginal => fit_profiled(data, options, false, 0),
        Likelihood::MeanRestricted => fit_profiled(&with_intercept(data)?, options, true, 1),
    }
}

/// Fits with an automatically added intercept column, for data that has
/// not been centered. `b_hat[0]` is the intercept.
pub fn fit_spatial_with_intercept(
    data: &SpatialTrainingData,
    options: &SpatialFitOptions,
) -> Result<SpatialFit> {
    let restricted = usize::from(options.likelihood == Likelihood::MeanRestricted);
    fit_profiled(&with_intercept(data)?, options, true, restricted)
}

fn fit_profiled(
    data: &SpatialTrainingData,
    options: &SpatialFitOptions,
    intercept: bool,
    restricted: usize,
) -> Result<SpatialFit> {
    let n = data.n();
    let k = data.n_covariates();
    if n <= k + 2 {
        return Err(Error::input(format!(
            "spatial fit needs more than K + 2 = {} observations, got {n}",
            k + 2
        )));
    }
    let cp = CrossProducts::new(data);
    let nm = NelderMeadOptions {
        f_tol: options.f_tol,
        max_evals: options.max_evals_per_start,
        step: vec![1.0, 0.5],
        lower: vec![options.log_ratio_bounds.0, options.alpha_bounds.0],
        upper: vec![options.log_ratio_bounds.1, options.alpha_bounds.1],
    };

    let mut trace = Vec::new();
    let mut failure = None;
    let mut best: Option<(TracePoint, bool)> = None;
    for &lr in &options.start_log_ratio {
        for &a in &options.start_alpha {
            let result = optim::nelder_mead(
                |p| match cp.profile(p[0].exp(), p[1], restricted) {
                    Ok(prof) => {
                        trace.push(TracePoint {
                            log_ratio: p[0],
                            alpha: p[1],
                            neg_log_lik: prof.neg_log_lik,
                        });
                        prof.neg_log_lik
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::INFINITY
                    }
                },
                &[lr, a],
                &nm,
            );
            let point = TracePoint {
                log_ratio: result.x[0],
                alpha: result.x[1],
                neg_log_lik: result.value,
            };
            let better = match &best {
                None => true,
                Some((b, _)) => point.neg_log_lik < b.neg_log_lik,
            };
            if better && point.neg_log_lik.is_finite() {
                best = Some((point, result.converged));
            }
        }
    }
    let (opt, converged) = match best {
        Some(b) => b,
        None => {
            return Err(failure.unwrap_or_else(|| {
                Error::Numerical("marginal likelihood was not finite at any start".into())
            }))
        }
    };
    if !converged {
        log::warn!("spatial likelihood search hit its evaluation cap; using best point found");
    }

    let ratio = opt.log_ratio.exp();
    let prof = cp.profile(ratio, opt.alpha, restricted)?;
    let fitted_z = data.x() * &prof.b + data.basis.vectors() * &prof.gamma;
    Ok(SpatialFit {
        b_std_errors: prof.b_cov.diagonal().map(|v| v.max(0.0).sqrt()),
        b_hat: prof.b,
        gamma_hat: prof.gamma,
        hyper: SpatialHyperParams {
            tau2: ratio * prof.sigma2,
            alpha: opt.alpha,
            sigma2: prof.sigma2,
        },
        log_marginal_likelihood: -prof.neg_log_lik,
        fitted_z,
        converged,
        intercept,
        basis: data.basis.clone(),
        trace,
    })
}

/// Local feature `x_new b + s_0 gamma` at new sites, with `s_0` the Nyström
/// extension of the fit's basis.
pub fn predict_z(
    fit: &SpatialFit,
    x_new: &DMatrix<f64>,
    coords_new: &CoordinateSet,
) -> Result<DVector<f64>> {
    let k = fit.n_covariates();
    if x_new.ncols() != k {
        return Err(Error::input(format!(
            "expected {k} covariate columns, got {}",
            x_new.ncols()
        )));
    }
    if x_new.nrows() != coords_new.len() {
        return Err(Error::input(format!(
            "{} covariate rows but {} coordinates",
            x_new.nrows(),
            coords_new.len()
        )));
    }
    let s0 = fit.basis.nystrom_rows(coords_new);
    let mut z = s0 * &fit.gamma_hat;
    if fit.intercept {
        z.add_scalar_mut(fit.b_hat[0]);
        z += x_new * fit.b_hat.rows(1, k);
    } else {
        z += x_new * &fit.b_hat;
    }
    Ok(z)
}
