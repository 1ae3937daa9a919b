//! Log-Gaussian approximation for over-dispersed Poisson counts.
//!
//! A count `c` becomes the response `log(c + 0.5) - (1 + 0.5 q) / (c + 0.5)`
//! with sample weight `c + 0.5`, where `q` is the share of zero counts in
//! the same area's training data. The transformed response is then handled
//! by the weighted Gaussian models unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountTransform {
    /// Share of zero counts, in `[0, 1]`.
    pub q: f64,
}

impl CountTransform {
    /// Derives `q` from an area's training counts.
    pub fn from_counts(counts: &[f64]) -> Result<Self> {
        validate(counts)?;
        let zeros = counts.iter().filter(|&&c| c == 0.0).count();
        Ok(Self {
            q: zeros as f64 / counts.len() as f64,
        })
    }

    pub fn response(&self, count: f64) -> f64 {
        let shifted = count + 0.5;
        shifted.ln() - (1.0 + 0.5 * self.q) / shifted
    }

    pub fn weight(&self, count: f64) -> f64 {
        count + 0.5
    }
}

fn validate(counts: &[f64]) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::input("count vector is empty"));
    }
    if let Some((i, c)) = counts
        .iter()
        .enumerate()
        .find(|(_, c)| !c.is_finite() || **c < 0.0 || c.fract() != 0.0)
    {
        return Err(Error::input(format!(
            "count {i} is not a nonnegative integer: {c}"
        )));
    }
    Ok(())
}

/// Transformed responses, weights and the zero share for one area.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedCounts {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub q: f64,
}

pub fn poisson_transform(counts: &[f64]) -> Result<TransformedCounts> {
    let t = CountTransform::from_counts(counts)?;
    Ok(TransformedCounts {
        y: counts.iter().map(|&c| t.response(c)).collect(),
        w: counts.iter().map(|&c| t.weight(c)).collect(),
        q: t.q,
    })
}

/// Naive count-scale view `exp(y) - 0.5` of a transformed-scale value.
/// Ignores the `q` correction and retransformation bias, so it is only
/// approximate.
pub fn approximate_count(y: f64) -> f64 {
    y.exp() - 0.5
}
