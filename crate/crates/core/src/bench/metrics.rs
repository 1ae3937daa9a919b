use crate::error::{Error, Result};

fn check(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::input(format!(
            "metric inputs differ in length: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::input("metric inputs are empty"));
    }
    Ok(())
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let ss: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).abs()).sum();
    Ok(s / truth.len() as f64)
}

/// Linear-interpolation quantile of unsorted data, `p` in `[0, 1]`.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}
