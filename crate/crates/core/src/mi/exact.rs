use ndarray::ArrayView2;

use crate::error::{Error, Result};

pub(crate) fn validate_pmf(pmf: ArrayView2<f64>) -> Result<()> {
    if pmf.is_empty() {
        return Err(Error::data("empty PMF"));
    }
    if let Some(bad) = pmf.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::data(format!("invalid PMF entry {bad}")));
    }
    let total: f64 = pmf.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::data(format!("PMF sums to {total}, not 1")));
    }
    Ok(())
}

/// Shannon MI in nats of a joint PMF over two finite alphabets
/// (`pmf[x][z]`), with `0 ln 0 = 0`.
pub fn exact_mi_discrete(pmf: ArrayView2<f64>) -> Result<f64> {
    validate_pmf(pmf)?;
    let px: Vec<f64> = pmf.rows().into_iter().map(|r| r.sum()).collect();
    let pz: Vec<f64> = pmf.columns().into_iter().map(|c| c.sum()).collect();
    Ok(pmf
        .indexed_iter()
        .filter(|(_, &p)| p > 0.0)
        .map(|((x, z), &p)| p * (p / (px[x] * pz[z])).ln())
        .sum())
}
