//! The Donsker-Varadhan objective and its closed-form score gradients.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// `log((1/M) sum_k exp(s_k))`, shifted by the maximum so large scores do
/// not overflow.
pub fn log_mean_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    max + (sum / scores.len() as f64).ln()
}

/// `softmax(scores)`, the gradient of [`log_mean_exp`].
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_scores(joint: &[f64], marginal: &[f64]) -> Result<()> {
    if joint.is_empty() || marginal.is_empty() {
        return Err(Error::data("DV value needs at least one joint and one marginal score"));
    }
    if !joint.iter().chain(marginal).all(|s| s.is_finite()) {
        return Err(Error::data("non-finite critic score"));
    }
    Ok(())
}

/// Empirical DV bound: `mean(joint) - log_mean_exp(marginal)`.
pub fn dv_value(joint_scores: &[f64], marginal_scores: &[f64]) -> Result<f64> {
    check_scores(joint_scores, marginal_scores)?;
    let mean = joint_scores.iter().sum::<f64>() / joint_scores.len() as f64;
    Ok(mean - log_mean_exp(marginal_scores))
}

/// Value and score gradients of one training objective evaluation.
#[derive(Debug, Clone)]
pub struct DvTerms {
    pub dv: f64,
    /// `log_mean_exp(marginal)`, the log-partition term.
    pub log_partition: f64,
    /// `eta * (log_partition - anchor)^2`.
    pub penalty: f64,
    /// d(objective)/d(joint score i).
    pub joint_grad: Vec<f64>,
    /// d(objective)/d(marginal score k).
    pub marginal_grad: Vec<f64>,
}

/// Objective `dv - eta (log_partition - anchor)^2` and its gradient with
/// respect to the scores: `1/N` on the joint side and
/// `-softmax(marginal) (1 + 2 eta (log_partition - anchor))` on the
/// marginal side. With `eta = 0` this is the plain DV gradient.
pub fn dv_objective(joint: &[f64], marginal: &[f64], eta: f64, anchor: f64) -> Result<DvTerms> {
    check_scores(joint, marginal)?;
    let log_partition = log_mean_exp(marginal);
    let dv = joint.iter().sum::<f64>() / joint.len() as f64 - log_partition;
    let gap = log_partition - anchor;
    let scale = 1.0 + 2.0 * eta * gap;
    Ok(DvTerms {
        dv,
        log_partition,
        penalty: eta * gap * gap,
        joint_grad: vec![1.0 / joint.len() as f64; joint.len()],
        marginal_grad: softmax(marginal).into_iter().map(|w| -w * scale).collect(),
    })
}

/// DV value with exact expectations over a finite alphabet:
/// `sum p(x,z) F(x,z) - ln sum p(x) p(z) exp(F(x,z))`, where `scores[x][z]`
/// is the critic evaluated at cell `(x, z)`.
pub fn dv_value_exact(scores: ArrayView2<f64>, pmf: ArrayView2<f64>) -> Result<f64> {
    if scores.dim() != pmf.dim() {
        return Err(Error::shape(format!(
            "scores {:?} vs pmf {:?}",
            scores.dim(),
            pmf.dim()
        )));
    }
    super::exact::validate_pmf(pmf)?;
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::data("non-finite critic score"));
    }
    let px: Vec<f64> = pmf.rows().into_iter().map(|r| r.sum()).collect();
    let pz: Vec<f64> = pmf.columns().into_iter().map(|c| c.sum()).collect();
    let mut expect_joint = 0.0;
    let mut weighted = Vec::new();
    for ((x, z), &p) in pmf.indexed_iter() {
        expect_joint += p * scores[[x, z]];
        let w = px[x] * pz[z];
        if w > 0.0 {
            weighted.push((w, scores[[x, z]]));
        }
    }
    let max = weighted.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = weighted.iter().map(|&(w, s)| w * (s - max).exp()).sum();
    Ok(expect_joint - (max + sum.ln()))
}
