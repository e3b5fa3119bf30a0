//! Synthetic data with known ground truth.

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LabelColumn, LabelKind, Metadata, VectorDataset};
use crate::error::{Error, Result};
use crate::mi::PairedBatch;

/// Closed-form MI of a `dim`-dimensional Gaussian pair with independent
/// coordinates, each with correlation `rho`: `-(dim/2) ln(1 - rho^2)`.
pub fn gaussian_mi_nats(rho: f64, dim: usize) -> f64 {
    -0.5 * dim as f64 * (1.0 - rho * rho).ln()
}

#[derive(Debug, Clone)]
pub struct GaussianPairs {
    pub batch: PairedBatch<f64>,
    pub rho: f64,
    pub ground_truth_nats: f64,
}

impl GaussianPairs {
    /// Stores `[A | B]` as one `2 * dim` vector per row.
    pub fn to_dataset(&self, seed: u64) -> VectorDataset {
        let joined = concatenate(Axis(1), &[self.batch.left.view(), self.batch.right.view()])
            .expect("equal row counts")
            .mapv(|v| v as f32);
        VectorDataset::new(
            joined,
            vec![],
            Metadata {
                source: format!("gaussian-pairs rho={} dim={}", self.rho, self.batch.left.ncols()),
                seed: Some(seed),
            },
        )
        .expect("finite samples")
    }
}

/// `n` draws of `(A, B)` with `B = rho A + sqrt(1 - rho^2) E`, coordinates
/// independent.
pub fn gen_gaussian_pairs(rho: f64, dim: usize, n: usize, seed: u64) -> Result<GaussianPairs> {
    if !(rho.abs() < 1.0) {
        return Err(Error::config(format!("|rho| must be < 1, got {rho}")));
    }
    if dim == 0 {
        return Err(Error::config("dim must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = Array2::from_shape_simple_fn((n, dim), || rng.sample::<f64, _>(StandardNormal));
    let noise = Array2::from_shape_simple_fn((n, dim), || rng.sample::<f64, _>(StandardNormal));
    let right = &left * rho + &noise * (1.0 - rho * rho).sqrt();
    Ok(GaussianPairs {
        batch: PairedBatch::new(left, right)?,
        rho,
        ground_truth_nats: gaussian_mi_nats(rho, dim),
    })
}

/// Low-rank signal planted in isotropic noise: the first `rank`
/// coordinates have standard deviation `signal_std`, the rest 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentStructure {
    pub rank: usize,
    pub signal_std: f64,
}

/// Two binary labels defined by halfspaces over Gaussian vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSynthSpec {
    pub dim: usize,
    pub n: usize,
    pub public_axis: Vec<f64>,
    pub sensitive_axis: Vec<f64>,
    pub label_noise: f64,
    pub latent: Option<LatentStructure>,
    pub seed: u64,
}

impl LabeledSynthSpec {
    /// Public axis `e0`, sensitive axis `c e0 + sqrt(1 - c^2) e1`, so the
    /// axes have inner product `c`.
    pub fn with_axis_correlation(dim: usize, n: usize, axis_correlation: f64, label_noise: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config("labeled synthetic data needs dim >= 2"));
        }
        if !(-1.0..=1.0).contains(&axis_correlation) {
            return Err(Error::config(format!(
                "axis correlation must lie in [-1, 1], got {axis_correlation}"
            )));
        }
        let mut public_axis = vec![0.0; dim];
        public_axis[0] = 1.0;
        let mut sensitive_axis = vec![0.0; dim];
        sensitive_axis[0] = axis_correlation;
        sensitive_axis[1] = (1.0 - axis_correlation * axis_correlation).sqrt();
        Ok(LabeledSynthSpec {
            dim,
            n,
            public_axis,
            sensitive_axis,
            label_noise,
            latent: None,
            seed,
        })
    }

    pub fn axis_correlation(&self) -> f64 {
        self.public_axis.iter().zip(&self.sensitive_axis).map(|(a, b)| a * b).sum()
    }
}

pub const PUBLIC_LABEL: &str = "public";
pub const SENSITIVE_LABEL: &str = "sensitive";

/// `X ~ N(0, I)` (optionally with a planted high-variance block); labels
/// `public = 1[<w_p, X> > 0]` and `sensitive = 1[<w_s, X> > 0]`, each
/// flipped independently with probability `label_noise`.
pub fn gen_labeled_synth(spec: &LabeledSynthSpec) -> Result<VectorDataset> {
    let dim = spec.dim;
    if dim == 0 {
        return Err(Error::config("dim must be >= 1"));
    }
    for (name, axis) in [("public", &spec.public_axis), ("sensitive", &spec.sensitive_axis)] {
        if axis.len() != dim {
            return Err(Error::config(format!("{name} axis has length {}, dim is {dim}", axis.len())));
        }
        let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("{name} axis must be unit norm (norm {norm})")));
        }
    }
    if !(0.0..0.5).contains(&spec.label_noise) {
        return Err(Error::config(format!(
            "label noise must lie in [0, 0.5), got {}",
            spec.label_noise
        )));
    }
    let mut scales = vec![1.0; dim];
    if let Some(latent) = spec.latent {
        if latent.rank == 0 || latent.rank > dim || !(latent.signal_std > 0.0) {
            return Err(Error::config(format!("invalid latent structure {latent:?}")));
        }
        scales[..latent.rank].fill(latent.signal_std);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = Array2::from_shape_fn((spec.n, dim), |(_, j)| rng.sample::<f64, _>(StandardNormal) * scales[j]);
    let mut public = Vec::with_capacity(spec.n);
    let mut sensitive = Vec::with_capacity(spec.n);
    for row in x.rows() {
        let p = row.iter().zip(&spec.public_axis).map(|(a, b)| a * b).sum::<f64>() > 0.0;
        let s = row.iter().zip(&spec.sensitive_axis).map(|(a, b)| a * b).sum::<f64>() > 0.0;
        let flip_p = rng.random::<f64>() < spec.label_noise;
        let flip_s = rng.random::<f64>() < spec.label_noise;
        public.push((p ^ flip_p) as i32);
        sensitive.push((s ^ flip_s) as i32);
    }
    VectorDataset::new(
        x.mapv(|v| v as f32),
        vec![
            LabelColumn::new(PUBLIC_LABEL, LabelKind::Binary, public)?,
            LabelColumn::new(SENSITIVE_LABEL, LabelKind::Binary, sensitive)?,
        ],
        Metadata {
            source: format!(
                "labeled-synth dim={dim} axis_correlation={:.4} noise={}",
                spec.axis_correlation(),
                spec.label_noise
            ),
            seed: Some(spec.seed),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(gaussian_mi_nats(0.0, 3), 0.0);
        assert!((gaussian_mi_nats(0.5, 1) - 0.143_841_036).abs() < 1e-8);
        assert!((gaussian_mi_nats(0.9, 5) - 4.151_828_017).abs() < 1e-8);
        let g = gen_gaussian_pairs(0.5, 1, 10, 1).unwrap();
        assert!((g.ground_truth_nats - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn invalid_rho_rejected() {
        assert!(matches!(gen_gaussian_pairs(1.0, 1, 10, 0), Err(Error::Config(_))));
        assert!(matches!(gen_gaussian_pairs(-1.5, 1, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn sample_correlation_tracks_rho() {
        for rho in [0.0, 0.5, -0.8] {
            let mean: f64 = (0..20)
                .map(|seed| {
                    let g = gen_gaussian_pairs(rho, 2, 10_000, seed).unwrap();
                    let a: Vec<f64> = g.batch.left.column(1).to_vec();
                    let b: Vec<f64> = g.batch.right.column(1).to_vec();
                    correlation(&a, &b)
                })
                .sum::<f64>()
                / 20.0;
            assert!((mean - rho).abs() < 0.03, "rho {rho}: {mean}");
        }
    }

    #[test]
    fn noiseless_halfspaces_are_exact() {
        let spec = LabeledSynthSpec::with_axis_correlation(8, 500, 0.0, 0.0, 3).unwrap();
        let ds = gen_labeled_synth(&spec).unwrap();
        let public = &ds.label(PUBLIC_LABEL).unwrap().values;
        let sensitive = &ds.label(SENSITIVE_LABEL).unwrap().values;
        for i in 0..ds.len() {
            assert_eq!(public[i], (ds.vectors()[[i, 0]] > 0.0) as i32);
            assert_eq!(sensitive[i], (ds.vectors()[[i, 1]] > 0.0) as i32);
        }
    }

    #[test]
    fn label_noise_sets_flip_rate() {
        let spec = LabeledSynthSpec::with_axis_correlation(4, 20_000, 0.0, 0.1, 5).unwrap();
        let ds = gen_labeled_synth(&spec).unwrap();
        let public = &ds.label(PUBLIC_LABEL).unwrap().values;
        let agree = (0..ds.len())
            .filter(|&i| public[i] == (ds.vectors()[[i, 0]] > 0.0) as i32)
            .count() as f64
            / ds.len() as f64;
        // Bayes-optimal accuracy 0.9; binomial sd ~ 0.002.
        assert!((agree - 0.9).abs() < 0.01, "{agree}");
    }

    #[test]
    fn same_axis_gives_same_labels_up_to_flips() {
        let spec = LabeledSynthSpec::with_axis_correlation(4, 5_000, 1.0, 0.05, 6).unwrap();
        let ds = gen_labeled_synth(&spec).unwrap();
        let p = &ds.label(PUBLIC_LABEL).unwrap().values;
        let s = &ds.label(SENSITIVE_LABEL).unwrap().values;
        let disagree = p.iter().zip(s).filter(|(a, b)| a != b).count() as f64 / 5_000.0;
        // two independent 5% flips: 2 * 0.05 * 0.95 = 0.095
        assert!((disagree - 0.095).abs() < 0.015, "{disagree}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = LabeledSynthSpec::with_axis_correlation(4, 10, 0.3, 0.5, 0).unwrap();
        assert!(gen_labeled_synth(&spec).is_err());
        spec.label_noise = 0.1;
        spec.public_axis = vec![1.0, 1.0, 0.0, 0.0];
        assert!(gen_labeled_synth(&spec).is_err());
        assert!(LabeledSynthSpec::with_axis_correlation(1, 10, 0.3, 0.1, 0).is_err());
    }
}
