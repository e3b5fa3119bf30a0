//! Mutual-information estimation with trainable Donsker-Varadhan critics.
//!
//! A critic `F(a, b)` is a small ReLU network over the concatenated pair.
//! Joint samples are the aligned rows of a [`PairedBatch`]; samples from the
//! product of marginals are formed by permuting the right-hand rows
//! ([`draw_marginal_batch`]). Training ascends
//!
//! ```text
//! mean F(joint) - log mean exp F(marginal) - eta (log mean exp F(marginal) - C)^2
//! ```
//!
//! with Adam; the penalty anchors the log-partition term, which keeps the
//! critic's output scale from drifting. The reported estimate is the mean DV
//! value over the last 50 iterations, clamped at zero.

mod dv;
mod exact;

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::nn::{activation_plan, Activation, AdamConfig, AdamState, Mlp, Scalar};

pub use dv::{dv_objective, dv_value, dv_value_exact, log_mean_exp, softmax, DvTerms};
pub use exact::exact_mi_discrete;

/// Number of trailing iterations averaged into the reported estimate and
/// used by the plateau detector.
pub const TRAILING_WINDOW: usize = 50;

/// Row-aligned joint samples of `(A, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBatch<F> {
    pub left: Array2<F>,
    pub right: Array2<F>,
}

impl<F: Scalar> PairedBatch<F> {
    pub fn new(left: Array2<F>, right: Array2<F>) -> Result<Self> {
        if left.nrows() != right.nrows() {
            return Err(Error::shape(format!(
                "paired streams have {} and {} rows",
                left.nrows(),
                right.nrows()
            )));
        }
        if !left.iter().chain(right.iter()).all(|v| v.is_finite()) {
            return Err(Error::data("non-finite sample in paired batch"));
        }
        Ok(PairedBatch { left, right })
    }

    pub fn len(&self) -> usize {
        self.left.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<G: Scalar>(&self) -> PairedBatch<G> {
        PairedBatch {
            left: self.left.mapv(|v| G::from_f64(v.as_f64())),
            right: self.right.mapv(|v| G::from_f64(v.as_f64())),
        }
    }
}

/// Permutation used to pair rows with the right-hand stream for marginal
/// samples. For `n <= 1000` it is resampled until it has no fixed point; above
/// that any uniform permutation is accepted (fixed points are then a
/// negligible fraction).
pub fn marginal_permutation<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if n > 1000 || n < 2 || perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Approximate samples of the product of marginals: the left stream is kept,
/// the right stream is permuted.
pub fn draw_marginal_batch<F: Scalar, R: rand::Rng + ?Sized>(
    joint: &PairedBatch<F>,
    rng: &mut R,
) -> Result<PairedBatch<F>> {
    if joint.len() < 2 {
        return Err(Error::data(format!(
            "marginal resampling needs at least 2 rows, got {}",
            joint.len()
        )));
    }
    let perm = marginal_permutation(joint.len(), rng);
    Ok(PairedBatch {
        left: joint.left.clone(),
        right: joint.right.select(Axis(0), &perm),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Rows per iteration; `None` uses the full dataset every iteration.
    pub batch_size: Option<usize>,
    /// Weight `eta` of the log-partition anchor penalty.
    pub remine_weight: f64,
    /// Anchor `C` of the log-partition penalty.
    pub remine_anchor: f64,
    pub early_stopping: bool,
    /// Iterations without a `min_delta` improvement of the trailing mean
    /// before training stops.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            hidden_dims: vec![64, 32],
            learning_rate: 1e-4,
            max_iterations: 2000,
            batch_size: None,
            remine_weight: 0.1,
            remine_anchor: 0.0,
            early_stopping: true,
            patience: 50,
            min_delta: 1e-3,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("critic hidden dims must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("critic learning rate must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be positive"));
        }
        if !(self.remine_weight >= 0.0 && self.remine_weight.is_finite()) {
            return Err(Error::config("remine_weight must be >= 0"));
        }
        if !self.remine_anchor.is_finite() || !(self.min_delta >= 0.0) {
            return Err(Error::config("remine_anchor must be finite and min_delta >= 0"));
        }
        if matches!(self.batch_size, Some(b) if b < 2) {
            return Err(Error::config("batch_size must be >= 2"));
        }
        Ok(())
    }
}

/// Converged DV estimate with its full training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// `max(0, raw_value_nats)`.
    pub value_nats: f64,
    /// Mean DV value over the last [`TRAILING_WINDOW`] iterations.
    pub raw_value_nats: f64,
    /// DV value at every iteration.
    pub history: Vec<f64>,
    /// Log-partition penalty at every iteration.
    pub penalties: Vec<f64>,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub config_fingerprint: String,
}

impl MiEstimate {
    /// `iteration,dv_value,penalty` rows.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iteration,dv_value,penalty\n");
        for (i, (dv, p)) in self.history.iter().zip(&self.penalties).enumerate() {
            out.push_str(&format!("{i},{dv},{p}\n"));
        }
        out
    }

    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.history_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean of the `window` DV values ending `back` iterations before the
    /// last one.
    pub fn trailing_mean(&self, window: usize, back: usize) -> Option<f64> {
        let end = self.history.len().checked_sub(back)?;
        let start = end.checked_sub(window)?;
        (window > 0).then(|| self.history[start..end].iter().sum::<f64>() / window as f64)
    }
}

/// Neural critic `F(a, b)` with its optimizer state and resampling stream.
#[derive(Debug, Clone)]
pub struct Critic<F> {
    pub net: Mlp<F>,
    pub adam: AdamState<F>,
    left_dim: usize,
    right_dim: usize,
    rng: ChaCha8Rng,
}

impl<F: Scalar> Critic<F> {
    pub fn new(left_dim: usize, right_dim: usize, cfg: &EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        if left_dim == 0 || right_dim == 0 {
            return Err(Error::config("critic input streams must be non-empty"));
        }
        let mut dims = vec![left_dim + right_dim];
        dims.extend(&cfg.hidden_dims);
        dims.push(1);
        let net = Mlp::new(&dims, &activation_plan(dims.len() - 1, Activation::Linear), cfg.seed)?;
        let adam = AdamState::new(&net, AdamConfig::with_learning_rate(cfg.learning_rate))?;
        Ok(Critic {
            net,
            adam,
            left_dim,
            right_dim,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15),
        })
    }

    pub fn left_dim(&self) -> usize {
        self.left_dim
    }

    pub fn right_dim(&self) -> usize {
        self.right_dim
    }

    fn check_pairs(&self, left: &ArrayView2<F>, right: &ArrayView2<F>) -> Result<()> {
        if left.ncols() != self.left_dim || right.ncols() != self.right_dim {
            return Err(Error::shape(format!(
                "critic expects {} + {} columns, got {} + {}",
                self.left_dim,
                self.right_dim,
                left.ncols(),
                right.ncols()
            )));
        }
        if left.nrows() != right.nrows() {
            return Err(Error::shape("paired streams differ in length"));
        }
        Ok(())
    }

    /// Critic scores on `[left_i | right_{perm(i)}]` (identity when `perm` is
    /// `None`).
    pub fn scores(&self, left: ArrayView2<F>, right: ArrayView2<F>, perm: Option<&[usize]>) -> Result<Vec<f64>> {
        self.check_pairs(&left, &right)?;
        let out = self.net.predict(pair_input(left, right, perm).view())?;
        Ok(out.iter().map(|v| v.as_f64()).collect())
    }

    /// Trains in place (warm start) for up to `cfg.max_iterations`
    /// iterations, with plateau detection when `cfg.early_stopping` is set.
    /// Only the schedule fields of `cfg` are used; the architecture is fixed
    /// at construction.
    pub fn fit(&mut self, pairs: &PairedBatch<F>, cfg: &EstimatorConfig) -> Result<MiEstimate> {
        cfg.validate()?;
        self.check_pairs(&pairs.left.view(), &pairs.right.view())?;
        let n = pairs.len();
        if n < 2 {
            return Err(Error::data(format!("MI estimation needs at least 2 samples, got {n}")));
        }
        let batch = cfg.batch_size.map_or(n, |b| b.min(n));
        let full_joint = (batch == n).then(|| pair_input(pairs.left.view(), pairs.right.view(), None));

        let mut history = Vec::with_capacity(cfg.max_iterations);
        let mut penalties = Vec::with_capacity(cfg.max_iterations);
        let mut best = f64::NEG_INFINITY;
        let mut since_best = 0usize;
        let mut stopped_early = false;
        let diverged = |iteration: usize, history: &[f64]| Error::Divergence {
            iteration,
            last_finite: history.last().copied(),
        };

        for it in 0..cfg.max_iterations {
            let (sampled_joint, marginal_in) = match &full_joint {
                Some(_) => {
                    let perm = marginal_permutation(n, &mut self.rng);
                    (None, pair_input(pairs.left.view(), pairs.right.view(), Some(&perm)))
                }
                None => {
                    let rows = rand::seq::index::sample(&mut self.rng, n, batch).into_vec();
                    let left = pairs.left.select(Axis(0), &rows);
                    let right = pairs.right.select(Axis(0), &rows);
                    let perm = marginal_permutation(batch, &mut self.rng);
                    (
                        Some(pair_input(left.view(), right.view(), None)),
                        pair_input(left.view(), right.view(), Some(&perm)),
                    )
                }
            };
            let joint_in = sampled_joint.as_ref().or(full_joint.as_ref()).expect("one joint batch");
            let (joint_out, joint_cache) = self.net.forward(joint_in.view())?;
            let (marg_out, marg_cache) = self.net.forward(marginal_in.view())?;
            let joint_scores: Vec<f64> = joint_out.iter().map(|v| v.as_f64()).collect();
            let marg_scores: Vec<f64> = marg_out.iter().map(|v| v.as_f64()).collect();
            let terms = dv_objective(&joint_scores, &marg_scores, cfg.remine_weight, cfg.remine_anchor)
                .map_err(|_| diverged(it, &history))?;
            if !terms.dv.is_finite() {
                return Err(diverged(it, &history));
            }
            history.push(terms.dv);
            penalties.push(terms.penalty);

            // Adam minimises, so feed the negated ascent direction.
            let to_column = |g: &[f64]| Array2::from_shape_fn((g.len(), 1), |(i, _)| F::from_f64(-g[i]));
            let mut grads = self
                .net
                .param_grads(&joint_cache, to_column(&terms.joint_grad).view())?;
            let marg_grads = self
                .net
                .param_grads(&marg_cache, to_column(&terms.marginal_grad).view())?;
            grads.add_scaled(&marg_grads, F::one())?;
            self.adam
                .step(&mut self.net, &grads)
                .map_err(|_| diverged(it, &history))?;

            if cfg.early_stopping && history.len() >= TRAILING_WINDOW {
                let trailing = history[history.len() - TRAILING_WINDOW..].iter().sum::<f64>()
                    / TRAILING_WINDOW as f64;
                if trailing > best + cfg.min_delta {
                    best = trailing;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }

        let window = history.len().min(TRAILING_WINDOW);
        let raw = history[history.len() - window..].iter().sum::<f64>() / window as f64;
        Ok(MiEstimate {
            value_nats: raw.max(0.0),
            raw_value_nats: raw,
            iterations_run: history.len(),
            history,
            penalties,
            stopped_early,
            config_fingerprint: fingerprint(cfg),
        })
    }

    /// Plain DV value of the frozen critic on `(left, right)` with the given
    /// marginal pairing, and its gradient with respect to every `left` row.
    pub fn dv_left_gradient(
        &self,
        left: ArrayView2<F>,
        right: ArrayView2<F>,
        perm: &[usize],
    ) -> Result<(f64, Array2<F>)> {
        self.check_pairs(&left, &right)?;
        if perm.len() != left.nrows() {
            return Err(Error::shape("permutation length differs from batch"));
        }
        let joint_in = pair_input(left, right, None);
        let marg_in = pair_input(left, right, Some(perm));
        let (joint_out, joint_cache) = self.net.forward(joint_in.view())?;
        let (marg_out, marg_cache) = self.net.forward(marg_in.view())?;
        let joint_scores: Vec<f64> = joint_out.iter().map(|v| v.as_f64()).collect();
        let marg_scores: Vec<f64> = marg_out.iter().map(|v| v.as_f64()).collect();
        let terms = dv_objective(&joint_scores, &marg_scores, 0.0, 0.0)?;
        let to_column = |g: &[f64]| Array2::from_shape_fn((g.len(), 1), |(i, _)| F::from_f64(g[i]));
        let (_, joint_in_grad) = self.net.backward(&joint_cache, to_column(&terms.joint_grad).view())?;
        let (_, marg_in_grad) = self.net.backward(&marg_cache, to_column(&terms.marginal_grad).view())?;
        // Left rows sit at the same positions in both batches.
        let grad = &joint_in_grad.slice(s![.., ..self.left_dim]) + &marg_in_grad.slice(s![.., ..self.left_dim]);
        Ok((terms.dv, grad))
    }
}

fn pair_input<F: Scalar>(left: ArrayView2<F>, right: ArrayView2<F>, perm: Option<&[usize]>) -> Array2<F> {
    let (n, dl) = left.dim();
    let dr = right.ncols();
    let mut out = Array2::zeros((n, dl + dr));
    out.slice_mut(s![.., ..dl]).assign(&left);
    match perm {
        None => out.slice_mut(s![.., dl..]).assign(&right),
        Some(p) => {
            for (i, &src) in p.iter().enumerate() {
                out.slice_mut(s![i, dl..]).assign(&right.row(src));
            }
        }
    }
    out
}

/// Trains a fresh critic on `pairs`.
pub fn train_critic<F: Scalar>(pairs: &PairedBatch<F>, cfg: &EstimatorConfig) -> Result<(Critic<F>, MiEstimate)> {
    let mut critic = Critic::new(pairs.left.ncols(), pairs.right.ncols(), cfg)?;
    let estimate = critic.fit(pairs, cfg)?;
    Ok((critic, estimate))
}

pub fn estimate_mi<F: Scalar>(pairs: &PairedBatch<F>, cfg: &EstimatorConfig) -> Result<MiEstimate> {
    train_critic(pairs, cfg).map(|(_, est)| est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_pairs;
    use proptest::prelude::*;

    fn quick(iterations: usize, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            max_iterations: iterations,
            seed,
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn paired_batch_validation() {
        let a = Array2::<f64>::zeros((3, 2));
        assert!(matches!(PairedBatch::new(a.clone(), Array2::zeros((4, 1))), Err(Error::Shape(_))));
        let mut b = Array2::<f64>::zeros((3, 1));
        b[[1, 0]] = f64::NAN;
        assert!(matches!(PairedBatch::new(a, b), Err(Error::Data(_))));
    }

    #[test]
    fn marginal_batch_keeps_left_and_permutes_right() {
        let left = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let right = Array2::from_shape_fn((10, 2), |(i, j)| (10 * i + j) as f64);
        let joint = PairedBatch::new(left.clone(), right).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let marg = draw_marginal_batch(&joint, &mut rng).unwrap();
        assert_eq!(marg.left, left);
        let mut firsts: Vec<f64> = marg.right.column(0).to_vec();
        for (i, v) in firsts.iter().enumerate() {
            assert_ne!(*v, (10 * i) as f64);
        }
        firsts.sort_by(f64::total_cmp);
        assert_eq!(firsts, (0..10).map(|i| (10 * i) as f64).collect::<Vec<_>>());
    }

    #[test]
    fn marginal_batch_needs_two_rows() {
        let one = PairedBatch::new(Array2::<f64>::zeros((1, 1)), Array2::zeros((1, 1))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(draw_marginal_batch(&one, &mut rng), Err(Error::Data(_))));
        assert!(matches!(estimate_mi(&one, &quick(5, 0)), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn small_permutations_are_derangements(n in 2usize..200, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = marginal_permutation(n, &mut rng);
            let mut sorted = p.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            prop_assert!(p.iter().enumerate().all(|(i, &v)| i != v));
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            EstimatorConfig { hidden_dims: vec![8, 0], ..Default::default() },
            EstimatorConfig { learning_rate: 0.0, ..Default::default() },
            EstimatorConfig { max_iterations: 0, ..Default::default() },
            EstimatorConfig { remine_weight: -1.0, ..Default::default() },
            EstimatorConfig { batch_size: Some(1), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        EstimatorConfig::default().validate().unwrap();
    }

    #[test]
    fn config_toml_defaults_fill_missing_fields() {
        let cfg: EstimatorConfig = toml::from_str("learning_rate = 0.01\nbatch_size = 64").unwrap();
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.batch_size, Some(64));
        assert_eq!(cfg.hidden_dims, vec![64, 32]);
        assert_eq!(cfg.max_iterations, 2000);
        assert!(toml::from_str::<EstimatorConfig>("learning_rte = 0.01").is_err());
    }

    #[test]
    fn same_seed_same_trace() {
        let pairs = gen_gaussian_pairs(0.6, 2, 300, 3).unwrap().batch.cast::<f32>();
        let a = estimate_mi(&pairs, &quick(60, 9)).unwrap();
        let b = estimate_mi(&pairs, &quick(60, 9)).unwrap();
        assert_eq!(a, b);
        let c = estimate_mi(&pairs, &quick(60, 10)).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn trace_shape_and_clamp() {
        let pairs = gen_gaussian_pairs(0.0, 1, 200, 0).unwrap().batch;
        let est = estimate_mi(&pairs, &quick(30, 0)).unwrap();
        assert_eq!(est.iterations_run, 30);
        assert_eq!(est.history.len(), 30);
        assert_eq!(est.penalties.len(), 30);
        assert!(!est.stopped_early);
        assert_eq!(est.value_nats, est.raw_value_nats.max(0.0));
        let csv = est.history_csv();
        assert!(csv.starts_with("iteration,dv_value,penalty\n0,"));
        assert_eq!(csv.lines().count(), 31);
        assert_eq!(est.config_fingerprint, fingerprint(&quick(30, 0)));
    }

    #[test]
    fn learns_strong_dependence() {
        let g = gen_gaussian_pairs(0.9, 1, 1000, 5).unwrap();
        let cfg = EstimatorConfig { learning_rate: 1e-3, max_iterations: 600, ..Default::default() };
        let est = estimate_mi(&g.batch.cast::<f32>(), &cfg).unwrap();
        assert!((est.value_nats - g.ground_truth_nats).abs() < 0.25, "{} vs {}", est.value_nats, g.ground_truth_nats);
    }

    #[test]
    fn minibatch_mode_runs() {
        let g = gen_gaussian_pairs(0.8, 1, 500, 2).unwrap();
        let cfg = EstimatorConfig { batch_size: Some(128), max_iterations: 40, ..Default::default() };
        let est = estimate_mi(&g.batch, &cfg).unwrap();
        assert_eq!(est.iterations_run, 40);
    }

    #[test]
    fn plateau_stops_early() {
        let g = gen_gaussian_pairs(0.0, 1, 200, 1).unwrap();
        let cfg = EstimatorConfig { patience: 5, min_delta: 1.0, ..Default::default() };
        let est = estimate_mi(&g.batch, &cfg).unwrap();
        assert!(est.stopped_early);
        assert_eq!(est.iterations_run, TRAILING_WINDOW + 5);
    }

    #[test]
    fn runaway_learning_rate_is_divergence() {
        let g = gen_gaussian_pairs(0.9, 3, 100, 1).unwrap();
        let cfg = EstimatorConfig { learning_rate: 1e300, max_iterations: 50, ..Default::default() };
        assert!(matches!(estimate_mi(&g.batch, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn left_gradient_matches_finite_differences() {
        let g = gen_gaussian_pairs(0.7, 2, 12, 4).unwrap();
        let cfg = quick(10, 2);
        let (critic, _) = train_critic(&g.batch, &cfg).unwrap();
        let perm = marginal_permutation(12, &mut ChaCha8Rng::seed_from_u64(0));
        let (dv, grad) = critic
            .dv_left_gradient(g.batch.left.view(), g.batch.right.view(), &perm)
            .unwrap();
        let scores = critic.scores(g.batch.left.view(), g.batch.right.view(), None).unwrap();
        let marg = critic.scores(g.batch.left.view(), g.batch.right.view(), Some(&perm)).unwrap();
        assert!((dv - dv_value(&scores, &marg).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..12 {
            for j in 0..2 {
                let eval = |delta: f64| {
                    let mut left = g.batch.left.clone();
                    left[[i, j]] += delta;
                    critic.dv_left_gradient(left.view(), g.batch.right.view(), &perm).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((fd - grad[[i, j]]).abs() < 1e-6 * (1.0 + fd.abs()), "[{i},{j}] {fd} vs {}", grad[[i, j]]);
            }
        }
    }
}
