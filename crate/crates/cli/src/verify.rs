//! Built-in numerical self-checks: back-propagation against finite
//! differences, the DV lower bound under exact expectations, and rank AUROC
//! against pairwise counting.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mishape::data::{gen_labeled_synth, LabeledSynthSpec, PUBLIC_LABEL, SENSITIVE_LABEL};
use mishape::eval::{auroc_pairwise, roc_auroc};
use mishape::mi::{dv_value_exact, exact_mi_discrete, EstimatorConfig};
use mishape::nn::{gradient_check_with, min_relu_margin, probes, ParamGrads};
use mishape::shaping::{LabelTerm, Shaper, ShapingConfig};
use mishape::{Activation, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

pub const GRAD_TOLERANCE: f64 = 1e-4;

fn corrupt(grads: &mut ParamGrads<f64>) {
    grads.layers[0].weight[[0, 0]] += 1.0;
}

/// A random batch on which every ReLU pre-activation is at least `1e-3` from
/// its kink, so central differences never straddle one.
fn smooth_batch(model: &Mlp<f64>, rows: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x = Array2::from_shape_simple_fn((rows, model.input_dim()), || rng.random_range(-1.5..1.5));
        if min_relu_margin(model, x.view()) > 1e-3 {
            return x;
        }
    }
}

/// Gradient checks of plain networks up to `[16, 8, 4, 1]`.
pub fn check_network_gradients(corrupt_gradient: bool) -> CheckResult {
    let shapes: [&[usize]; 5] = [&[3, 1], &[4, 3, 1], &[5, 4, 2], &[8, 6, 3], &[16, 8, 4, 1]];
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (k, dims) in shapes.iter().enumerate() {
        let model = Mlp::<f64>::new(dims, &mishape::nn::activation_plan(dims.len() - 1, Activation::Linear), k as u64)
            .expect("valid dims");
        let x = smooth_batch(&model, 3, 100 + k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + k as u64);
        let target = Array2::from_shape_simple_fn((3, model.output_dim()), || rng.random_range(-1.0..1.0));
        let report = gradient_check_with(&model, x.view(), probes::quadratic(target), GRAD_TOLERANCE, |g| {
            if corrupt_gradient {
                corrupt(g)
            }
        });
        worst = worst.max(report.max_rel_error);
        if !report.pass {
            failures.push(format!("{dims:?} at {}", report.worst));
        }
    }
    CheckResult::new(
        "gradient: networks up to [16, 8, 4, 1]",
        failures.is_empty(),
        format!("max relative error {worst:.2e}; failures: {failures:?}"),
    )
}

/// Gradient of the frozen-critic objective through a small encoder, with
/// utility, sensitive and self-information terms.
pub fn check_encoder_objective_gradient(corrupt_gradient: bool) -> CheckResult {
    let spec = LabeledSynthSpec::with_axis_correlation(6, 40, 0.3, 0.05, 11).expect("valid spec");
    let data = gen_labeled_synth(&spec).expect("valid data");
    let cfg = ShapingConfig {
        gamma: 0.5,
        utility_terms: vec![LabelTerm::new(PUBLIC_LABEL, 1.0)],
        sensitive_terms: vec![LabelTerm::new(SENSITIVE_LABEL, 0.4)],
        output_dim: 3,
        encoder_hidden: vec![8, 5],
        encoder_output: Activation::Linear,
        first_epoch_iterations: 30,
        estimator: EstimatorConfig {
            hidden_dims: vec![8, 4],
            ..EstimatorConfig::default()
        },
        seed: 5,
        ..ShapingConfig::default()
    };
    let mut shaper = match Shaper::<f64>::new(&data, &cfg) {
        Ok(s) => s,
        Err(e) => return CheckResult::new("gradient: DV objective through encoder", false, e.to_string()),
    };
    if let Err(e) = shaper.fit_critics(0) {
        return CheckResult::new("gradient: DV objective through encoder", false, e.to_string());
    }
    let perms = shaper.draw_permutations();
    let probe = |codes: ArrayView2<f64>| {
        shaper
            .frozen_objective(codes, &perms)
            .unwrap_or_else(|_| (f64::NAN, Array2::zeros(codes.raw_dim())))
    };
    let report = gradient_check_with(shaper.encoder(), shaper.input().view(), probe, GRAD_TOLERANCE, |g| {
        if corrupt_gradient {
            corrupt(g)
        }
    });
    CheckResult::new(
        "gradient: DV objective through encoder",
        report.pass,
        format!(
            "max relative error {:.2e} over {} coordinates (worst: {})",
            report.max_rel_error, report.checked, report.worst
        ),
    )
}

fn random_pmf(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    // Exponential weights give a Dirichlet(1) draw; some cells are zeroed
    // to exercise empty support.
    let mut w = Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < 0.15 {
            0.0
        } else {
            -(1.0 - rng.random::<f64>()).ln()
        }
    });
    if w.sum() == 0.0 {
        w[[0, 0]] = 1.0;
    }
    let total = w.sum();
    w / total
}

/// Random MLP critics over one-hot pairs never exceed the exact MI of a
/// random 6x6 joint PMF.
pub fn check_dv_lower_bound(instances: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut violations = 0;
    for k in 0..instances {
        let pmf = random_pmf(&mut rng, 6, 6);
        let critic = Mlp::<f64>::new(&[12, 16, 1], &[Activation::Relu, Activation::Linear], 1000 + k as u64)
            .expect("valid dims");
        let scale = rng.random_range(0.5..8.0);
        let mut onehots = Array2::zeros((36, 12));
        for a in 0..6 {
            for b in 0..6 {
                onehots[[a * 6 + b, a]] = 1.0;
                onehots[[a * 6 + b, 6 + b]] = 1.0;
            }
        }
        let scores = critic
            .predict(onehots.view())
            .expect("finite critic")
            .into_shape_with_order((6, 6))
            .expect("36 scores")
            * scale;
        let (Ok(dv), Ok(mi)) = (dv_value_exact(scores.view(), pmf.view()), exact_mi_discrete(pmf.view())) else {
            violations += 1;
            continue;
        };
        worst_gap = worst_gap.max(dv - mi);
        if dv > mi + 1e-9 {
            violations += 1;
        }
    }
    CheckResult::new(
        "DV lower bound by enumeration",
        violations == 0,
        format!("{instances} critics, {violations} violations, max dv - mi = {worst_gap:.3e}"),
    )
}

/// Rank AUROC equals pairwise counting on random tied instances, and the
/// four-sample fixture gives 0.75.
pub fn check_auroc_oracle(instances: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=n.max(2) as u32);
        let mut labels: Vec<i32> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.37).collect();
        let rank = roc_auroc(&scores, &labels).map(|r| r.auroc);
        let pairs = auroc_pairwise(&scores, &labels);
        if rank.is_err() || rank.ok() != pairs.ok() {
            mismatches += 1;
        }
    }
    let fixture = roc_auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).map(|r| r.auroc).ok();
    CheckResult::new(
        "AUROC oracle equivalence",
        mismatches == 0 && fixture == Some(0.75),
        format!("{instances} instances, {mismatches} mismatches; fixture auroc {fixture:?}"),
    )
}

pub fn run_suite(corrupt_gradient: bool) -> Vec<CheckResult> {
    vec![
        check_network_gradients(corrupt_gradient),
        check_encoder_objective_gradient(corrupt_gradient),
        check_dv_lower_bound(100),
        check_auroc_oracle(1000),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes() {
        for r in run_suite(false) {
            assert!(r.pass, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn corrupted_gradients_fail() {
        assert!(!check_network_gradients(true).pass);
        assert!(!check_encoder_objective_gradient(true).pass);
    }
}
