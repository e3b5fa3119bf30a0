use ndarray::{Array2, ArrayView2};

use super::{Activation, Mlp, ParamGrads};

/// Outcome of comparing back-propagated gradients to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the worst disagreement, e.g. `layer 1 weight [3, 0]`.
    pub worst: String,
    pub checked: usize,
    pub pass: bool,
}

const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Central-difference check (`h = 1e-5`) of every parameter and every input
/// coordinate. `probe` maps a network output to `(loss, dloss/doutput)`.
pub fn gradient_check<P>(model: &Mlp<f64>, batch: ArrayView2<f64>, probe: P, tolerance: f64) -> GradCheckReport
where
    P: Fn(ArrayView2<f64>) -> (f64, Array2<f64>),
{
    gradient_check_with(model, batch, probe, tolerance, |_| {})
}

/// [`gradient_check`] with a hook that may tamper with the analytic parameter
/// gradients before comparison (negative controls).
pub fn gradient_check_with<P, T>(
    model: &Mlp<f64>,
    batch: ArrayView2<f64>,
    probe: P,
    tolerance: f64,
    tamper: T,
) -> GradCheckReport
where
    P: Fn(ArrayView2<f64>) -> (f64, Array2<f64>),
    T: FnOnce(&mut ParamGrads<f64>),
{
    let failed = |what: &str| GradCheckReport {
        max_rel_error: f64::INFINITY,
        worst: what.to_string(),
        checked: 0,
        pass: false,
    };
    let Ok((out, cache)) = model.forward(batch) else {
        return failed("forward pass failed");
    };
    let (_, grad_out) = probe(out.view());
    let Ok((mut grads, grad_in)) = model.backward(&cache, grad_out.view()) else {
        return failed("backward pass failed");
    };
    tamper(&mut grads);

    let loss_at = |m: &Mlp<f64>, x: ArrayView2<f64>| -> f64 {
        m.predict(x).map(|o| probe(o.view()).0).unwrap_or(f64::NAN)
    };

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    let mut record = |analytic: f64, numeric: f64, place: String| {
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        checked += 1;
        if rel > max_rel || worst.is_empty() {
            max_rel = max_rel.max(rel);
            worst = place;
        }
    };

    let mut probe_model = model.clone();
    for k in 0..model.layers().len() {
        let (rows, cols) = model.layers()[k].weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.layers()[k].weight[[r, c]];
                probe_model.layers_mut()[k].weight[[r, c]] = orig + STEP;
                let plus = loss_at(&probe_model, batch);
                probe_model.layers_mut()[k].weight[[r, c]] = orig - STEP;
                let minus = loss_at(&probe_model, batch);
                probe_model.layers_mut()[k].weight[[r, c]] = orig;
                record(
                    grads.layers[k].weight[[r, c]],
                    (plus - minus) / (2.0 * STEP),
                    format!("layer {k} weight [{r}, {c}]"),
                );
            }
        }
        for r in 0..model.layers()[k].bias.len() {
            let orig = model.layers()[k].bias[r];
            probe_model.layers_mut()[k].bias[r] = orig + STEP;
            let plus = loss_at(&probe_model, batch);
            probe_model.layers_mut()[k].bias[r] = orig - STEP;
            let minus = loss_at(&probe_model, batch);
            probe_model.layers_mut()[k].bias[r] = orig;
            record(
                grads.layers[k].bias[r],
                (plus - minus) / (2.0 * STEP),
                format!("layer {k} bias [{r}]"),
            );
        }
    }

    let mut x = batch.to_owned();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let orig = x[[i, j]];
            x[[i, j]] = orig + STEP;
            let plus = loss_at(model, x.view());
            x[[i, j]] = orig - STEP;
            let minus = loss_at(model, x.view());
            x[[i, j]] = orig;
            record(grad_in[[i, j]], (plus - minus) / (2.0 * STEP), format!("input [{i}, {j}]"));
        }
    }

    GradCheckReport {
        max_rel_error: max_rel,
        worst,
        checked,
        pass: max_rel <= tolerance,
    }
}

/// Smallest `|pre-activation|` over all ReLU units for `batch`; finite
/// differences are only meaningful when this is comfortably above the step.
pub fn min_relu_margin(model: &Mlp<f64>, batch: ArrayView2<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    let mut a = batch.to_owned();
    for layer in model.layers() {
        let pre = a.dot(&layer.weight.t()) + &layer.bias;
        if layer.activation == Activation::Relu {
            margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
            a = pre.mapv(|v| v.max(0.0));
        } else {
            a = pre;
        }
    }
    margin
}

/// Scalar losses for use with [`gradient_check`].
pub mod probes {
    use ndarray::{Array2, ArrayView2, Zip};

    /// `0.5 * ||output - target||^2`.
    pub fn quadratic(target: Array2<f64>) -> impl Fn(ArrayView2<f64>) -> (f64, Array2<f64>) {
        move |out| {
            let diff = &out - &target;
            (0.5 * diff.iter().map(|d| d * d).sum::<f64>(), diff)
        }
    }

    /// `sum(weights * output)`: its output gradient is `weights` itself.
    pub fn weighted_sum(weights: Array2<f64>) -> impl Fn(ArrayView2<f64>) -> (f64, Array2<f64>) {
        move |out| {
            let mut total = 0.0;
            Zip::from(&out).and(&weights).for_each(|&o, &w| total += o * w);
            (total, weights.clone())
        }
    }
}
