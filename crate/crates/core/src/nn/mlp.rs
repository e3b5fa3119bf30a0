use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, Scalar};
use crate::error::{Error, Result};

/// One affine layer followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// `(out_dim, in_dim)`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Scalar> Dense<F> {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    layers: Vec<Dense<F>>,
}

/// Activations of every layer for one batch, `activations[0]` being the
/// input. ReLU derivatives are recovered from the stored outputs
/// (`relu'(z) = 1` iff `relu(z) > 0`, subgradient 0 at the kink).
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    activations: Vec<Array2<F>>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }

    pub fn input(&self) -> &Array2<F> {
        &self.activations[0]
    }

    pub fn output(&self) -> &Array2<F> {
        self.activations.last().expect("cache holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// Gradients with the same shapes as an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<F> {
    pub layers: Vec<LayerGrads<F>>,
}

impl<F: Scalar> ParamGrads<F> {
    pub fn zeros_like(model: &Mlp<F>) -> Self {
        ParamGrads {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamGrads<F>, scale: F) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape("gradient sets have different shapes"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ParamGrads<F>) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }
}

impl<F: Scalar> Mlp<F> {
    /// Kaiming-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero
    /// biases. Samples are drawn in `f64` and rounded, so a 32-bit model is
    /// the rounding of the 64-bit model built from the same seed.
    pub fn new(layer_dims: &[usize], activation_plan: &[Activation], seed: u64) -> Result<Self> {
        validate_dims(layer_dims, activation_plan)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .zip(activation_plan)
            .map(|(io, &activation)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weight =
                    Array2::from_shape_simple_fn((fan_out, fan_in), || F::from_f64(dist.sample(&mut rng)));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    /// All-zero parameters.
    pub fn zeros(layer_dims: &[usize], activation_plan: &[Activation]) -> Result<Self> {
        validate_dims(layer_dims, activation_plan)?;
        let layers = layer_dims
            .windows(2)
            .zip(activation_plan)
            .map(|(io, &activation)| Dense {
                weight: Array2::zeros((io[1], io[0])),
                bias: Array1::zeros(io[1]),
                activation,
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Dense<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::config(format!("layer {k} has a zero dimension")));
            }
            if l.bias.len() != l.out_dim() {
                return Err(Error::shape(format!(
                    "layer {k}: bias length {} != out_dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn activation_plan(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    pub fn cast<G: Scalar>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|v| G::from_f64(v.as_f64())),
                    bias: l.bias.mapv(|v| G::from_f64(v.as_f64())),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    fn check_input(&self, batch: &ArrayView2<F>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        if !batch.iter().all(|v| v.is_finite()) {
            return Err(Error::data("non-finite value in network input"));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate activation for [`Mlp::backward`].
    pub fn forward(&self, batch: ArrayView2<F>) -> Result<(Array2<F>, ForwardCache<F>)> {
        self.check_input(&batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.to_owned());
        for layer in &self.layers {
            let next = apply_layer(layer, activations.last().expect("non-empty").view());
            activations.push(next);
        }
        let output = activations.last().expect("non-empty").clone();
        Ok((output, ForwardCache { activations }))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, batch: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&batch)?;
        let mut layers = self.layers.iter();
        let first = layers.next().expect("non-empty");
        let mut current = apply_layer(first, batch);
        for layer in layers {
            current = apply_layer(layer, current.view());
        }
        Ok(current)
    }

    /// Reverse-mode gradients of `sum_i <grad_output_i, output_i>` with
    /// respect to every parameter and to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        grad_output: ArrayView2<F>,
    ) -> Result<(ParamGrads<F>, Array2<F>)> {
        let (grads, input) = self.backward_impl(cache, grad_output, true)?;
        Ok((grads, input.expect("requested")))
    }

    /// [`Mlp::backward`] without the input gradient, which saves one matrix
    /// product on the widest layer.
    pub fn param_grads(&self, cache: &ForwardCache<F>, grad_output: ArrayView2<F>) -> Result<ParamGrads<F>> {
        Ok(self.backward_impl(cache, grad_output, false)?.0)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<F>,
        grad_output: ArrayView2<F>,
        want_input: bool,
    ) -> Result<(ParamGrads<F>, Option<Array2<F>>)> {
        let acts = &cache.activations;
        if acts.len() != self.layers.len() + 1 {
            return Err(Error::shape(format!(
                "cache has {} activations, network needs {}",
                acts.len(),
                self.layers.len() + 1
            )));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if acts[k].ncols() != layer.in_dim() || acts[k + 1].ncols() != layer.out_dim() {
                return Err(Error::shape(format!("cache does not match layer {k}")));
            }
        }
        let n = cache.batch_size();
        if grad_output.dim() != (n, self.output_dim()) {
            return Err(Error::shape(format!(
                "grad_output is {:?}, expected ({n}, {})",
                grad_output.dim(),
                self.output_dim()
            )));
        }

        let mut delta = grad_output.to_owned();
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut grad_input = None;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                Zip::from(&mut delta).and(&acts[k + 1]).for_each(|d, &a| {
                    if a <= F::zero() {
                        *d = F::zero();
                    }
                });
            }
            let weight = delta.t().dot(&acts[k]);
            let bias = delta.sum_axis(Axis(0));
            layer_grads.push(LayerGrads { weight, bias });
            if k > 0 {
                delta = delta.dot(&layer.weight);
            } else if want_input {
                grad_input = Some(delta.dot(&layer.weight));
            }
        }
        layer_grads.reverse();
        Ok((ParamGrads { layers: layer_grads }, grad_input))
    }
}

fn apply_layer<F: Scalar>(layer: &Dense<F>, input: ArrayView2<F>) -> Array2<F> {
    let mut out = input.dot(&layer.weight.t());
    out += &layer.bias;
    if layer.activation == Activation::Relu {
        out.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
    }
    out
}

fn validate_dims(layer_dims: &[usize], plan: &[Activation]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::config(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::config(format!("zero-width layer in {layer_dims:?}")));
    }
    if plan.len() != layer_dims.len() - 1 {
        return Err(Error::config(format!(
            "{} activations for {} weight layers",
            plan.len(),
            layer_dims.len() - 1
        )));
    }
    Ok(())
}
