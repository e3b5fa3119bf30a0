use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Mlp, ParamGrads, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub first_moment: ParamGrads<F>,
    pub second_moment: ParamGrads<F>,
    pub step_count: u64,
    pub hyper: AdamConfig,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(model: &Mlp<F>, hyper: AdamConfig) -> Result<Self> {
        if !(hyper.learning_rate > 0.0 && hyper.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                hyper.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&hyper.beta1) || !(0.0..1.0).contains(&hyper.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        Ok(AdamState {
            first_moment: ParamGrads::zeros_like(model),
            second_moment: ParamGrads::zeros_like(model),
            step_count: 0,
            hyper,
        })
    }

    /// One bias-corrected Adam update. Non-finite gradients are rejected
    /// before anything is modified.
    pub fn step(&mut self, model: &mut Mlp<F>, grads: &ParamGrads<F>) -> Result<()> {
        if !grads.same_shape(&self.first_moment) || model.layers().len() != grads.layers.len() {
            return Err(Error::shape("gradients do not match optimizer state"));
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient; update rejected".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let b1 = F::from_f64(beta1);
        let b2 = F::from_f64(beta2);
        let one = F::one();
        let corr1 = F::from_f64(1.0 - beta1.powi(t));
        let corr2 = F::from_f64(1.0 - beta2.powi(t));
        let lr = F::from_f64(learning_rate);
        let eps = F::from_f64(epsilon);

        let update = |p: &mut F, m: &mut F, v: &mut F, g: &F| {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in model
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first_moment.layers)
            .zip(&mut self.second_moment.layers)
        {
            Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(update);
        }
        if !model.is_finite() {
            return Err(Error::Numeric("Adam update produced non-finite parameters".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};
    use ndarray::{array, Array1, Array2};

    fn scalar_model(w: f64) -> Mlp<f64> {
        Mlp::from_layers(vec![Dense {
            weight: array![[w]],
            bias: array![0.0],
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    fn grads(gw: f64, gb: f64) -> ParamGrads<f64> {
        ParamGrads {
            layers: vec![crate::nn::LayerGrads {
                weight: array![[gw]],
                bias: array![gb],
            }],
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = scalar_model(1.0);
        let mut s = AdamState::new(&m, AdamConfig::with_learning_rate(0.01)).unwrap();
        s.step(&mut m, &grads(1.0, 0.0)).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction.
        let expected = 1.0 - 0.01 / (1.0 + 1e-8);
        assert!((m.layers()[0].weight[[0, 0]] - expected).abs() < 1e-15);
        assert_eq!(m.layers()[0].bias[0], 0.0);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let mut m = scalar_model(0.5);
        let mut s = AdamState::new(&m, AdamConfig::default()).unwrap();
        s.step(&mut m, &grads(2.0, 0.0)).unwrap();
        let w1 = m.layers()[0].weight[[0, 0]];
        let m1 = s.first_moment.layers[0].weight[[0, 0]];
        let v1 = s.second_moment.layers[0].weight[[0, 0]];
        let mut m_zero = m.clone();
        let mut s_zero = AdamState::new(&m_zero, AdamConfig::default()).unwrap();
        s_zero.step(&mut m_zero, &grads(0.0, 0.0)).unwrap();
        assert_eq!(m_zero, m);
        // A zero gradient after a non-zero one still applies the decayed
        // momentum, but the moments themselves shrink geometrically.
        s.step(&mut m, &grads(0.0, 0.0)).unwrap();
        assert!((s.first_moment.layers[0].weight[[0, 0]] - 0.9 * m1).abs() < 1e-15);
        assert!((s.second_moment.layers[0].weight[[0, 0]] - 0.999 * v1).abs() < 1e-15);
        assert!(m.layers()[0].weight[[0, 0]] < w1);
    }

    #[test]
    fn ten_step_quadratic_trajectory_matches_reference() {
        // minimise 0.5 * (w - 3)^2 from w = 0; reference recurrence written out
        // independently of the implementation.
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let mut reference = Vec::new();
        let (mut w, mut mm, mut vv) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = w - 3.0;
            mm = b1 * mm + (1.0 - b1) * g;
            vv = b2 * vv + (1.0 - b2) * g * g;
            w -= lr * (mm / (1.0 - b1.powi(t))) / ((vv / (1.0 - b2.powi(t))).sqrt() + eps);
            reference.push(w);
        }
        let mut m = scalar_model(0.0);
        let mut s = AdamState::new(&m, AdamConfig::with_learning_rate(lr)).unwrap();
        for want in reference {
            let g = m.layers()[0].weight[[0, 0]] - 3.0;
            s.step(&mut m, &grads(g, 0.0)).unwrap();
            assert!((m.layers()[0].weight[[0, 0]] - want).abs() < 1e-10);
        }
        assert_eq!(s.step_count, 10);
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let run = || {
            let mut m = Mlp::<f32>::new(&[3, 4, 1], &[Activation::Relu, Activation::Linear], 4).unwrap();
            let mut s = AdamState::new(&m, AdamConfig::default()).unwrap();
            let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f32 - j as f32) * 0.3);
            for _ in 0..5 {
                let (out, cache) = m.forward(x.view()).unwrap();
                let g = m.param_grads(&cache, out.view()).unwrap();
                s.step(&mut m, &g).unwrap();
            }
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut m = scalar_model(1.0);
        let mut s = AdamState::new(&m, AdamConfig::default()).unwrap();
        let before = (m.clone(), s.clone());
        assert!(matches!(s.step(&mut m, &grads(f64::NAN, 0.0)), Err(Error::Numeric(_))));
        assert_eq!((m, s), before);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut m = scalar_model(1.0);
        let mut s = AdamState::new(&m, AdamConfig::default()).unwrap();
        let bad = ParamGrads {
            layers: vec![crate::nn::LayerGrads {
                weight: Array2::zeros((2, 1)),
                bias: Array1::zeros(2),
            }],
        };
        assert!(matches!(s.step(&mut m, &bad), Err(Error::Shape(_))));
    }
}
