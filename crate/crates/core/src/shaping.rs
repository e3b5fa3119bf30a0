//! Information-shaping encoders.
//!
//! An encoder `T` maps `d`-dimensional vectors to `output_dim` dimensions and
//! is trained to maximise
//!
//! ```text
//! gamma I(T(X); X) + sum_i lambda_i I(T(X); L_i) - sum_j mu_j I(T(X); S_j)
//! ```
//!
//! where `L_i` are utility labels and `S_j` sensitive labels. Every MI term
//! has its own warm-started critic. Each epoch encodes the data, refits the
//! critics on the frozen codes, then freezes the critics and takes
//! `steps_per_epoch` Adam steps on the encoder along the weighted DV gradient.

use std::path::Path;

use log::{info, warn};
use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::VectorDataset;
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::mi::{marginal_permutation, Critic, EstimatorConfig, PairedBatch};
use crate::nn::{activation_plan, Activation, AdamConfig, AdamState, Checkpoint, Mlp, Scalar};

/// A weighted MI term bound to a label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTerm {
    pub label: String,
    pub weight: f64,
}

impl LabelTerm {
    pub fn new(label: impl Into<String>, weight: f64) -> Self {
        LabelTerm {
            label: label.into(),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    /// Weight of `I(T(X); X)`.
    pub gamma: f64,
    pub utility_terms: Vec<LabelTerm>,
    pub sensitive_terms: Vec<LabelTerm>,
    pub output_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub encoder_output: Activation,
    pub encoder_lr: f64,
    pub epochs: usize,
    /// Full-batch encoder Adam steps per epoch, all against the same frozen
    /// critics.
    pub steps_per_epoch: usize,
    /// Critic iterations in the first epoch, which always runs to completion.
    /// Later epochs warm-start and use the estimator's own schedule.
    pub first_epoch_iterations: usize,
    pub estimator: EstimatorConfig,
    pub seed: u64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            gamma: 0.0,
            utility_terms: Vec::new(),
            sensitive_terms: Vec::new(),
            output_dim: 128,
            encoder_hidden: vec![512, 256],
            encoder_output: Activation::Relu,
            encoder_lr: 1e-3,
            epochs: 20,
            steps_per_epoch: 1,
            first_epoch_iterations: 2000,
            estimator: EstimatorConfig::default(),
            seed: 0,
        }
    }
}

impl ShapingConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("shaping config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.gamma)
            .chain(self.utility_terms.iter().map(|t| t.weight))
            .chain(self.sensitive_terms.iter().map(|t| t.weight))
    }

    /// Checks the configuration against an input dimension.
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.weights().any(|w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::config("MI term weights must be finite and >= 0"));
        }
        if !self.weights().any(|w| w > 0.0) {
            return Err(Error::config("at least one MI term weight must be positive"));
        }
        if self.output_dim == 0 || self.encoder_hidden.contains(&0) {
            return Err(Error::config("encoder dims must be positive"));
        }
        if self.gamma > 0.0 && self.output_dim >= input_dim {
            return Err(Error::config(format!(
                "compression needs output_dim < input_dim, got {} >= {input_dim}",
                self.output_dim
            )));
        }
        if !(self.encoder_lr > 0.0 && self.encoder_lr.is_finite()) {
            return Err(Error::config("encoder_lr must be positive"));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.first_epoch_iterations == 0 {
            return Err(Error::config("epochs, steps_per_epoch and first_epoch_iterations must be positive"));
        }
        self.estimator.validate()
    }

    fn encoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.encoder_hidden);
        dims.push(self.output_dim);
        dims
    }
}

/// Per-term MI values in config order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TermEstimates {
    pub self_mi: Option<f64>,
    pub utility: Vec<f64>,
    pub sensitive: Vec<f64>,
}

/// `gamma * self + sum lambda_i * utility_i - sum mu_j * sensitive_j`.
/// `self_mi` may be absent only when `gamma` is zero.
pub fn composite_objective(estimates: &TermEstimates, cfg: &ShapingConfig) -> Result<f64> {
    if estimates.utility.len() != cfg.utility_terms.len() || estimates.sensitive.len() != cfg.sensitive_terms.len() {
        return Err(Error::config("MI estimates do not match the configured terms"));
    }
    let self_part = match estimates.self_mi {
        Some(v) => cfg.gamma * v,
        None if cfg.gamma == 0.0 => 0.0,
        None => return Err(Error::config("gamma > 0 but no I(T(X); X) estimate")),
    };
    let utility: f64 = cfg.utility_terms.iter().zip(&estimates.utility).map(|(t, v)| t.weight * v).sum();
    let sensitive: f64 = cfg.sensitive_terms.iter().zip(&estimates.sensitive).map(|(t, v)| t.weight * v).sum();
    Ok(self_part + utility - sensitive)
}

/// A trained or random projection encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<F> {
    pub net: Mlp<F>,
    pub training_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct EncoderMetadata {
    kind: String,
    config_fingerprint: String,
}

impl<F: Scalar> EncoderModel<F> {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn encode(&self, vectors: ArrayView2<F>) -> Result<Array2<F>> {
        self.net.predict(vectors)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = EncoderMetadata {
            kind: "encoder".into(),
            config_fingerprint: self.training_fingerprint.clone(),
        };
        Checkpoint {
            model: self.net.clone().into(),
            metadata: serde_json::to_string(&meta).expect("plain record"),
        }
    }

    /// Accepts any checkpoint; the fingerprint is taken from encoder metadata
    /// when present.
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Self {
        let training_fingerprint = serde_json::from_str::<EncoderMetadata>(&checkpoint.metadata)
            .map(|m| m.config_fingerprint)
            .unwrap_or_default();
        EncoderModel {
            net: checkpoint.model.into_precision(),
            training_fingerprint,
        }
    }
}

/// One epoch of shaping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Composite objective from the critics' estimates before the encoder
    /// update.
    pub composite_value: f64,
    pub estimates: TermEstimates,
    /// Critic iterations per term, in term order (self, utility, sensitive).
    pub critic_iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Set when a critic diverged; training stopped at that epoch and the
    /// encoder from the previous epoch was kept.
    pub diverged_at_epoch: Option<usize>,
    pub config_fingerprint: String,
}

impl TrainingHistory {
    /// `epoch,composite,<term columns...>,iterations` rows.
    pub fn to_csv(&self, cfg: &ShapingConfig) -> String {
        let mut header = vec!["epoch".to_string(), "composite".to_string()];
        if cfg.gamma > 0.0 {
            header.push("mi_self".into());
        }
        header.extend(cfg.utility_terms.iter().map(|t| format!("mi_utility_{}", t.label)));
        header.extend(cfg.sensitive_terms.iter().map(|t| format!("mi_sensitive_{}", t.label)));
        header.push("critic_iterations".into());
        let mut out = header.join(",") + "\n";
        for r in &self.epochs {
            let mut row = vec![r.epoch.to_string(), r.composite_value.to_string()];
            row.extend(r.estimates.self_mi.map(|v| v.to_string()));
            row.extend(r.estimates.utility.iter().map(f64::to_string));
            row.extend(r.estimates.sensitive.iter().map(f64::to_string));
            row.push(r.critic_iterations.iter().sum::<usize>().to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TermRole {
    SelfInfo,
    Utility(usize),
    Sensitive(usize),
}

#[derive(Debug, Clone)]
struct Term<F> {
    role: TermRole,
    /// Signed weight: positive terms are maximised, negative minimised.
    coefficient: f64,
    partner: Array2<F>,
    critic: Critic<F>,
}

/// Alternating critic/encoder optimisation state. [`train_shaping`] drives it
/// end to end; the step methods are public so that individual phases can be
/// inspected.
#[derive(Debug, Clone)]
pub struct Shaper<F> {
    cfg: ShapingConfig,
    input: Array2<F>,
    encoder: Mlp<F>,
    adam: AdamState<F>,
    terms: Vec<Term<F>>,
    rng: ChaCha8Rng,
    fingerprint: String,
}

impl<F: Scalar> Shaper<F> {
    pub fn new(dataset: &VectorDataset, cfg: &ShapingConfig) -> Result<Self> {
        cfg.validate(dataset.dim())?;
        if dataset.len() < 2 {
            return Err(Error::data(format!("shaping needs at least 2 rows, got {}", dataset.len())));
        }
        let input = dataset.vectors_as::<F>();
        let dims = cfg.encoder_dims(dataset.dim());
        let encoder = Mlp::new(&dims, &activation_plan(dims.len() - 1, cfg.encoder_output), cfg.seed)?;
        let adam = AdamState::new(&encoder, AdamConfig::with_learning_rate(cfg.encoder_lr))?;

        let mut bound = Vec::new();
        if cfg.gamma > 0.0 {
            bound.push((TermRole::SelfInfo, cfg.gamma, input.clone()));
        }
        for (i, t) in cfg.utility_terms.iter().enumerate() {
            bound.push((TermRole::Utility(i), t.weight, dataset.label(&t.label)?.features()));
        }
        for (j, t) in cfg.sensitive_terms.iter().enumerate() {
            bound.push((TermRole::Sensitive(j), -t.weight, dataset.label(&t.label)?.features()));
        }
        let terms = bound
            .into_iter()
            .enumerate()
            .map(|(k, (role, coefficient, partner))| {
                let critic_cfg = EstimatorConfig {
                    seed: critic_seed(cfg, k),
                    ..cfg.estimator.clone()
                };
                Ok(Term {
                    role,
                    coefficient,
                    critic: Critic::new(cfg.output_dim, partner.ncols(), &critic_cfg)?,
                    partner,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Shaper {
            fingerprint: fingerprint(&(cfg, dataset.len(), dataset.dim(), F::PRECISION)),
            cfg: cfg.clone(),
            input,
            encoder,
            adam,
            terms,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d),
        })
    }

    pub fn encoder(&self) -> &Mlp<F> {
        &self.encoder
    }

    pub fn input(&self) -> &Array2<F> {
        &self.input
    }

    pub fn config(&self) -> &ShapingConfig {
        &self.cfg
    }

    /// Refits every critic on the current codes. Epoch 0 runs the full
    /// first-epoch budget; later epochs warm-start under the estimator's
    /// schedule.
    pub fn fit_critics(&mut self, epoch: usize) -> Result<EpochRecord> {
        let codes = self.encoder.predict(self.input.view())?;
        let schedule = if epoch == 0 {
            EstimatorConfig {
                max_iterations: self.cfg.first_epoch_iterations,
                early_stopping: false,
                ..self.cfg.estimator.clone()
            }
        } else {
            self.cfg.estimator.clone()
        };
        let mut estimates = TermEstimates {
            self_mi: None,
            utility: vec![0.0; self.cfg.utility_terms.len()],
            sensitive: vec![0.0; self.cfg.sensitive_terms.len()],
        };
        let mut critic_iterations = Vec::with_capacity(self.terms.len());
        for term in &mut self.terms {
            let pairs = PairedBatch::new(codes.clone(), term.partner.clone())?;
            let est = term.critic.fit(&pairs, &schedule)?;
            match term.role {
                TermRole::SelfInfo => estimates.self_mi = Some(est.value_nats),
                TermRole::Utility(i) => estimates.utility[i] = est.value_nats,
                TermRole::Sensitive(j) => estimates.sensitive[j] = est.value_nats,
            }
            critic_iterations.push(est.iterations_run);
        }
        Ok(EpochRecord {
            epoch,
            composite_value: composite_objective(&estimates, &self.cfg)?,
            estimates,
            critic_iterations,
        })
    }

    /// One marginal pairing per term.
    pub fn draw_permutations(&mut self) -> Vec<Vec<usize>> {
        let n = self.input.nrows();
        self.terms.iter().map(|_| marginal_permutation(n, &mut self.rng)).collect()
    }

    /// Weighted sum of the frozen critics' DV values on `codes` and its
    /// gradient with respect to `codes`.
    pub fn frozen_objective(&self, codes: ArrayView2<F>, perms: &[Vec<usize>]) -> Result<(f64, Array2<F>)> {
        if perms.len() != self.terms.len() {
            return Err(Error::shape("one permutation per MI term required"));
        }
        let mut value = 0.0;
        let mut grad = Array2::zeros(codes.raw_dim());
        for (term, perm) in self.terms.iter().zip(perms) {
            let (dv, g) = term.critic.dv_left_gradient(codes, term.partner.view(), perm)?;
            value += term.coefficient * dv;
            grad.scaled_add(F::from_f64(term.coefficient), &g);
        }
        Ok((value, grad))
    }

    /// One full-batch encoder Adam step ascending [`Self::frozen_objective`].
    /// The encoder is left untouched if the step would make it non-finite.
    pub fn encoder_step(&mut self, perms: &[Vec<usize>]) -> Result<()> {
        let (codes, cache) = self.encoder.forward(self.input.view())?;
        let (_, grad) = self.frozen_objective(codes.view(), perms)?;
        let grads = self.encoder.param_grads(&cache, (-grad).view())?;
        let backup = (self.encoder.clone(), self.adam.clone());
        self.adam.step(&mut self.encoder, &grads)?;
        if !self.encoder.is_finite() {
            (self.encoder, self.adam) = backup;
            return Err(Error::Numeric("encoder update produced non-finite weights".into()));
        }
        Ok(())
    }

    pub fn into_encoder(self) -> EncoderModel<F> {
        EncoderModel {
            net: self.encoder,
            training_fingerprint: self.fingerprint,
        }
    }

    /// Runs every epoch. A diverging critic or encoder update ends training
    /// early with the last stable encoder and `diverged_at_epoch` set.
    pub fn run(mut self) -> Result<(EncoderModel<F>, TrainingHistory)> {
        let mut history = TrainingHistory {
            config_fingerprint: self.fingerprint.clone(),
            ..TrainingHistory::default()
        };
        for epoch in 0..self.cfg.epochs {
            let record = match self.fit_critics(epoch) {
                Ok(r) => r,
                Err(e @ Error::Divergence { .. }) => {
                    warn!("epoch {epoch}: {e}; keeping the encoder from the previous epoch");
                    history.diverged_at_epoch = Some(epoch);
                    break;
                }
                Err(e) => return Err(e),
            };
            info!(
                "epoch {epoch}: composite {:.4}, critic iterations {:?}",
                record.composite_value, record.critic_iterations
            );
            history.epochs.push(record);
            let mut stable = true;
            for _ in 0..self.cfg.steps_per_epoch {
                let perms = self.draw_permutations();
                if let Err(e) = self.encoder_step(&perms) {
                    if !matches!(e, Error::Numeric(_) | Error::Data(_)) {
                        return Err(e);
                    }
                    warn!("epoch {epoch}: encoder update failed ({e}); stopping");
                    history.diverged_at_epoch = Some(epoch);
                    stable = false;
                    break;
                }
            }
            if !stable {
                break;
            }
        }
        Ok((self.into_encoder(), history))
    }
}

fn critic_seed(cfg: &ShapingConfig, term: usize) -> u64 {
    cfg.estimator
        .seed
        .wrapping_add(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(term as u64 + 1)
}

/// Trains an encoder on `dataset` under `cfg`.
pub fn train_shaping<F: Scalar>(dataset: &VectorDataset, cfg: &ShapingConfig) -> Result<(EncoderModel<F>, TrainingHistory)> {
    Shaper::new(dataset, cfg)?.run()
}

/// Replaces the vectors with their codes; labels and metadata are kept.
pub fn encode_dataset<F: Scalar>(encoder: &EncoderModel<F>, dataset: &VectorDataset) -> Result<VectorDataset> {
    if dataset.dim() != encoder.input_dim() {
        return Err(Error::shape(format!(
            "encoder expects {} input dims, dataset has {}",
            encoder.input_dim(),
            dataset.dim()
        )));
    }
    let codes = encoder.encode(dataset.vectors_as::<F>().view())?;
    dataset.with_vectors(codes.mapv(|v| v.as_f64() as f32))
}

/// Untrained encoder with the default shaping architecture.
pub fn baseline_random_encoder<F: Scalar>(input_dim: usize, output_dim: usize, seed: u64) -> Result<EncoderModel<F>> {
    let cfg = ShapingConfig {
        output_dim,
        seed,
        ..ShapingConfig::default()
    };
    let dims = cfg.encoder_dims(input_dim);
    Ok(EncoderModel {
        net: Mlp::new(&dims, &activation_plan(dims.len() - 1, cfg.encoder_output), seed)?,
        training_fingerprint: fingerprint(&("random", input_dim, output_dim, seed)),
    })
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every vector element.
pub fn baseline_noisy(dataset: &VectorDataset, sigma: f64, seed: u64) -> Result<VectorDataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(dataset.clone());
    }
    let noise = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = dataset.vectors().mapv(|v| (v as f64 + noise.sample(&mut rng)) as f32);
    dataset.with_vectors(noisy)
}
