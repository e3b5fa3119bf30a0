//! Downstream evaluation: classifiers, accuracy, ROC/AUROC, MI bias and
//! comparison reports.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{LabelKind, VectorDataset};
use crate::error::{Error, Result};
use crate::mi::{estimate_mi, EstimatorConfig, MiEstimate, PairedBatch};
use crate::nn::{activation_plan, Activation, AdamConfig, AdamState, Mlp, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    /// Full-batch Adam steps.
    pub steps: usize,
    /// Z-score features with training-set statistics before fitting.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden_dims: vec![64],
            learning_rate: 1e-3,
            steps: 200,
            standardize: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

/// MLP head over embeddings: one logit for binary labels, `k` logits for
/// `k`-class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamClassifier<F> {
    pub net: Mlp<F>,
    pub label: String,
    pub classes: usize,
    standardizer: Option<Standardizer>,
}

impl<F: Scalar> DownstreamClassifier<F> {
    fn features(&self, ds: &VectorDataset) -> Result<Array2<F>> {
        if ds.dim() != self.net.input_dim() {
            return Err(Error::shape(format!(
                "classifier expects {} dims, dataset has {}",
                self.net.input_dim(),
                ds.dim()
            )));
        }
        Ok(match &self.standardizer {
            None => ds.vectors_as(),
            Some(s) => Array2::from_shape_fn(ds.vectors().raw_dim(), |(i, j)| {
                F::from_f64((ds.vectors()[[i, j]] as f64 - s.mean[j]) / s.scale[j])
            }),
        })
    }

    /// Raw logits, one row per sample.
    pub fn logits(&self, ds: &VectorDataset) -> Result<Array2<f64>> {
        Ok(self.net.predict(self.features(ds)?.view())?.mapv(|v| v.as_f64()))
    }
}

fn class_count(kind: LabelKind, label: &str) -> Result<usize> {
    match kind {
        LabelKind::Binary => Ok(2),
        LabelKind::Categorical(k) => Ok(k as usize),
        LabelKind::None => Err(Error::config(format!("label {label} has no class structure"))),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy training with full-batch Adam.
pub fn train_downstream<F: Scalar>(
    train: &VectorDataset,
    label: &str,
    cfg: &ClassifierConfig,
) -> Result<DownstreamClassifier<F>> {
    let column = train.label(label)?;
    let classes = class_count(column.kind, label)?;
    let mut present = vec![false; classes];
    for &v in &column.values {
        present[v as usize] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::config(format!("label {label} has fewer than 2 classes in the training data")));
    }
    if cfg.steps == 0 || !(cfg.learning_rate > 0.0) || cfg.hidden_dims.contains(&0) {
        return Err(Error::config("classifier needs positive steps, learning rate and hidden dims"));
    }

    let standardizer = cfg.standardize.then(|| {
        let x = train.vectors().mapv(|v| v as f64);
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Standardizer { mean, scale }
    });
    let outputs = if classes == 2 { 1 } else { classes };
    let mut dims = vec![train.dim()];
    dims.extend(&cfg.hidden_dims);
    dims.push(outputs);
    let mut clf = DownstreamClassifier::<F> {
        net: Mlp::new(&dims, &activation_plan(dims.len() - 1, Activation::Linear), cfg.seed)?,
        label: label.to_string(),
        classes,
        standardizer,
    };
    let x = clf.features(train)?;
    let y = &column.values;
    let n = y.len() as f64;
    let mut adam = AdamState::new(&clf.net, AdamConfig::with_learning_rate(cfg.learning_rate))?;
    for _ in 0..cfg.steps {
        let (out, cache) = clf.net.forward(x.view())?;
        let grad = if outputs == 1 {
            Array2::from_shape_fn((y.len(), 1), |(i, _)| {
                F::from_f64((sigmoid(out[[i, 0]].as_f64()) - y[i] as f64) / n)
            })
        } else {
            let mut g = Array2::zeros(out.raw_dim());
            for (i, row) in out.outer_iter().enumerate() {
                let logits: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
                let probs = crate::mi::softmax(&logits);
                for (k, p) in probs.iter().enumerate() {
                    let target = if k == y[i] as usize { 1.0 } else { 0.0 };
                    g[[i, k]] = F::from_f64((p - target) / n);
                }
            }
            g
        };
        let grads = clf.net.param_grads(&cache, grad.view())?;
        adam.step(&mut clf.net, &grads)?;
    }
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Binary: `sigmoid(logit)`. Multiclass: probability of the predicted
    /// class.
    pub scores: Vec<f64>,
    pub predictions: Vec<i32>,
    pub accuracy: f64,
}

/// Predictions break ties toward the lowest class index (a zero logit is
/// class 0).
pub fn evaluate<F: Scalar>(clf: &DownstreamClassifier<F>, valid: &VectorDataset, label: &str) -> Result<Evaluation> {
    let truth = &valid.label(label)?.values;
    let logits = clf.logits(valid)?;
    let (scores, predictions): (Vec<f64>, Vec<i32>) = if clf.classes == 2 {
        logits.column(0).iter().map(|&l| (sigmoid(l), (l > 0.0) as i32)).unzip()
    } else {
        logits
            .outer_iter()
            .map(|row| {
                let probs = crate::mi::softmax(&row.to_vec());
                let mut best = 0;
                for k in 1..probs.len() {
                    if probs[k] > probs[best] {
                        best = k;
                    }
                }
                (probs[best], best as i32)
            })
            .unzip()
    };
    let correct = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    let accuracy = if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 };
    Ok(Evaluation {
        scores,
        predictions,
        accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    /// From `(inf, 0, 0)` down to the lowest distinct score, which reaches
    /// `(1, 1)`.
    pub curve: Vec<RocPoint>,
    pub auroc: f64,
}

impl Roc {
    /// `threshold,fpr,tpr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn check_binary(scores: &[f64], labels: &[i32]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::data("non-finite score"));
    }
    if labels.iter().any(|&l| l != 0 && l != 1) {
        return Err(Error::config("ROC labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::config("ROC needs both classes present"));
    }
    Ok((pos, neg))
}

/// Rank-based AUROC (Mann-Whitney U with midranks for ties) plus the ROC
/// curve with one point per distinct score.
pub fn roc_auroc(scores: &[f64], labels: &[i32]) -> Result<Roc> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut positive_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        // Ranks are 1-based; the tie group spans ranks start+1 ..= end+1.
        let midrank = (start + end + 2) as f64 / 2.0;
        let group_pos = order[start..=end].iter().filter(|&&i| labels[i] == 1).count();
        positive_rank_sum += midrank * group_pos as f64;
        start = end + 1;
    }
    let u = positive_rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    let auroc = u / (pos as f64 * neg as f64);

    let mut curve = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut idx = order.len();
    while idx > 0 {
        let threshold = scores[order[idx - 1]];
        while idx > 0 && scores[order[idx - 1]] == threshold {
            if labels[order[idx - 1]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx -= 1;
        }
        curve.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(Roc { curve, auroc })
}

/// `(wins + ties / 2) / (n_pos * n_neg)` over every positive-negative pair.
pub fn auroc_pairwise(scores: &[f64], labels: &[i32]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut wins = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// DV estimate of `I(vectors; label)`, the label as a scalar (binary) or
/// one-hot (categorical) stream.
pub fn bias_measure<F: Scalar>(ds: &VectorDataset, sensitive_label: &str, cfg: &EstimatorConfig) -> Result<MiEstimate> {
    let label = ds.label(sensitive_label)?;
    let pairs = PairedBatch::new(ds.vectors_as::<F>(), label.features::<F>())?;
    estimate_mi(&pairs, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub accuracy: f64,
    /// Binary tasks only.
    pub auroc: Option<f64>,
    #[serde(skip)]
    pub roc: Option<Roc>,
}

/// Metrics for one embedding of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub embedding: String,
    pub dim: usize,
    pub tasks: Vec<TaskResult>,
    pub bias_nats: Option<f64>,
    pub config_fingerprint: String,
}

/// Trains one classifier per task on `train` and scores it on `valid`.
pub fn evaluate_tasks<F: Scalar>(
    train: &VectorDataset,
    valid: &VectorDataset,
    tasks: &[String],
    cfg: &ClassifierConfig,
) -> Result<Vec<TaskResult>> {
    tasks
        .iter()
        .map(|task| {
            let clf = train_downstream::<F>(train, task, cfg)?;
            let eval = evaluate(&clf, valid, task)?;
            let roc = if clf.classes == 2 {
                Some(roc_auroc(&eval.scores, &valid.label(task)?.values)?)
            } else {
                None
            };
            Ok(TaskResult {
                task: task.clone(),
                accuracy: eval.accuracy,
                auroc: roc.as_ref().map(|r| r.auroc),
                roc,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<ReportEntry>,
}

pub fn build_report(entries: Vec<ReportEntry>) -> Result<EvalReport> {
    if entries.is_empty() {
        return Err(Error::config("a report needs at least one entry"));
    }
    for e in &entries {
        for t in &e.tasks {
            let in_range = |v: f64| (0.0..=1.0).contains(&v);
            if !in_range(t.accuracy) || !t.auroc.is_none_or(in_range) {
                return Err(Error::data(format!("{}/{}: metric outside [0, 1]", e.embedding, t.task)));
            }
        }
    }
    Ok(EvalReport { entries })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain record")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(format!("report: {e}")))
    }

    pub fn entry(&self, embedding: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.embedding == embedding)
    }

    /// Aligned plain-text table: one row per embedding, accuracy and AUROC
    /// columns per task, bias last when any entry has it.
    pub fn to_table(&self) -> String {
        let mut tasks: Vec<(&str, bool)> = Vec::new();
        for e in &self.entries {
            for t in &e.tasks {
                match tasks.iter_mut().find(|(name, _)| *name == t.task) {
                    Some(slot) => slot.1 |= t.auroc.is_some(),
                    None => tasks.push((&t.task, t.auroc.is_some())),
                }
            }
        }
        let with_bias = self.entries.iter().any(|e| e.bias_nats.is_some());

        let mut header = vec!["embedding".to_string(), "dim".to_string()];
        for (name, auroc) in &tasks {
            header.push(format!("{name} acc"));
            if *auroc {
                header.push(format!("{name} auroc"));
            }
        }
        if with_bias {
            header.push("bias (nats)".into());
        }
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut rows = vec![header];
        for e in &self.entries {
            let mut row = vec![e.embedding.clone(), e.dim.to_string()];
            for (name, auroc) in &tasks {
                let t = e.tasks.iter().find(|t| t.task == *name);
                row.push(fmt(t.map(|t| t.accuracy)));
                if *auroc {
                    row.push(fmt(t.and_then(|t| t.auroc)));
                }
            }
            if with_bias {
                row.push(fmt(e.bias_nats));
            }
            rows.push(row);
        }

        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
