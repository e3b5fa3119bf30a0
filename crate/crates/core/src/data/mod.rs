//! The sample container shared by every stage, its on-disk formats,
//! train/validation splitting and synthetic generators with known structure.

mod csv_io;
mod isvd;
mod split;
mod synth;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

pub use csv_io::{export_csv, import_csv, CsvSchema, LabelSpec, VectorColumns};
pub use isvd::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use split::{split, SplitSpec};
pub use synth::{
    gaussian_mi_nats, gen_gaussian_pairs, gen_labeled_synth, GaussianPairs, LabeledSynthSpec, LatentStructure, PUBLIC_LABEL,
    SENSITIVE_LABEL,
};

/// Kind of an integer label column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "classes")]
pub enum LabelKind {
    /// Values in `{0, 1}`.
    Binary,
    /// Values in `[0, k)`.
    Categorical(u32),
    /// Unconstrained integers.
    None,
}

impl LabelKind {
    /// Number of classes for classification purposes.
    pub fn classes(self) -> Option<u32> {
        match self {
            LabelKind::Binary => Some(2),
            LabelKind::Categorical(k) => Some(k),
            LabelKind::None => None,
        }
    }

    fn check(self, value: i32) -> bool {
        match self {
            LabelKind::Binary => value == 0 || value == 1,
            LabelKind::Categorical(k) => value >= 0 && (value as i64) < k as i64,
            LabelKind::None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelColumn {
    pub name: String,
    pub kind: LabelKind,
    pub values: Vec<i32>,
}

impl LabelColumn {
    pub fn new(name: impl Into<String>, kind: LabelKind, values: Vec<i32>) -> Result<Self> {
        let col = LabelColumn {
            name: name.into(),
            kind,
            values,
        };
        col.validate()?;
        Ok(col)
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::data("label column with empty name"));
        }
        if let LabelKind::Categorical(k) = self.kind {
            if k < 2 {
                return Err(Error::data(format!("categorical label '{}' needs k >= 2", self.name)));
            }
        }
        if let Some((i, v)) = self.values.iter().enumerate().find(|(_, &v)| !self.kind.check(v)) {
            return Err(Error::data(format!(
                "label '{}' row {i}: value {v} invalid for {:?}",
                self.name, self.kind
            )));
        }
        Ok(())
    }

    /// Critic/classifier input features: binary and unconstrained labels as a
    /// single scalar column, categorical labels one-hot.
    pub fn features<F: Scalar>(&self) -> Array2<F> {
        match self.kind {
            LabelKind::Categorical(k) => {
                let mut out = Array2::zeros((self.values.len(), k as usize));
                for (i, &v) in self.values.iter().enumerate() {
                    out[[i, v as usize]] = F::one();
                }
                out
            }
            LabelKind::Binary | LabelKind::None => Array2::from_shape_fn((self.values.len(), 1), |(i, _)| {
                F::from_f64(self.values[i] as f64)
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub source: String,
    pub seed: Option<u64>,
}

/// `N` rows of `d`-dimensional vectors plus named integer label columns.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDataset {
    vectors: Array2<f32>,
    labels: Vec<LabelColumn>,
    pub metadata: Metadata,
}

impl VectorDataset {
    pub fn new(vectors: Array2<f32>, labels: Vec<LabelColumn>, metadata: Metadata) -> Result<Self> {
        let n = vectors.nrows();
        for (i, col) in labels.iter().enumerate() {
            col.validate()?;
            if col.values.len() != n {
                return Err(Error::data(format!(
                    "label '{}' has {} values for {n} rows",
                    col.name,
                    col.values.len()
                )));
            }
            if labels[..i].iter().any(|c| c.name == col.name) {
                return Err(Error::data(format!("duplicate label '{}'", col.name)));
            }
        }
        if !vectors.iter().all(|v| v.is_finite()) {
            return Err(Error::data("non-finite vector entry"));
        }
        Ok(VectorDataset {
            vectors,
            labels,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f32> {
        &self.vectors
    }

    /// Vectors promoted (or kept) at the requested precision.
    pub fn vectors_as<F: Scalar>(&self) -> Array2<F> {
        self.vectors.mapv(|v| F::from_f64(v as f64))
    }

    pub fn labels(&self) -> &[LabelColumn] {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Result<&LabelColumn> {
        self.labels.iter().find(|c| c.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.labels.iter().map(|c| c.name.as_str()).collect();
            Error::config(format!("no label named '{name}' (have {known:?})"))
        })
    }

    /// Same labels and metadata, new vectors (row count must match).
    pub fn with_vectors(&self, vectors: Array2<f32>) -> Result<Self> {
        if vectors.nrows() != self.len() {
            return Err(Error::shape(format!(
                "replacement has {} rows, dataset has {}",
                vectors.nrows(),
                self.len()
            )));
        }
        VectorDataset::new(vectors, self.labels.clone(), self.metadata.clone())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        VectorDataset {
            vectors: self.vectors.select(Axis(0), indices),
            labels: self
                .labels
                .iter()
                .map(|c| LabelColumn {
                    name: c.name.clone(),
                    kind: c.kind,
                    values: indices.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        }
    }
}
