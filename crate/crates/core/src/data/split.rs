use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VectorDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratify_by: Option<String>,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            train_fraction,
            seed,
            stratify_by: None,
        }
    }
}

/// Disjoint, exhaustive, seeded train/validation split. Rows keep their
/// original relative order within each part. With `stratify_by`, each class
/// contributes `round(fraction * class_count)` rows to the training part.
pub fn split(ds: &VectorDataset, spec: &SplitSpec) -> Result<(VectorDataset, VectorDataset)> {
    let n = ds.len();
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    if n < 2 {
        return Err(Error::config(format!("cannot split {n} rows")));
    }
    if spec.train_fraction * (n as f64) < 1.0 {
        return Err(Error::config(format!(
            "train fraction {} of {n} rows leaves no training row",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let groups: Vec<Vec<usize>> = match &spec.stratify_by {
        None => vec![(0..n).collect()],
        Some(name) => {
            let col = ds.label(name)?;
            let mut by_class: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
            for (i, &v) in col.values.iter().enumerate() {
                by_class.entry(v).or_default().push(i);
            }
            by_class.into_values().collect()
        }
    };

    let mut train = Vec::new();
    for mut group in groups {
        let take = ((spec.train_fraction * group.len() as f64).round() as usize).min(group.len());
        group.shuffle(&mut rng);
        train.extend_from_slice(&group[..take]);
    }
    // keep at least one row on each side
    if train.len() == n {
        train.sort_unstable();
        train.shuffle(&mut rng);
        train.pop();
    }
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let valid: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((ds.select(&train), ds.select(&valid)))
}
