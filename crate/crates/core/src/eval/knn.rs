//! Exact k-nearest-neighbour prediction with inverse-distance weights.

use rayon::prelude::*;

use super::features::{Encoding, FeatureMatrix};
use crate::error::{Error, Result};

/// Added to distances before inverting them.
pub const INVERSE_DISTANCE_EPS: f64 = 1e-12;

/// The `k` nearest training rows of every test row, as `(train_row, distance)`
/// sorted by distance, ties broken toward the lower training row.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub k: usize,
    pub lists: Vec<Vec<(usize, f64)>>,
}

pub fn nearest_neighbors(train: &FeatureMatrix, test: &FeatureMatrix, k: usize) -> Result<Neighbors> {
    if k == 0 || k > train.rows {
        return Err(Error::InvalidParameter(format!(
            "k = {k} with {} training rows",
            train.rows
        )));
    }
    if train.cols != test.cols {
        return Err(Error::InvalidParameter(format!(
            "train width {} differs from test width {}",
            train.cols, test.cols
        )));
    }
    let (train_c, test_c) = match (Compact::of(train), Compact::of(test)) {
        (Some(a), Some(b)) if train.columns == test.columns => (a, b),
        _ => (Compact::dense(train), Compact::dense(test)),
    };
    let lists = (0..test.rows)
        .into_par_iter()
        .map(|t| {
            // Sorted insertion buffer of (squared distance, row).
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for r in 0..train.rows {
                let d2 = test_c.sq_dist(t, &train_c, r);
                if best.len() == k && d2 >= best[k - 1].0 {
                    continue;
                }
                let pos = best.partition_point(|&(bd, _)| bd <= d2);
                best.insert(pos, (d2, r));
                best.truncate(k);
            }
            best.into_iter().map(|(d2, r)| (r, d2.sqrt())).collect()
        })
        .collect();
    Ok(Neighbors { k, lists })
}

/// Feature rows with each one-hot block stored as the index of its hot
/// column (`u32::MAX` for an all-zero block). A block adds 0 to the squared
/// distance when both rows agree, 2 when they hold different categories and
/// 1 when exactly one of them is all-zero, the same as the dense encoding.
struct Compact {
    dense_cols: usize,
    dense: Vec<f64>,
    blocks: usize,
    hot: Vec<u32>,
}

const COLD: u32 = u32::MAX;

impl Compact {
    fn dense(m: &FeatureMatrix) -> Self {
        Compact {
            dense_cols: m.cols,
            dense: m.data.clone(),
            blocks: 0,
            hot: Vec::new(),
        }
    }

    /// `None` when the matrix has no descriptors or a one-hot block holds
    /// anything other than a single 1 among 0s.
    fn of(m: &FeatureMatrix) -> Option<Self> {
        if m.columns.len() != m.cols {
            return None;
        }
        let mut dense_idx = Vec::new();
        let mut blocks: Vec<(usize, usize)> = Vec::new();
        let mut c = 0;
        while c < m.cols {
            let col = &m.columns[c];
            if matches!(col.encoding, Encoding::OneHot { .. }) {
                let start = c;
                while c < m.cols
                    && matches!(m.columns[c].encoding, Encoding::OneHot { .. })
                    && m.columns[c].source == col.source
                    && m.columns[c].column == col.column
                {
                    c += 1;
                }
                blocks.push((start, c));
            } else {
                dense_idx.push(c);
                c += 1;
            }
        }
        if blocks.is_empty() {
            return None;
        }
        let mut dense = Vec::with_capacity(m.rows * dense_idx.len());
        let mut hot = Vec::with_capacity(m.rows * blocks.len());
        for r in 0..m.rows {
            let row = m.row(r);
            dense.extend(dense_idx.iter().map(|&c| row[c]));
            for &(a, b) in &blocks {
                let mut h = COLD;
                for (i, &v) in row[a..b].iter().enumerate() {
                    if v == 1.0 && h == COLD {
                        h = i as u32;
                    } else if v != 0.0 {
                        return None;
                    }
                }
                hot.push(h);
            }
        }
        Some(Compact {
            dense_cols: dense_idx.len(),
            dense,
            blocks: blocks.len(),
            hot,
        })
    }

    #[inline]
    fn sq_dist(&self, i: usize, other: &Compact, j: usize) -> f64 {
        let d = self.dense_cols;
        let mut acc = sq_dist(&self.dense[i * d..(i + 1) * d], &other.dense[j * d..(j + 1) * d]);
        let b = self.blocks;
        for (&x, &y) in self.hot[i * b..(i + 1) * b].iter().zip(&other.hot[j * b..(j + 1) * b]) {
            if x != y {
                acc += if x == COLD || y == COLD { 1.0 } else { 2.0 };
            }
        }
        acc
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Neighbour weights: if any neighbour sits at distance zero, only those
/// count, equally; otherwise `1 / (d + eps)`.
fn weights(list: &[(usize, f64)]) -> Vec<(usize, f64)> {
    if list.iter().any(|&(_, d)| d == 0.0) {
        list.iter().filter(|&&(_, d)| d == 0.0).map(|&(r, _)| (r, 1.0)).collect()
    } else {
        list.iter()
            .map(|&(r, d)| (r, 1.0 / (d + INVERSE_DISTANCE_EPS)))
            .collect()
    }
}

pub fn predict_regression(neighbors: &Neighbors, train_y: &[f64]) -> Vec<f64> {
    neighbors
        .lists
        .iter()
        .map(|list| {
            let w = weights(list);
            let total: f64 = w.iter().map(|(_, w)| w).sum();
            w.iter().map(|&(r, w)| w * train_y[r]).sum::<f64>() / total
        })
        .collect()
}

/// Per-class score vectors summing to one.
pub fn predict_classification(neighbors: &Neighbors, train_y: &[u32], num_classes: usize) -> Vec<Vec<f64>> {
    neighbors
        .lists
        .iter()
        .map(|list| {
            let w = weights(list);
            let total: f64 = w.iter().map(|(_, w)| w).sum();
            let mut scores = vec![0.0; num_classes];
            for (r, wt) in w {
                scores[train_y[r] as usize] += wt;
            }
            scores.iter_mut().for_each(|s| *s /= total);
            scores
        })
        .collect()
}

/// Hard label: argmax, ties to the lowest class id.
pub fn hard_label(scores: &[f64]) -> u32 {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    best as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification { num_classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainTargets<'a> {
    Numeric(&'a [f64]),
    Categorical(&'a [u32]),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Regression(Vec<f64>),
    Classification(Vec<Vec<f64>>),
}

pub fn knn_predict(
    train_x: &FeatureMatrix,
    train_y: TrainTargets<'_>,
    test_x: &FeatureMatrix,
    k: usize,
    task: Task,
) -> Result<Predictions> {
    let neighbors = nearest_neighbors(train_x, test_x, k)?;
    predict_with(&neighbors, train_y, task)
}

pub fn predict_with(neighbors: &Neighbors, train_y: TrainTargets<'_>, task: Task) -> Result<Predictions> {
    match (task, train_y) {
        (Task::Regression, TrainTargets::Numeric(y)) => Ok(Predictions::Regression(predict_regression(neighbors, y))),
        (Task::Classification { num_classes }, TrainTargets::Categorical(y)) => {
            if let Some(bad) = y.iter().find(|&&c| c as usize >= num_classes) {
                return Err(Error::InvalidInput(format!("label {bad} outside [0, {num_classes})")));
            }
            Ok(Predictions::Classification(predict_classification(neighbors, y, num_classes)))
        }
        _ => Err(Error::ContractViolation("target kind does not match task".into())),
    }
}
