//! Feature representations for the two evaluation conditions.
//!
//! Main-only: every non-target main column, numeric ones standardized with
//! training statistics, categorical ones (including the key `C`) one-hot over
//! the categories seen in training. Joined: the same block plus, per row, an
//! aggregate of the additional-table rows sharing the row's key.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{ColumnData, ColumnKind, ColumnRole, Table};

/// Lower bound on standard deviations used for scaling.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Main,
    Additional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum Encoding {
    Standardized,
    OneHot { category: u32 },
    KeyMean,
    KeyFrequency { category: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub source: FeatureSource,
    pub column: String,
    #[serde(flatten)]
    pub encoding: Encoding,
}

/// Row-major feature matrix with one descriptor per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub columns: Vec<FeatureColumn>,
}

impl FeatureMatrix {
    /// A matrix without column descriptors (tests and benches).
    pub fn unlabeled(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix shape");
        FeatureMatrix {
            rows,
            cols,
            data,
            columns: Vec::new(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Fails if any feature was derived from main-table column `name`.
    pub fn ensure_excludes(&self, name: &str) -> Result<()> {
        match self
            .columns
            .iter()
            .find(|c| c.source == FeatureSource::Main && c.column == name)
        {
            Some(c) => Err(Error::ContractViolation(format!(
                "target column {name} leaks into features as {:?}",
                c.encoding
            ))),
            None => Ok(()),
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::ContractViolation(format!(
                "non-finite feature at row {} column {}",
                i / self.cols.max(1),
                i % self.cols.max(1)
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum MainFeature {
    Numeric { col: usize, mean: f64, std: f64 },
    Categorical { col: usize, slots: Vec<Option<usize>>, observed: Vec<u32> },
}

/// Training statistics of the main-table feature columns.
#[derive(Debug, Clone)]
pub struct MainNorms {
    features: Vec<MainFeature>,
    columns: Vec<FeatureColumn>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl MainNorms {
    /// Fits on `train` rows; target columns are skipped.
    pub fn fit(table: &Table, train: Range<usize>) -> Result<Self> {
        if train.end > table.row_count {
            return Err(Error::InvalidInput("training range exceeds table".into()));
        }
        let mut features = Vec::new();
        let mut columns = Vec::new();
        for (ci, col) in table.columns.iter().enumerate() {
            if col.info.role == ColumnRole::Target {
                continue;
            }
            match (&col.data, col.info.kind) {
                (ColumnData::Numeric(v), _) => {
                    let (mean, std) = mean_std(v[train.clone()].iter().copied());
                    features.push(MainFeature::Numeric { col: ci, mean, std });
                    columns.push(FeatureColumn {
                        source: FeatureSource::Main,
                        column: col.info.name.clone(),
                        encoding: Encoding::Standardized,
                    });
                }
                (ColumnData::Categorical(v), ColumnKind::Categorical { categories }) => {
                    let mut seen = vec![false; categories];
                    v[train.clone()].iter().for_each(|&c| seen[c as usize] = true);
                    let observed: Vec<u32> = (0..categories as u32).filter(|&c| seen[c as usize]).collect();
                    let mut slots = vec![None; categories];
                    for (slot, &c) in observed.iter().enumerate() {
                        slots[c as usize] = Some(slot);
                        columns.push(FeatureColumn {
                            source: FeatureSource::Main,
                            column: col.info.name.clone(),
                            encoding: Encoding::OneHot { category: c },
                        });
                    }
                    features.push(MainFeature::Categorical { col: ci, slots, observed });
                }
                _ => {
                    return Err(Error::ContractViolation(format!(
                        "column {} kind does not match its data",
                        col.info.name
                    )))
                }
            }
        }
        Ok(MainNorms { features, columns })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    fn write_row(&self, table: &Table, r: usize, out: &mut Vec<f64>) {
        for f in &self.features {
            match f {
                MainFeature::Numeric { col, mean, std } => {
                    let v = table.columns[*col].numeric().expect("numeric")[r];
                    out.push((v - mean) / std);
                }
                MainFeature::Categorical { col, slots, observed } => {
                    let start = out.len();
                    out.resize(start + observed.len(), 0.0);
                    let c = table.columns[*col].categorical().expect("categorical")[r] as usize;
                    // Categories unseen in training leave the block at zero.
                    if let Some(Some(slot)) = slots.get(c) {
                        out[start + slot] = 1.0;
                    }
                }
            }
        }
    }
}

pub fn featurize_main_only(table: &Table, rows: Range<usize>, norms: &MainNorms) -> Result<FeatureMatrix> {
    if rows.end > table.row_count {
        return Err(Error::InvalidInput("row range exceeds table".into()));
    }
    let mut data = Vec::with_capacity(rows.len() * norms.width());
    for r in rows.clone() {
        norms.write_row(table, r, &mut data);
    }
    let fm = FeatureMatrix {
        rows: rows.len(),
        cols: norms.width(),
        data,
        columns: norms.columns.clone(),
    };
    fm.ensure_finite()?;
    Ok(fm)
}

/// Per-key aggregates of the additional table.
#[derive(Debug, Clone)]
pub struct KeyAggregates {
    per_key: Vec<Option<Vec<f64>>>,
    fallback: Vec<f64>,
    columns: Vec<FeatureColumn>,
}

impl KeyAggregates {
    /// Numeric columns aggregate by mean, categorical ones by their
    /// frequency vector. Keys without rows fall back to the table-wide
    /// means and frequencies.
    pub fn build(add: &Table, key: &str) -> Result<Self> {
        let kcol = add
            .column(key)
            .ok_or_else(|| Error::ContractViolation(format!("additional table has no key column {key}")))?;
        let (keys, key_count) = match (&kcol.data, kcol.info.kind) {
            (ColumnData::Categorical(v), ColumnKind::Categorical { categories }) => (v, categories),
            _ => return Err(Error::ContractViolation(format!("key column {key} is not categorical"))),
        };
        let mut columns = Vec::new();
        for col in add.columns.iter().filter(|c| c.info.name != key) {
            match col.info.kind {
                ColumnKind::Numeric => columns.push(FeatureColumn {
                    source: FeatureSource::Additional,
                    column: col.info.name.clone(),
                    encoding: Encoding::KeyMean,
                }),
                ColumnKind::Categorical { categories } => {
                    for c in 0..categories as u32 {
                        columns.push(FeatureColumn {
                            source: FeatureSource::Additional,
                            column: col.info.name.clone(),
                            encoding: Encoding::KeyFrequency { category: c },
                        });
                    }
                }
            }
        }
        let width = columns.len();
        let mut sums = vec![vec![0.0; width]; key_count];
        let mut counts = vec![0usize; key_count];
        let mut global = vec![0.0; width];
        let mut row = Vec::with_capacity(width);
        for r in 0..add.row_count {
            row.clear();
            for col in add.columns.iter().filter(|c| c.info.name != key) {
                match (&col.data, col.info.kind) {
                    (ColumnData::Numeric(v), _) => row.push(v[r]),
                    (ColumnData::Categorical(v), ColumnKind::Categorical { categories }) => {
                        let start = row.len();
                        row.resize(start + categories, 0.0);
                        row[start + v[r] as usize] = 1.0;
                    }
                    _ => return Err(Error::ContractViolation("column kind mismatch".into())),
                }
            }
            let k = keys[r] as usize;
            counts[k] += 1;
            for (i, v) in row.iter().enumerate() {
                sums[k][i] += v;
                global[i] += v;
            }
        }
        if add.row_count > 0 {
            global.iter_mut().for_each(|g| *g /= add.row_count as f64);
        }
        let per_key = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        Ok(KeyAggregates {
            per_key,
            fallback: global,
            columns,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn key_count(&self) -> usize {
        self.per_key.len()
    }

    /// Aggregate for `key`, or the fallback when the key has no rows.
    pub fn lookup(&self, key: u32) -> &[f64] {
        match self.per_key.get(key as usize) {
            Some(Some(v)) => v,
            _ => &self.fallback,
        }
    }

    pub fn has_rows(&self, key: u32) -> bool {
        matches!(self.per_key.get(key as usize), Some(Some(_)))
    }
}

/// Main-only statistics plus standardization of the key aggregates over
/// training rows.
#[derive(Debug, Clone)]
pub struct JoinedNorms {
    pub main: MainNorms,
    pub aggregates: KeyAggregates,
    key_col: usize,
    agg_mean: Vec<f64>,
    agg_std: Vec<f64>,
}

impl JoinedNorms {
    pub fn fit(main: &Table, train: Range<usize>, add: &Table, key: &str) -> Result<Self> {
        let key_col = main
            .column_index(key)
            .ok_or_else(|| Error::ContractViolation(format!("main table has no key column {key}")))?;
        let main_kind = main.columns[key_col].info.kind;
        let add_kind = add
            .column(key)
            .map(|c| c.info.kind)
            .ok_or_else(|| Error::ContractViolation(format!("additional table has no key column {key}")))?;
        if main_kind != add_kind || !matches!(main_kind, ColumnKind::Categorical { .. }) {
            return Err(Error::ContractViolation(format!(
                "key {key} codebooks differ: main {main_kind:?}, additional {add_kind:?}"
            )));
        }
        let main_norms = MainNorms::fit(main, train.clone())?;
        let aggregates = KeyAggregates::build(add, key)?;
        let keys = main.columns[key_col].categorical().expect("categorical");
        let w = aggregates.width();
        let mut agg_mean = Vec::with_capacity(w);
        let mut agg_std = Vec::with_capacity(w);
        for j in 0..w {
            let it = keys[train.clone()].iter().map(|&k| aggregates.lookup(k)[j]);
            let (m, s) = mean_std(it);
            agg_mean.push(m);
            agg_std.push(s);
        }
        Ok(JoinedNorms {
            main: main_norms,
            aggregates,
            key_col,
            agg_mean,
            agg_std,
        })
    }

    pub fn width(&self) -> usize {
        self.main.width() + self.aggregates.width()
    }
}

pub fn featurize_joined(main: &Table, rows: Range<usize>, norms: &JoinedNorms) -> Result<FeatureMatrix> {
    if rows.end > main.row_count {
        return Err(Error::InvalidInput("row range exceeds table".into()));
    }
    let keys = main.columns[norms.key_col].categorical().expect("categorical key");
    let mut data = Vec::with_capacity(rows.len() * norms.width());
    for r in rows.clone() {
        norms.main.write_row(main, r, &mut data);
        let agg = norms.aggregates.lookup(keys[r]);
        for (j, v) in agg.iter().enumerate() {
            data.push((v - norms.agg_mean[j]) / norms.agg_std[j]);
        }
    }
    let mut columns = norms.main.columns.clone();
    columns.extend(norms.aggregates.columns.iter().cloned());
    let fm = FeatureMatrix {
        rows: rows.len(),
        cols: norms.width(),
        data,
        columns,
    };
    fm.ensure_finite()?;
    Ok(fm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{Column, ColumnInfo, Provenance};

    fn num(name: &str, role: ColumnRole, v: Vec<f64>) -> Column {
        Column {
            info: ColumnInfo { name: name.into(), node: 0, kind: ColumnKind::Numeric, role },
            data: ColumnData::Numeric(v),
        }
    }

    fn cat(name: &str, k: usize, role: ColumnRole, v: Vec<u32>) -> Column {
        Column {
            info: ColumnInfo { name: name.into(), node: 0, kind: ColumnKind::Categorical { categories: k }, role },
            data: ColumnData::Categorical(v),
        }
    }

    fn table(columns: Vec<Column>) -> Table {
        let row_count = columns[0].data.len();
        Table { columns, row_count, provenance: Provenance::default() }
    }

    #[test]
    fn constant_numeric_column_standardizes_to_zero() {
        let t = table(vec![num("X", ColumnRole::Feature, vec![3.0; 4]), num("Y", ColumnRole::Target, vec![1.0; 4])]);
        let norms = MainNorms::fit(&t, 0..4).unwrap();
        let fm = featurize_main_only(&t, 0..4, &norms).unwrap();
        assert_eq!(fm.cols, 1);
        assert!(fm.data.iter().all(|v| *v == 0.0));
        fm.ensure_excludes("Y").unwrap();
    }

    #[test]
    fn one_hot_over_training_categories_and_unseen_fallback() {
        let t = table(vec![
            cat("K", 4, ColumnRole::Feature, vec![0, 1, 2, 0, 3]),
            num("Y", ColumnRole::Target, vec![0.0; 5]),
        ]);
        let norms = MainNorms::fit(&t, 0..4).unwrap();
        let train = featurize_main_only(&t, 0..4, &norms).unwrap();
        assert_eq!(train.cols, 3);
        assert_eq!(train.row(1), &[0.0, 1.0, 0.0]);
        let test = featurize_main_only(&t, 4..5, &norms).unwrap();
        assert_eq!(test.row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn key_aggregation_rules() {
        let add = table(vec![
            num("A0", ColumnRole::Feature, vec![1.0, 3.0, 10.0]),
            cat("A1", 2, ColumnRole::Feature, vec![0, 1, 1]),
            cat("C", 4, ColumnRole::Target, vec![0, 0, 1]),
        ]);
        let agg = KeyAggregates::build(&add, "C").unwrap();
        assert_eq!(agg.width(), 3);
        assert_eq!(agg.lookup(0), &[2.0, 0.5, 0.5]);
        assert_eq!(agg.lookup(1), &[10.0, 0.0, 1.0]);
        assert!(!agg.has_rows(2));
        let g = agg.lookup(2);
        assert!((g[0] - 14.0 / 3.0).abs() < 1e-12 && (g[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn joined_rejects_mismatched_keys() {
        let main = table(vec![cat("C", 4, ColumnRole::Feature, vec![0, 1]), num("Y", ColumnRole::Target, vec![0.0, 1.0])]);
        let add = table(vec![num("A0", ColumnRole::Feature, vec![1.0]), cat("C", 5, ColumnRole::Target, vec![0])]);
        assert!(matches!(JoinedNorms::fit(&main, 0..2, &add, "C"), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn joined_matrix_stays_finite_with_missing_keys() {
        let main = table(vec![
            cat("C", 4, ColumnRole::Feature, vec![0, 1, 2, 3]),
            num("Y", ColumnRole::Target, vec![0.0, 1.0, 2.0, 3.0]),
        ]);
        let add = table(vec![num("A0", ColumnRole::Feature, vec![1.0, 5.0]), cat("C", 4, ColumnRole::Target, vec![0, 0])]);
        let norms = JoinedNorms::fit(&main, 0..3, &add, "C").unwrap();
        let fm = featurize_joined(&main, 0..4, &norms).unwrap();
        assert_eq!(fm.cols, 3 + 1);
        fm.ensure_finite().unwrap();
        fm.ensure_excludes("Y").unwrap();
    }
}
