//! Does the additional table carry information about main-table targets?
//!
//! Every main-table target is predicted with inverse-distance-weighted kNN
//! twice on the same contiguous train/test split: once from the main table
//! alone and once with key-matched aggregates of the additional table
//! appended. Numeric targets are scored by RMSE, categorical ones by AUC.

pub mod features;
pub mod knn;
pub mod metrics;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relational::{RelationalDataset, COUPLING_NAME};
use crate::sampler::{ColumnData, ColumnKind, Table};

pub use features::{featurize_joined, featurize_main_only, FeatureMatrix, JoinedNorms, MainNorms};
pub use knn::{knn_predict, nearest_neighbors, Neighbors, Predictions, Task, TrainTargets};
pub use metrics::{auc_binary, auc_multiclass, rmse};

/// Head rows train, tail rows test.
pub fn split(table: &Table, test_fraction: f64) -> Result<(Range<usize>, Range<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test_fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = table.row_count;
    let test = (n as f64 * test_fraction).round() as usize;
    let train = n - test.min(n);
    if train == 0 || test == 0 {
        return Err(Error::InvalidParameter(format!(
            "split of {n} rows at {test_fraction} leaves an empty side"
        )));
    }
    Ok((0..train, train..n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub test_fraction: f64,
    /// Recorded in the report. The protocol itself draws no randomness.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Rmse,
    Auc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub name: String,
    pub node: usize,
    pub task: TaskKind,
    pub metric: MetricName,
    pub main_only: Option<f64>,
    pub joined: Option<f64>,
    pub latently_affected: bool,
    /// Why a metric is missing (e.g. a single class in the test rows).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TargetResult {
    /// `joined - main_only` for AUC, `joined / main_only` for RMSE.
    pub fn effect(&self) -> Option<f64> {
        let (m, j) = (self.main_only?, self.joined?);
        Some(match self.metric {
            MetricName::Auc => j - m,
            MetricName::Rmse => {
                if m == 0.0 {
                    if j == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    j / m
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub master_seed: u64,
    pub eval_seed: u64,
    pub k: usize,
    pub test_fraction: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub add_rows: usize,
    pub main_only_width: usize,
    pub joined_width: usize,
    pub targets: Vec<TargetResult>,
}

impl EvalReport {
    pub fn target(&self, name: &str) -> Option<&TargetResult> {
        self.targets.iter().find(|t| t.name == name)
    }

    /// One row per target and condition.
    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["target", "condition", "task", "metric", "value", "latently_affected"])?;
        for t in &self.targets {
            for (cond, v) in [("main_only", t.main_only), ("joined", t.joined)] {
                w.write_record([
                    t.name.clone(),
                    cond.to_string(),
                    serde_json::to_value(t.task)?.as_str().unwrap_or_default().to_string(),
                    serde_json::to_value(t.metric)?.as_str().unwrap_or_default().to_string(),
                    v.map(|x| x.to_string()).unwrap_or_default(),
                    t.latently_affected.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn score_target(table: &Table, col: usize, neighbors: &Neighbors, train: &Range<usize>, test: &Range<usize>) -> Result<f64> {
    let column = &table.columns[col];
    match (&column.data, column.info.kind) {
        (ColumnData::Numeric(y), _) => {
            let p = knn::predict_regression(neighbors, &y[train.clone()]);
            rmse(&p, &y[test.clone()])
        }
        (ColumnData::Categorical(y), ColumnKind::Categorical { categories }) => {
            let p = knn::predict_classification(neighbors, &y[train.clone()], categories);
            auc_multiclass(&p, &y[test.clone()], categories)
        }
        _ => Err(Error::ContractViolation(format!("column {} kind mismatch", column.info.name))),
    }
}

pub fn run_comparison(dataset: &RelationalDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let main = &dataset.main_table;
    let add = &dataset.add_table;
    for t in [main, add] {
        if t.provenance.schema_fingerprint != dataset.fingerprint {
            return Err(Error::ContractViolation(format!(
                "table fingerprint {} does not match schema {}",
                t.provenance.schema_fingerprint, dataset.fingerprint
            )));
        }
    }
    let (train, test) = split(main, cfg.test_fraction)?;

    let main_norms = MainNorms::fit(main, train.clone())?;
    let main_train = featurize_main_only(main, train.clone(), &main_norms)?;
    let main_test = featurize_main_only(main, test.clone(), &main_norms)?;
    let joined_norms = JoinedNorms::fit(main, train.clone(), add, COUPLING_NAME)?;
    let joined_train = featurize_joined(main, train.clone(), &joined_norms)?;
    let joined_test = featurize_joined(main, test.clone(), &joined_norms)?;

    let nb_main = nearest_neighbors(&main_train, &main_test, cfg.k)?;
    let nb_joined = nearest_neighbors(&joined_train, &joined_test, cfg.k)?;

    let mut targets = Vec::new();
    for col in main.target_columns() {
        let info = &main.columns[col].info;
        main_train.ensure_excludes(&info.name)?;
        joined_train.ensure_excludes(&info.name)?;
        let (task, metric) = match info.kind {
            ColumnKind::Numeric => (TaskKind::Regression, MetricName::Rmse),
            ColumnKind::Categorical { .. } => (TaskKind::Classification, MetricName::Auc),
        };
        let a = score_target(main, col, &nb_main, &train, &test);
        let b = score_target(main, col, &nb_joined, &train, &test);
        let error = match (&a, &b) {
            (Err(Error::UndefinedMetric(m)), _) | (_, Err(Error::UndefinedMetric(m))) => Some(m.clone()),
            _ => None,
        };
        let keep = |r: Result<f64>| -> Result<Option<f64>> {
            match r {
                Ok(v) => Ok(Some(v)),
                Err(Error::UndefinedMetric(_)) => Ok(None),
                Err(e) => Err(e),
            }
        };
        targets.push(TargetResult {
            name: info.name.clone(),
            node: info.node,
            task,
            metric,
            main_only: keep(a)?,
            joined: keep(b)?,
            latently_affected: dataset.schema.latently_affected(info.node),
            error,
        });
    }
    Ok(EvalReport {
        fingerprint: dataset.fingerprint.clone(),
        master_seed: main.provenance.master_seed,
        eval_seed: cfg.seed,
        k: cfg.k,
        test_fraction: cfg.test_fraction,
        train_rows: train.len(),
        test_rows: test.len(),
        add_rows: add.row_count,
        main_only_width: main_train.cols,
        joined_width: joined_train.cols,
        targets,
    })
}
