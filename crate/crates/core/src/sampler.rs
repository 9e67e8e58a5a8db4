//! Main sampling run: propagate with quantile-scaled noise, pool every node
//! vector to a scalar and assemble the rows into a [`Table`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{NoisePlan, RowEvaluator};
use crate::error::{Error, Result};
use crate::graph::{DagSpec, PoolingKind, PoolingSpec};
use crate::presample::{Codebook, PrerunStats};
use crate::scm::{NoiseConfig, NoiseSampler};
use crate::seed::substream;

/// Rows handed to one worker at a time.
const CHUNK_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pooled {
    Numeric(f64),
    Category(u32),
}

impl Pooled {
    pub fn as_f64(self) -> f64 {
        match self {
            Pooled::Numeric(v) => v,
            Pooled::Category(c) => c as f64,
        }
    }
}

/// Median of the components; even lengths average the middle pair.
pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Population variance (divides by the component count).
pub fn variance(x: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m
}

pub fn pool(x: &[f64], spec: &PoolingSpec, codebook: Option<&Codebook>) -> Result<Pooled> {
    if x.is_empty() {
        return Err(Error::ContractViolation("cannot pool an empty vector".into()));
    }
    Ok(match (spec.kind, codebook) {
        (PoolingKind::Categorical, Some(cb)) => Pooled::Category(cb.nearest(x) as u32),
        (PoolingKind::Categorical, None) => {
            return Err(Error::ContractViolation("categorical pooling without a codebook".into()))
        }
        (_, Some(_)) => {
            return Err(Error::ContractViolation("codebook given for continuous pooling".into()))
        }
        (PoolingKind::Norm, None) => Pooled::Numeric(x.iter().map(|v| v * v).sum::<f64>().sqrt()),
        (PoolingKind::Mean, None) => Pooled::Numeric(x.iter().sum::<f64>() / x.len() as f64),
        (PoolingKind::Median, None) => Pooled::Numeric(median(x)),
        (PoolingKind::Variance, None) => Pooled::Numeric(variance(x)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical { categories: usize },
}

/// Column header: everything about a column except its values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    /// Node index in the graph the table was sampled from.
    pub node: usize,
    #[serde(flatten)]
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<u32>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub info: ColumnInfo,
    pub data: ColumnData,
}

impl Column {
    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn numeric(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn categorical(&self) -> Option<&[u32]> {
        match &self.data {
            ColumnData::Categorical(v) => Some(v),
            ColumnData::Numeric(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_fingerprint: String,
    pub master_seed: u64,
    pub run_tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    pub row_count: usize,
    pub provenance: Provenance,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.info.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.info.name == name)
    }

    pub fn headers(&self) -> Vec<ColumnInfo> {
        self.columns.iter().map(|c| c.info.clone()).collect()
    }

    pub fn target_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].info.role == ColumnRole::Target)
            .collect()
    }

    /// Checks equal lengths, category ranges and finiteness.
    pub fn validate(&self) -> Result<()> {
        for c in &self.columns {
            if c.data.len() != self.row_count {
                return Err(Error::ContractViolation(format!(
                    "column {} has {} rows, table has {}",
                    c.info.name,
                    c.data.len(),
                    self.row_count
                )));
            }
            match (&c.info.kind, &c.data) {
                (ColumnKind::Numeric, ColumnData::Numeric(v)) => {
                    if let Some(r) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::ContractViolation(format!(
                            "column {} row {r} is not finite",
                            c.info.name
                        )));
                    }
                }
                (ColumnKind::Categorical { categories }, ColumnData::Categorical(v)) => {
                    if let Some(r) = v.iter().position(|&x| x as usize >= *categories) {
                        return Err(Error::ContractViolation(format!(
                            "column {} row {r} holds category {} outside [0, {categories})",
                            c.info.name, v[r]
                        )));
                    }
                }
                _ => {
                    return Err(Error::ContractViolation(format!(
                        "column {} kind does not match its data",
                        c.info.name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Header for `node` of `dag`, with the role given by the caller.
pub fn column_info(dag: &DagSpec, node: usize, role: ColumnRole) -> ColumnInfo {
    let spec = &dag.nodes[node];
    let kind = match spec.category_count {
        Some(k) if spec.pooling.is_categorical() => ColumnKind::Categorical { categories: k },
        _ => ColumnKind::Numeric,
    };
    ColumnInfo {
        name: spec.name.clone(),
        node,
        kind,
        role,
    }
}

/// Roles of `nodes` within the sub-graph they induce: a node is a target
/// when none of its children is in the subset.
pub fn subset_roles(dag: &DagSpec, nodes: &[usize]) -> Vec<ColumnRole> {
    let mut member = vec![false; dag.len()];
    nodes.iter().for_each(|&i| member[i] = true);
    let children = dag.child_lists();
    nodes
        .iter()
        .map(|&i| {
            if children[i].iter().any(|&c| member[c]) {
                ColumnRole::Feature
            } else {
                ColumnRole::Target
            }
        })
        .collect()
}

/// Sampling request for a subset of a graph's nodes.
pub struct RunSpec<'a> {
    pub dag: &'a DagSpec,
    pub stats: &'a PrerunStats,
    /// Only nodes `0..node_limit` are propagated; the set must be closed
    /// under parents, which index order guarantees.
    pub node_limit: usize,
    pub columns: Vec<ColumnInfo>,
    pub num_rows: usize,
    pub noise: NoiseConfig,
    pub master_seed: u64,
    pub run_tag: &'a str,
}

pub fn generate_rows(run: &RunSpec<'_>) -> Result<Table> {
    let dag = run.dag;
    run.stats.covers(dag)?;
    if run.node_limit > dag.len() {
        return Err(Error::ContractViolation("node limit exceeds graph size".into()));
    }
    if let Some(c) = run.columns.iter().find(|c| c.node >= run.node_limit) {
        return Err(Error::ContractViolation(format!(
            "column {} lies outside the propagated prefix",
            c.name
        )));
    }
    let eval = RowEvaluator::new(dag)?;
    let n = eval.hidden_dim();
    let plan = NoisePlan {
        sampler: NoiseSampler::new(run.noise)?,
        quantiles: &run.stats.quantiles,
    };
    let pools: Vec<(PoolingSpec, Option<&Codebook>)> = run
        .columns
        .iter()
        .map(|c| (dag.nodes[c.node].pooling, run.stats.codebooks[c.node].as_ref()))
        .collect();
    let width = run.columns.len();
    let chunks = run.num_rows.div_ceil(CHUNK_ROWS);
    let blocks: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * CHUNK_ROWS;
            let end = (start + CHUNK_ROWS).min(run.num_rows);
            let mut scratch = eval.scratch();
            let mut block = Vec::with_capacity((end - start) * width);
            for r in start..end {
                let mut rng = substream(run.master_seed, run.run_tag, r as u64);
                eval.eval_row(run.node_limit, Some(&plan), &mut scratch, &mut rng)?;
                for (col, (spec, cb)) in run.columns.iter().zip(&pools) {
                    let x = &scratch.values[col.node * n..(col.node + 1) * n];
                    let v = pool(x, spec, *cb)?;
                    if let Pooled::Numeric(f) = v {
                        if !f.is_finite() {
                            return Err(Error::NonFinite {
                                node: col.name.clone(),
                                detail: format!("{} pooling of {x:?}", spec.kind.name()),
                            });
                        }
                    }
                    block.push(v.as_f64());
                }
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;

    let mut columns: Vec<Column> = run
        .columns
        .iter()
        .map(|info| Column {
            info: info.clone(),
            data: match info.kind {
                ColumnKind::Numeric => ColumnData::Numeric(Vec::with_capacity(run.num_rows)),
                ColumnKind::Categorical { .. } => ColumnData::Categorical(Vec::with_capacity(run.num_rows)),
            },
        })
        .collect();
    for block in &blocks {
        for row in block.chunks_exact(width) {
            for (col, &v) in columns.iter_mut().zip(row) {
                match &mut col.data {
                    ColumnData::Numeric(d) => d.push(v),
                    ColumnData::Categorical(d) => d.push(v as u32),
                }
            }
        }
    }
    let table = Table {
        columns,
        row_count: run.num_rows,
        provenance: Provenance {
            schema_fingerprint: String::new(),
            master_seed: run.master_seed,
            run_tag: run.run_tag.to_string(),
        },
    };
    table.validate()?;
    Ok(table)
}

/// Samples every node of `dag`; columns follow node order and sinks are
/// marked as targets.
pub fn generate_table(
    dag: &DagSpec,
    stats: &PrerunStats,
    num_rows: usize,
    noise: &NoiseConfig,
    master_seed: u64,
    run_tag: &str,
) -> Result<Table> {
    let nodes: Vec<usize> = (0..dag.len()).collect();
    let roles = subset_roles(dag, &nodes);
    let columns = nodes
        .iter()
        .zip(roles)
        .map(|(&i, role)| column_info(dag, i, role))
        .collect();
    generate_rows(&RunSpec {
        dag,
        stats,
        node_limit: dag.len(),
        columns,
        num_rows,
        noise: *noise,
        master_seed,
        run_tag,
    })
}
