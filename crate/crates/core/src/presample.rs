//! Noiseless pre-run: per-node quantile bands and k-means codebooks.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{KMeansConfig, QuantileConfig};
use crate::engine::RowEvaluator;
use crate::error::{Error, Result};
use crate::graph::{DagSpec, PoolingKind, PoolingSpec};
use crate::scm::QuantilePair;
use crate::seed::{substream, tags};

/// Row-major `rows x cols` matrix of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{} values do not form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(SampleMatrix { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }
}

/// Runs `num_presamples` noiseless rows and returns one matrix per node.
pub fn prerun(dag: &DagSpec, num_presamples: usize, master_seed: u64) -> Result<Vec<SampleMatrix>> {
    let eval = RowEvaluator::new(dag)?;
    let n = eval.hidden_dim();
    let width = dag.len() * n;
    let rows: Vec<Vec<f64>> = (0..num_presamples)
        .into_par_iter()
        .map_init(
            || eval.scratch(),
            |scratch, r| {
                let mut rng = substream(master_seed, tags::PRERUN, r as u64);
                eval.eval_row(dag.len(), None, scratch, &mut rng)?;
                Ok(scratch.values[..width].to_vec())
            },
        )
        .collect::<Result<_>>()?;
    let mut per_node: Vec<Vec<f64>> = vec![Vec::with_capacity(num_presamples * n); dag.len()];
    for row in &rows {
        for (i, m) in per_node.iter_mut().enumerate() {
            m.extend_from_slice(&row[i * n..(i + 1) * n]);
        }
    }
    per_node
        .into_iter()
        .map(|d| SampleMatrix::new(num_presamples, n, d))
        .collect()
}

/// Empirical quantile of sorted data with linear interpolation between
/// order statistics: `h = p (m - 1)`, `x[floor h] + frac(h) (x[floor h + 1] - x[floor h])`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let h = p * (m - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= m {
        return sorted[m - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

pub fn compute_quantiles(samples: &SampleMatrix, lo: f64, hi: f64) -> Result<QuantilePair> {
    if samples.rows < 2 {
        return Err(Error::InvalidInput(format!(
            "quantiles need at least 2 samples, got {}",
            samples.rows
        )));
    }
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidInput(format!("quantile levels must satisfy 0 <= {lo} < {hi} <= 1")));
    }
    let mut q10 = Vec::with_capacity(samples.cols);
    let mut q90 = Vec::with_capacity(samples.cols);
    for c in 0..samples.cols {
        let mut col = samples.column(c);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample in component {c}")));
        }
        col.sort_by(f64::total_cmp);
        q10.push(quantile_sorted(&col, lo));
        q90.push(quantile_sorted(&col, hi));
    }
    QuantilePair::new(q10, q90)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centroids: Vec<Vec<f64>>,
    pub fitted_on: usize,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    #[inline]
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (l, v) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, v);
            if d < best_d {
                best_d = d;
                best = l;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct CodebookFit {
    pub codebook: Codebook,
    pub requested_k: usize,
    /// Within-cluster sum of squares after every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl CodebookFit {
    pub fn was_reduced(&self) -> bool {
        self.codebook.k() < self.requested_k
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_rows(samples: &SampleMatrix) -> usize {
    let mut rows: Vec<&[f64]> = (0..samples.rows).map(|r| samples.row(r)).collect();
    let cmp = |a: &&[f64], b: &&[f64]| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    rows.sort_by(cmp);
    rows.dedup_by(|a, b| cmp(&&**a, &&**b).is_eq());
    rows.len()
}

/// k-means with k-means++ seeding and Lloyd iterations.
///
/// Stops once no centroid moves by more than `cfg.tolerance` (Euclidean) or
/// after `cfg.max_iterations` updates. Centroids are returned in the order in
/// which clusters are first hit when scanning the samples. When the data has
/// fewer than `k` distinct vectors, `k` is reduced to that count; fewer than
/// two distinct vectors is a degenerate node.
pub fn fit_codebook<R: Rng + ?Sized>(
    samples: &SampleMatrix,
    k: usize,
    cfg: &KMeansConfig,
    rng: &mut R,
) -> Result<CodebookFit> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("codebook needs k >= 2, got {k}")));
    }
    if samples.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let distinct = distinct_rows(samples);
    if distinct < 2 {
        return Err(Error::DegenerateNode(format!(
            "{distinct} distinct sample vector(s); cannot form 2 categories"
        )));
    }
    let k_eff = k.min(distinct);
    let mut centroids = kmeans_pp(samples, k_eff, rng);
    let mut assign = vec![0usize; samples.rows];
    let mut history = Vec::new();
    let mut iterations = 0;
    let dim = samples.cols;
    loop {
        history.push(assign_all(samples, &centroids, &mut assign));
        if iterations == cfg.max_iterations {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k_eff];
        let mut counts = vec![0usize; k_eff];
        for (r, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(samples.row(r)) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k_eff {
            if counts[c] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        if shift < cfg.tolerance {
            history.push(assign_all(samples, &centroids, &mut assign));
            break;
        }
    }

    let mut order = Vec::with_capacity(k_eff);
    let mut seen = vec![false; k_eff];
    for &c in &assign {
        if !seen[c] {
            seen[c] = true;
            order.push(c);
        }
    }
    order.extend((0..k_eff).filter(|c| !seen[*c]));
    let mut ordered: Vec<Vec<f64>> = Vec::with_capacity(k_eff);
    for c in order {
        if !ordered.iter().any(|v| v == &centroids[c]) {
            ordered.push(centroids[c].clone());
        }
    }
    if ordered.len() < 2 {
        return Err(Error::DegenerateNode("k-means collapsed to a single centroid".into()));
    }
    Ok(CodebookFit {
        codebook: Codebook {
            centroids: ordered,
            fitted_on: samples.rows,
        },
        requested_k: k,
        inertia_history: history,
        iterations,
    })
}

fn assign_all(samples: &SampleMatrix, centroids: &[Vec<f64>], assign: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (r, a) in assign.iter_mut().enumerate() {
        let x = samples.row(r);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, v) in centroids.iter().enumerate() {
            let d = sq_dist(x, v);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        *a = best;
        inertia += best_d;
    }
    inertia
}

fn kmeans_pp<R: Rng + ?Sized>(samples: &SampleMatrix, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..samples.rows);
    let mut centroids = vec![samples.row(first).to_vec()];
    let mut d2: Vec<f64> = (0..samples.rows)
        .map(|r| sq_dist(samples.row(r), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (r, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            pick = Some(r);
            if target < d {
                break;
            }
            target -= d;
        }
        // `pick` is the last positive-weight row if rounding ran past the end.
        let r = pick.expect("at least k distinct rows");
        let c = samples.row(r).to_vec();
        for (rr, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(samples.row(rr), &c));
        }
        centroids.push(c);
    }
    centroids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrerunStats {
    pub num_presamples: usize,
    pub quantile_levels: (f64, f64),
    /// Recorded for regeneration by other implementations.
    pub quantile_convention: String,
    pub quantiles: Vec<QuantilePair>,
    pub codebooks: Vec<Option<Codebook>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PrerunStats {
    pub fn covers(&self, dag: &DagSpec) -> Result<()> {
        if self.quantiles.len() != dag.len() || self.codebooks.len() != dag.len() {
            return Err(Error::ContractViolation(format!(
                "pre-run statistics cover {} nodes, graph has {}",
                self.quantiles.len(),
                dag.len()
            )));
        }
        for (i, node) in dag.nodes.iter().enumerate() {
            match (&self.codebooks[i], node.pooling.is_categorical()) {
                (Some(cb), true) if Some(cb.k()) == node.category_count => {}
                (None, false) => {}
                _ => {
                    return Err(Error::ContractViolation(format!(
                        "codebook of node {} does not match its pooling",
                        node.name
                    )))
                }
            }
        }
        Ok(())
    }
}

pub const QUANTILE_CONVENTION: &str = "linear interpolation, h = p*(m-1)";

/// Runs the pre-run and fits quantiles and codebooks.
///
/// Categorical nodes whose pre-run data has too few distinct vectors get
/// their category count reduced; nodes with a single distinct vector are
/// demoted to mean pooling. Both events land in `warnings`.
pub fn build_prerun_stats(
    dag: &mut DagSpec,
    num_presamples: usize,
    levels: &QuantileConfig,
    kmeans: &KMeansConfig,
    master_seed: u64,
) -> Result<PrerunStats> {
    let matrices = prerun(dag, num_presamples, master_seed)?;
    let mut quantiles = Vec::with_capacity(dag.len());
    let mut codebooks = Vec::with_capacity(dag.len());
    let mut warnings = Vec::new();
    for (i, m) in matrices.iter().enumerate() {
        quantiles.push(compute_quantiles(m, levels.lo, levels.hi)?);
        let node = &mut dag.nodes[i];
        if !node.pooling.is_categorical() {
            codebooks.push(None);
            continue;
        }
        let k = node.category_count.unwrap_or(2);
        let mut rng = substream(master_seed, tags::KMEANS, i as u64);
        match fit_codebook(m, k, kmeans, &mut rng) {
            Ok(fit) => {
                if fit.was_reduced() {
                    warnings.push(format!(
                        "{}: category count reduced from {} to {} (too few distinct pre-run vectors)",
                        node.name,
                        k,
                        fit.codebook.k()
                    ));
                    node.category_count = Some(fit.codebook.k());
                }
                codebooks.push(Some(fit.codebook));
            }
            Err(Error::DegenerateNode(why)) => {
                warnings.push(format!("{}: demoted to mean pooling ({why})", node.name));
                node.pooling = PoolingSpec {
                    kind: PoolingKind::Mean,
                };
                node.category_count = None;
                codebooks.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PrerunStats {
        num_presamples,
        quantile_levels: (levels.lo, levels.hi),
        quantile_convention: QUANTILE_CONVENTION.to_string(),
        quantiles,
        codebooks,
        warnings,
    })
}
