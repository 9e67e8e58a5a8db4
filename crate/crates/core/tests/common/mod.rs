//! Reference implementations used as test oracles. They share no code with
//! the library paths they check.

#![allow(dead_code)]

use std::collections::VecDeque;

use relscm_core::config::{GenerationConfig, GraphParams};
use relscm_core::graph::{assign_node_configs, sample_dag};
use relscm_core::presample::{compute_quantiles, prerun};
use relscm_core::scm::sample_root;
use relscm_core::seed::substream;
use relscm_core::DagSpec;

/// Full distance matrix, stable sort by (distance, row), first `k` rows,
/// inverse-distance weights with the zero-distance rule.
pub fn brute_knn_regression(train: &[Vec<f64>], y: &[f64], test: &[Vec<f64>], k: usize) -> Vec<f64> {
    test.iter()
        .map(|x| {
            let mut d: Vec<(f64, usize)> = train
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let s: f64 = x.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum();
                    (s.sqrt(), i)
                })
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let near = &d[..k];
            let zeros: Vec<usize> = near.iter().filter(|p| p.0 == 0.0).map(|p| p.1).collect();
            if !zeros.is_empty() {
                return zeros.iter().map(|&i| y[i]).sum::<f64>() / zeros.len() as f64;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for &(dist, i) in near {
                let w = 1.0 / (dist + 1e-12);
                num += w * y[i];
                den += w;
            }
            num / den
        })
        .collect()
}

pub fn brute_knn_classes(train: &[Vec<f64>], y: &[u32], test: &[Vec<f64>], k: usize, classes: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let indicator: Vec<f64> = y.iter().map(|&l| if l as usize == c { 1.0 } else { 0.0 }).collect();
            brute_knn_regression(train, &indicator, test, k)
        })
        .fold(vec![Vec::new(); test.len()], |mut acc, col| {
            for (row, v) in acc.iter_mut().zip(col) {
                row.push(v);
            }
            acc
        })
}

/// Area under the empirical ROC curve by the trapezoid rule, one point per
/// distinct threshold.
pub fn trapezoid_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let n = positive.len() as f64 - p;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if positive[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / p, fp / n);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

/// Lowest index among the centroids at minimal squared distance.
pub fn brute_nearest(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let d: Vec<f64> = centroids
        .iter()
        .map(|c| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    d.iter().position(|&v| v == min).unwrap()
}

/// Kahn's algorithm; true when every node gets a topological position.
pub fn is_acyclic(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut indeg = vec![0usize; n];
    let mut out = vec![Vec::new(); n];
    for &(a, b) in edges {
        indeg[b] += 1;
        out[a].push(b);
    }
    let mut q: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(u) = q.pop_front() {
        seen += 1;
        for &v in &out[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                q.push_back(v);
            }
        }
    }
    seen == n
}

/// Nodes reachable from `sources` without entering `blocked`.
pub fn reachable(n: usize, edges: &[(usize, usize)], sources: &[usize], blocked: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut q: VecDeque<usize> = VecDeque::new();
    for &s in sources {
        seen[s] = true;
        q.push_back(s);
    }
    while let Some(u) = q.pop_front() {
        for &(a, b) in edges {
            if a == u && b != blocked && !seen[b] {
                seen[b] = true;
                q.push_back(b);
            }
        }
    }
    seen
}

pub fn sample_mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn annotated_dag(seed: u64, nodes: usize) -> DagSpec {
    let cfg = GenerationConfig::default();
    let dag = sample_dag(&GraphParams::fixed(nodes, 2), seed, "test-graph").unwrap();
    assign_node_configs(dag, &cfg, "N", &mut substream(seed, "test-configs", 0)).unwrap()
}

/// For every root of `dag`: q10/q90 from a 1000-row pre-run, then the share
/// of `fresh` new root draws below q10 and above q90, per component.
pub fn root_quantile_coverage(dag: &DagSpec, seed: u64, fresh: usize) -> Vec<(String, f64, f64)> {
    let samples = prerun(dag, 1000, seed).unwrap();
    let n = dag.hidden_dim;
    let mut out = Vec::new();
    for r in dag.roots() {
        let q = compute_quantiles(&samples[r], 0.1, 0.9).unwrap();
        let dist = dag.nodes[r].root_dist.as_ref().unwrap();
        let draws = sample_root(dist, fresh * n, &mut substream(seed, "test-fresh", r as u64)).unwrap();
        for c in 0..n {
            let col: Vec<f64> = draws.iter().skip(c).step_by(n).copied().collect();
            let below = col.iter().filter(|&&v| v < q.q10[c]).count() as f64 / fresh as f64;
            let above = col.iter().filter(|&&v| v > q.q90[c]).count() as f64 / fresh as f64;
            out.push((format!("{}[{c}]", dag.nodes[r].name), below, above));
        }
    }
    out
}
