//! Random DAG structure: Barabási–Albert sampling, orientation, node roles
//! and per-node configuration.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{CountDistribution, GenerationConfig, GraphParams, RootFamilyConfig};
use crate::error::{Error, Result};
use crate::scm::{init_propagation_fn, Activation, PropagationFn, RootDistribution};
use crate::seed::substream;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    pub num_nodes: usize,
    /// Stored as `(low, high)` with `low < high`.
    pub edges: BTreeSet<(usize, usize)>,
}

impl UndirectedGraph {
    pub fn new(num_nodes: usize) -> Self {
        UndirectedGraph {
            num_nodes,
            edges: BTreeSet::new(),
        }
    }

    /// Inserts `{a, b}`; returns false for self-loops and duplicates.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        assert!(a < self.num_nodes && b < self.num_nodes, "node out of range");
        if a == b {
            return false;
        }
        self.edges.insert((a.min(b), a.max(b)))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|(a, b)| *a == v || *b == v).count()
    }
}

/// Preferential attachment starting from the connected seed pair `{0, 1}`.
///
/// Every later node `v` attaches to `min(attach_m, v)` distinct earlier nodes,
/// each picked with probability proportional to its degree before `v` joined.
pub fn sample_ba_graph<R: Rng + ?Sized>(
    num_nodes: usize,
    attach_m: usize,
    rng: &mut R,
) -> Result<UndirectedGraph> {
    if num_nodes < 2 {
        return Err(Error::InvalidParameter(format!("num_nodes = {num_nodes} < 2")));
    }
    if attach_m == 0 || attach_m >= num_nodes {
        return Err(Error::InvalidParameter(format!(
            "attach_m = {attach_m} must satisfy 1 <= attach_m < num_nodes = {num_nodes}"
        )));
    }
    let mut g = UndirectedGraph::new(num_nodes);
    g.add_edge(0, 1);
    // Each node appears once per incident edge.
    let mut endpoints = vec![0usize, 1];
    let mut picked = Vec::with_capacity(attach_m);
    for v in 2..num_nodes {
        let want = attach_m.min(v);
        picked.clear();
        while picked.len() < want {
            let u = endpoints[rng.random_range(0..endpoints.len())];
            if !picked.contains(&u) {
                picked.push(u);
            }
        }
        for &u in &picked {
            g.add_edge(u, v);
            endpoints.push(u);
            endpoints.push(v);
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// In-degree zero; also a feature for readout purposes.
    Root,
    Feature,
    /// Out-degree zero.
    Target,
}

impl Role {
    pub fn is_target(self) -> bool {
        self == Role::Target
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    Norm,
    Mean,
    Median,
    Variance,
    Categorical,
}

impl PoolingKind {
    pub const CONTINUOUS: [PoolingKind; 4] = [
        PoolingKind::Norm,
        PoolingKind::Mean,
        PoolingKind::Median,
        PoolingKind::Variance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoolingKind::Norm => "norm",
            PoolingKind::Mean => "mean",
            PoolingKind::Median => "median",
            PoolingKind::Variance => "variance",
            PoolingKind::Categorical => "cat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingSpec {
    pub kind: PoolingKind,
}

impl PoolingSpec {
    pub fn is_categorical(&self) -> bool {
        self.kind == PoolingKind::Categorical
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub index: usize,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_dist: Option<RootDistribution>,
    /// Present iff the node has parents; carries the activation tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagation: Option<PropagationFn>,
    pub pooling: PoolingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_count: Option<usize>,
}

impl NodeSpec {
    fn bare(index: usize) -> Self {
        NodeSpec {
            index,
            name: format!("N{index}"),
            root_dist: None,
            propagation: None,
            pooling: PoolingSpec {
                kind: PoolingKind::Mean,
            },
            category_count: None,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        self.propagation.as_ref().map(|f| f.activation)
    }
}

/// A sampled SCM graph. Node index order is a topological order: every edge
/// `(parent, child)` has `parent < child`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagSpec {
    pub hidden_dim: usize,
    pub nodes: Vec<NodeSpec>,
    /// Sorted, duplicate free.
    pub edges: Vec<(usize, usize)>,
    /// Empty until [`classify_nodes`] runs.
    pub roles: Vec<Role>,
}

impl DagSpec {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parents of every node, ascending. This is also the order in which
    /// parent vectors are concatenated for propagation.
    pub fn parent_lists(&self) -> Vec<Vec<usize>> {
        let mut parents = vec![Vec::new(); self.nodes.len()];
        for &(p, c) in &self.edges {
            parents[c].push(p);
        }
        parents.iter_mut().for_each(|p| p.sort_unstable());
        parents
    }

    pub fn child_lists(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.nodes.len()];
        for &(p, c) in &self.edges {
            children[p].push(c);
        }
        children.iter_mut().for_each(|c| c.sort_unstable());
        children
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        self.edges.iter().for_each(|&(_, c)| deg[c] += 1);
        deg
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        self.edges.iter().for_each(|&(p, _)| deg[p] += 1);
        deg
    }

    pub fn targets(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i].is_target()).collect()
    }

    pub fn non_targets(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.roles[i].is_target()).collect()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == Role::Root).collect()
    }

    /// Checks the structural invariants (and node annotations, if present).
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut prev = None;
        for &(p, c) in &self.edges {
            if c >= n || p >= c {
                return Err(Error::ContractViolation(format!("edge ({p}, {c}) is not index-increasing")));
            }
            if prev >= Some((p, c)) {
                return Err(Error::ContractViolation("edges not sorted or duplicated".into()));
            }
            prev = Some((p, c));
        }
        let indeg = self.in_degrees();
        let outdeg = self.out_degrees();
        if let Some(i) = (0..n).find(|&i| indeg[i] + outdeg[i] == 0) {
            return Err(Error::ContractViolation(format!("node {i} is isolated")));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.index != i {
                return Err(Error::ContractViolation(format!("node {i} carries index {}", node.index)));
            }
        }
        if self.roles.is_empty() {
            return Ok(());
        }
        if self.roles.len() != n {
            return Err(Error::ContractViolation("role vector length mismatch".into()));
        }
        for i in 0..n {
            let expect = expected_role(indeg[i], outdeg[i]);
            if self.roles[i] != expect {
                return Err(Error::ContractViolation(format!(
                    "node {i} has role {:?}, expected {expect:?}",
                    self.roles[i]
                )));
            }
        }
        Ok(())
    }

    /// Validates node annotations on top of [`DagSpec::validate`].
    pub fn validate_annotated(&self) -> Result<()> {
        self.validate()?;
        if self.roles.is_empty() {
            return Err(Error::ContractViolation("roles not classified".into()));
        }
        let parents = self.parent_lists();
        for (i, node) in self.nodes.iter().enumerate() {
            let is_root = parents[i].is_empty();
            if node.root_dist.is_some() != is_root {
                return Err(Error::ContractViolation(format!(
                    "{}: root distribution must be present iff the node is a root",
                    node.name
                )));
            }
            if let Some(d) = &node.root_dist {
                d.validate()?;
            }
            match &node.propagation {
                Some(f) => {
                    f.validate()?;
                    if f.outputs != self.hidden_dim || f.inputs != parents[i].len() * self.hidden_dim {
                        return Err(Error::ContractViolation(format!(
                            "{}: weight shape {}x{} does not match {} parents at n = {}",
                            node.name,
                            f.outputs,
                            f.inputs,
                            parents[i].len(),
                            self.hidden_dim
                        )));
                    }
                }
                None if !is_root => {
                    return Err(Error::ContractViolation(format!("{}: missing propagation", node.name)))
                }
                None => {}
            }
            match (node.pooling.is_categorical(), node.category_count) {
                (true, Some(k)) if k >= 2 => {}
                (false, None) => {}
                _ => {
                    return Err(Error::ContractViolation(format!(
                        "{}: category_count must be >= 2 exactly for categorical nodes",
                        node.name
                    )))
                }
            }
        }
        Ok(())
    }
}

fn expected_role(indeg: usize, outdeg: usize) -> Role {
    if outdeg == 0 {
        Role::Target
    } else if indeg == 0 {
        Role::Root
    } else {
        Role::Feature
    }
}

/// Orients every edge from the lower to the higher index, drops isolated
/// nodes and re-indexes the rest contiguously in their original order.
pub fn orient_and_prune(g: &UndirectedGraph) -> Result<DagSpec> {
    if g.edges.is_empty() {
        return Err(Error::DegenerateGraph("graph has no edges".into()));
    }
    let mut used = vec![false; g.num_nodes];
    for &(a, b) in &g.edges {
        used[a] = true;
        used[b] = true;
    }
    let mut remap = vec![usize::MAX; g.num_nodes];
    let mut next = 0;
    for (old, _) in used.iter().enumerate().filter(|(_, u)| **u) {
        remap[old] = next;
        next += 1;
    }
    let mut edges: Vec<(usize, usize)> = g
        .edges
        .iter()
        .map(|&(a, b)| (remap[a.min(b)], remap[a.max(b)]))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    Ok(DagSpec {
        hidden_dim: 0,
        nodes: (0..next).map(NodeSpec::bare).collect(),
        edges,
        roles: Vec::new(),
    })
}

/// Sinks become targets, in-degree-zero nodes roots, the rest features.
pub fn classify_nodes(mut dag: DagSpec) -> DagSpec {
    let indeg = dag.in_degrees();
    let outdeg = dag.out_degrees();
    dag.roles = (0..dag.len()).map(|i| expected_role(indeg[i], outdeg[i])).collect();
    dag
}

/// Samples a classified DAG, resampling with the next sub-seed whenever the
/// pruned graph has fewer than 3 nodes or no sink with a parent.
pub fn sample_dag(params: &GraphParams, master_seed: u64, run_tag: &str) -> Result<DagSpec> {
    for attempt in 0..params.max_attempts {
        let mut rng = substream(master_seed, run_tag, attempt as u64);
        let num_nodes = rng.random_range(params.min_nodes..=params.max_nodes);
        let g = sample_ba_graph(num_nodes, params.attach_m, &mut rng)?;
        let dag = match orient_and_prune(&g) {
            Ok(d) => classify_nodes(d),
            Err(Error::DegenerateGraph(_)) => continue,
            Err(e) => return Err(e),
        };
        let indeg = dag.in_degrees();
        let has_reachable_sink = dag.targets().iter().any(|&t| indeg[t] > 0);
        if dag.len() >= 3 && has_reachable_sink {
            return Ok(dag);
        }
    }
    Err(Error::DegenerateGraph(format!(
        "no usable graph after {} attempts",
        params.max_attempts
    )))
}

/// `max(2, round(Normal(mean, std)))`.
pub fn sample_category_count<R: Rng + ?Sized>(dist: &CountDistribution, rng: &mut R) -> Result<usize> {
    let normal = Normal::new(dist.mean, dist.std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(clamp_category_count(normal.sample(rng)))
}

pub fn clamp_category_count(raw: f64) -> usize {
    let r = raw.round();
    if r.is_nan() || r < 2.0 {
        2
    } else {
        r as usize
    }
}

fn uniform_in<R: Rng + ?Sized>([lo, hi]: [f64; 2], rng: &mut R) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn sample_root_distribution<R: Rng + ?Sized>(fam: &RootFamilyConfig, rng: &mut R) -> RootDistribution {
    let total = fam.normal_weight + fam.gamma_weight + fam.mixture_weight;
    let u = rng.random::<f64>() * total;
    if u < fam.normal_weight {
        RootDistribution::Normal {
            mean: uniform_in(fam.normal_mean, rng),
            std: uniform_in(fam.normal_std, rng),
        }
    } else if u < fam.normal_weight + fam.gamma_weight {
        RootDistribution::Gamma {
            shape: uniform_in(fam.gamma_shape, rng),
            scale: uniform_in(fam.gamma_scale, rng),
        }
    } else {
        RootDistribution::PerComponentMixture {
            p: uniform_in(fam.mixture_p, rng),
            normal_std: uniform_in(fam.mixture_normal_std, rng),
            exp_scale: uniform_in(fam.mixture_exp_scale, rng),
        }
    }
}

/// Draws root distributions, activations with freshly initialized weights,
/// pooling functions and category counts. Nodes are renamed
/// `{name_prefix}{index}`.
pub fn assign_node_configs<R: Rng + ?Sized>(
    mut dag: DagSpec,
    cfg: &GenerationConfig,
    name_prefix: &str,
    rng: &mut R,
) -> Result<DagSpec> {
    if cfg.activations.is_empty() {
        return Err(Error::config("activations", "must not be empty"));
    }
    if cfg.poolings.is_empty() {
        return Err(Error::config("poolings", "must not be empty"));
    }
    if dag.roles.len() != dag.len() {
        dag = classify_nodes(dag);
    }
    let n = cfg.hidden_dim;
    dag.hidden_dim = n;
    let parents = dag.parent_lists();
    for (i, node) in dag.nodes.iter_mut().enumerate() {
        node.name = format!("{name_prefix}{i}");
        if parents[i].is_empty() {
            node.root_dist = Some(sample_root_distribution(&cfg.root_distributions, rng));
            node.propagation = None;
        } else {
            let act = *cfg.activations.choose(rng).expect("non-empty");
            node.root_dist = None;
            node.propagation = Some(init_propagation_fn(parents[i].len(), n, act, rng)?);
        }
        if rng.random::<f64>() < cfg.categorical_probability {
            node.pooling = PoolingSpec {
                kind: PoolingKind::Categorical,
            };
            node.category_count = Some(sample_category_count(&cfg.category_count, rng)?);
        } else {
            node.pooling = PoolingSpec {
                kind: *cfg.poolings.choose(rng).expect("non-empty"),
            };
            node.category_count = None;
        }
    }
    Ok(dag)
}
